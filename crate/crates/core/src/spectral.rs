//! Band-limited ripple comparison between a predicted and a true torque
//! series: Welch-averaged Hann spectra over 10–40 Hz.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

pub const SEGMENT_LEN: usize = 1024;
pub const MIN_LEN: usize = 512;
pub const BAND_HZ: (f64, f64) = (10.0, 40.0);
/// Bins either side of a peak that count towards its energy.
const PEAK_HALF_WIDTH: usize = 3;
/// A peak must carry this many times the band's median bin power.
const DETECTION_RATIO: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("series too short: {0} samples, need at least {MIN_LEN}")]
    TooShort(usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("sample rate must be positive and finite")]
    BadSampleRate,
    #[error("no ripple detected in the {} to {} Hz band", BAND_HZ.0, BAND_HZ.1)]
    NoRipple,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RippleEstimate {
    /// Dominant in-band frequency of the prediction.
    pub freq_est: f64,
    pub truth_freq: f64,
    pub pred_amplitude: f64,
    pub truth_amplitude: f64,
    /// |truth amplitude − predicted amplitude|, Nm.
    pub amp_error: f64,
    /// Magnitude of the cross-spectrum phase at the truth peak, in [0, 180].
    pub phase_shift_deg: f64,
    pub pred_detected: bool,
}

struct Spectrum {
    /// averaged one-sided bin power |X_k|²
    power: Vec<f64>,
    /// per-segment spectra, kept for the cross-spectrum
    segments: Vec<Vec<Complex64>>,
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn spectrum(x: &[f64], seg: usize, window: &[f64], planner: &mut FftPlanner<f64>) -> Spectrum {
    let fft = planner.plan_fft_forward(seg);
    let hop = seg / 2;
    let mut segments = Vec::new();
    let mut start = 0;
    while start + seg <= x.len() {
        let chunk = &x[start..start + seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        let mut buf: Vec<Complex64> = chunk
            .iter()
            .zip(window)
            .map(|(v, w)| Complex64::new((v - mean) * w, 0.0))
            .collect();
        fft.process(&mut buf);
        buf.truncate(seg / 2 + 1);
        segments.push(buf);
        start += hop;
    }
    let mut power = vec![0.0; seg / 2 + 1];
    for s in &segments {
        for (p, c) in power.iter_mut().zip(s) {
            *p += c.norm_sqr();
        }
    }
    let k = segments.len() as f64;
    power.iter_mut().for_each(|p| *p /= k);
    Spectrum { power, segments }
}

struct Peak {
    bin: usize,
    freq: f64,
    amplitude: f64,
    prominent: bool,
}

fn find_peak(power: &[f64], band: (usize, usize), seg: usize, window_energy: f64, fs: f64) -> Peak {
    let (lo, hi) = band;
    let bin = (lo..=hi)
        .max_by(|a, b| power[*a].total_cmp(&power[*b]))
        .expect("non-empty band");
    let from = bin.saturating_sub(PEAK_HALF_WIDTH);
    let to = (bin + PEAK_HALF_WIDTH).min(power.len() - 1);
    let energy: f64 = power[from..=to].iter().sum();
    let centroid = (from..=to).map(|k| k as f64 * power[k]).sum::<f64>() / energy;
    let mut band_power: Vec<f64> = power[lo..=hi].to_vec();
    band_power.sort_by(f64::total_cmp);
    let median = band_power[band_power.len() / 2];
    Peak {
        bin,
        freq: centroid * fs / seg as f64,
        // one-sided energy of a sinusoid of amplitude A is A² · N · Σw² / 4
        amplitude: (4.0 * energy / (seg as f64 * window_energy)).sqrt(),
        prominent: power[bin] > DETECTION_RATIO * median && energy > 0.0,
    }
}

/// Compares the dominant in-band ripple of `pred` against `truth`.
///
/// Frequency is the power centroid around each series' own peak, amplitude is
/// recovered from the peak's energy, and the phase comes from the averaged
/// cross-spectrum at the truth peak bin.
pub fn ripple_analysis(pred: &[f64], truth: &[f64], sample_rate: f64) -> Result<RippleEstimate, SpectralError> {
    if pred.len() != truth.len() {
        return Err(SpectralError::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.len() < MIN_LEN {
        return Err(SpectralError::TooShort(truth.len()));
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(SpectralError::BadSampleRate);
    }
    let seg = truth.len().min(SEGMENT_LEN);
    let window = hann(seg);
    let window_energy: f64 = window.iter().map(|w| w * w).sum();
    let mut planner = FftPlanner::new();
    let st = spectrum(truth, seg, &window, &mut planner);
    let sp = spectrum(pred, seg, &window, &mut planner);

    let nyquist_bin = seg / 2;
    let lo = ((BAND_HZ.0 * seg as f64 / sample_rate).ceil() as usize).min(nyquist_bin);
    let hi = ((BAND_HZ.1 * seg as f64 / sample_rate).floor() as usize).min(nyquist_bin);
    if lo >= hi {
        return Err(SpectralError::BadSampleRate);
    }
    let tp = find_peak(&st.power, (lo, hi), seg, window_energy, sample_rate);
    if !tp.prominent {
        return Err(SpectralError::NoRipple);
    }
    let pp = find_peak(&sp.power, (lo, hi), seg, window_energy, sample_rate);

    let cross: Complex64 = sp
        .segments
        .iter()
        .zip(&st.segments)
        .map(|(p, t)| p[tp.bin] * t[tp.bin].conj())
        .sum();
    let phase_shift_deg = cross.arg().to_degrees().abs();

    Ok(RippleEstimate {
        freq_est: pp.freq,
        truth_freq: tp.freq,
        pred_amplitude: pp.amplitude,
        truth_amplitude: tp.amplitude,
        amp_error: (tp.amplitude - pp.amplitude).abs(),
        phase_shift_deg,
        pred_detected: pp.prominent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize, amp: f64, freq: f64, phase: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / 200.0 + phase).sin())
            .collect()
    }

    #[test]
    fn identical_series() {
        let x = tone(4000, 0.6, 17.2, 0.0);
        let r = ripple_analysis(&x, &x, 200.0).unwrap();
        assert!((r.freq_est - 17.2).abs() < 0.2, "{r:?}");
        assert!(r.amp_error < 1e-12);
        assert!(r.phase_shift_deg < 1e-9);
        assert!((r.truth_amplitude - 0.6).abs() < 0.02, "{r:?}");
    }

    #[test]
    fn half_period_delay_is_180_degrees() {
        let truth = tone(4000, 0.6, 17.2, 0.0);
        let pred = tone(4000, 0.6, 17.2, PI);
        let r = ripple_analysis(&pred, &truth, 200.0).unwrap();
        assert!((r.phase_shift_deg - 180.0).abs() < 2.0, "{r:?}");
    }

    #[test]
    fn detuned_weaker_prediction() {
        let truth = tone(4000, 0.6, 17.2, 0.0);
        let pred = tone(4000, 0.37, 17.6, 0.4);
        let r = ripple_analysis(&pred, &truth, 200.0).unwrap();
        assert!((r.amp_error - 0.23).abs() < 0.02, "{r:?}");
        assert!((r.freq_est - 17.6).abs() < 0.2, "{r:?}");
    }

    #[test]
    fn rejects_short_and_flat() {
        let x = tone(400, 0.6, 17.2, 0.0);
        assert_eq!(ripple_analysis(&x, &x, 200.0), Err(SpectralError::TooShort(400)));
        let flat = vec![1.0; 2048];
        assert_eq!(ripple_analysis(&flat, &flat, 200.0), Err(SpectralError::NoRipple));
        let a = vec![0.0; 600];
        assert!(matches!(
            ripple_analysis(&a, &x, 200.0),
            Err(SpectralError::LengthMismatch(600, 400))
        ));
    }
}
