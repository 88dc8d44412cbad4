//! Error statistics in physical units, inference latency, and the report
//! table/CSV.

use std::fmt::Write as _;
use std::time::Instant;

use thiserror::Error;

use crate::dataset::WindowSet;
use crate::models::{Checkpoint, ModelError};
use crate::pendulum::Trajectory;
use crate::spectral::RippleEstimate;
use crate::train::strided;

pub const CSV_HEADER: &str = "model,rmse_nm,variance_nm2,cycle_us_mean,cycle_us_p99,layers,history";
pub const BENCH_WARMUP: usize = 200;
pub const MIN_BENCH_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no windows to evaluate")]
    Empty,
    #[error("benchmark needs at least {MIN_BENCH_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Prediction error statistics, Nm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub rmse: f64,
    /// population variance of the error, Nm²
    pub variance: f64,
    pub n: usize,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Option<Self> {
        if errors.is_empty() {
            return None;
        }
        let n = errors.len() as f64;
        let mse = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let mean = errors.iter().sum::<f64>() / n;
        let variance = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        Some(Self {
            rmse: mse.sqrt(),
            variance,
            n: errors.len(),
        })
    }

    /// Square root of the variance, Nm.
    pub fn error_std(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Applies `predict(index, window)` (normalised in, normalised out) to the
/// listed windows and reports errors after denormalising.
pub fn error_stats(
    windows: &WindowSet,
    indices: &[usize],
    mut predict: impl FnMut(usize, &[f64]) -> Result<f64, ModelError>,
) -> Result<ErrorStats, EvalError> {
    let torque = windows.normalization().torque;
    let mut buf = vec![0.0; windows.channels() * windows.history()];
    let mut errors = Vec::with_capacity(indices.len());
    for &i in indices {
        windows.write_input(i, &mut buf);
        let pred = torque.denormalize(predict(i, &buf)?);
        errors.push(pred - torque.denormalize(windows.target(i)));
    }
    ErrorStats::from_errors(&errors).ok_or(EvalError::Empty)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    pub mean_us: f64,
    pub p99_us: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub layers: usize,
    pub history: usize,
    pub stats: ErrorStats,
    pub latency: Option<Latency>,
    pub ripple: Option<RippleEstimate>,
}

fn checked(checkpoint: &Checkpoint, windows: &WindowSet) -> Result<(), EvalError> {
    checkpoint.expect_mode(windows.mode())?;
    let spec = checkpoint.model.spec();
    if windows.history() != spec.history {
        return Err(ModelError::ShapeInconsistent(format!(
            "checkpoint history {} but windows have {}",
            spec.history,
            windows.history()
        ))
        .into());
    }
    if windows.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Errors over at most `max_windows` evenly strided windows.
///
/// `windows` must have been built with the checkpoint's normalisation.
pub fn evaluate(
    checkpoint: &Checkpoint,
    windows: &WindowSet,
    max_windows: Option<usize>,
) -> Result<EvalReport, EvalError> {
    checked(checkpoint, windows)?;
    let indices = strided(windows.len(), max_windows);
    let mut predictor = checkpoint.model.predictor();
    let stats = error_stats(windows, &indices, |_, w| predictor.predict(w))?;
    let spec = checkpoint.model.spec();
    Ok(EvalReport {
        model: checkpoint.name.clone(),
        layers: spec.layers,
        history: spec.history,
        stats,
        latency: None,
        ripple: None,
    })
}

/// Wall-clock time of single-window forward passes over `n` windows taken
/// evenly from `windows`, after a short warm-up. Single-threaded.
pub fn latency_bench(checkpoint: &Checkpoint, windows: &WindowSet, n: usize) -> Result<Latency, EvalError> {
    if n < MIN_BENCH_SAMPLES {
        return Err(EvalError::TooFewSamples(n));
    }
    checked(checkpoint, windows)?;
    let len = windows.channels() * windows.history();
    let inputs: Vec<f64> = (0..n).flat_map(|k| windows.input(k * windows.len() / n)).collect();
    let mut predictor = checkpoint.model.predictor();
    let mut sink = 0.0;
    for w in inputs.chunks(len).take(BENCH_WARMUP) {
        sink += predictor.predict(w)?;
    }
    let mut times = Vec::with_capacity(n);
    for w in inputs.chunks(len) {
        let start = Instant::now();
        sink += predictor.predict(w)?;
        times.push(start.elapsed().as_secs_f64() * 1e6);
    }
    std::hint::black_box(sink);
    Ok(latency_from(&mut times))
}

fn latency_from(times: &mut [f64]) -> Latency {
    times.sort_by(f64::total_cmp);
    let mean_us = times.iter().sum::<f64>() / times.len() as f64;
    let rank = ((0.99 * times.len() as f64).ceil() as usize).clamp(1, times.len());
    Latency {
        mean_us,
        p99_us: times[rank - 1],
        samples: times.len(),
    }
}

/// Predicted and true torque (Nm) at every sample of `trajectory` that has a
/// full window behind it.
pub fn predict_series(checkpoint: &Checkpoint, trajectory: &Trajectory) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    let spec = checkpoint.model.spec();
    let windows = WindowSet::new(
        &[trajectory],
        &checkpoint.normalization,
        spec.history,
        spec.input_mode(),
    )
    .map_err(|e| ModelError::ShapeInconsistent(e.to_string()))?;
    let torque = checkpoint.normalization.torque;
    let mut predictor = checkpoint.model.predictor();
    let mut buf = vec![0.0; spec.window_len()];
    let mut pred = Vec::with_capacity(windows.len());
    let mut truth = Vec::with_capacity(windows.len());
    for i in 0..windows.len() {
        windows.write_input(i, &mut buf);
        pred.push(torque.denormalize(predictor.predict(&buf)?));
        truth.push(torque.denormalize(windows.target(i)));
    }
    Ok((pred, truth))
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let (mean, p99) = self.latency.map_or((String::new(), String::new()), |l| {
            (format!("{:.4}", l.mean_us), format!("{:.4}", l.p99_us))
        });
        format!(
            "{},{:.6},{:.6},{},{},{},{}",
            self.model, self.stats.rmse, self.stats.variance, mean, p99, self.layers, self.history
        )
    }
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Fixed-width table for terminals, one column per model.
pub fn reports_table(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    let _ = write!(s, "{:<22}", "metric");
    for r in reports {
        let _ = write!(s, "{:>14}", r.model);
    }
    s.push('\n');
    let rows: [(&str, Box<dyn Fn(&EvalReport) -> String>); 8] = [
        ("rmse (Nm)", Box::new(|r| cell(Some(r.stats.rmse)))),
        ("variance (Nm^2)", Box::new(|r| cell(Some(r.stats.variance)))),
        ("error std (Nm)", Box::new(|r| cell(Some(r.stats.error_std())))),
        ("cycle mean (us)", Box::new(|r| cell(r.latency.map(|l| l.mean_us)))),
        ("cycle p99 (us)", Box::new(|r| cell(r.latency.map(|l| l.p99_us)))),
        ("layers", Box::new(|r| r.layers.to_string())),
        ("history", Box::new(|r| r.history.to_string())),
        ("samples", Box::new(|r| r.stats.n.to_string())),
    ];
    for (label, f) in rows.iter() {
        let _ = write!(s, "{label:<22}");
        for r in reports {
            let _ = write!(s, "{:>14}", f(r));
        }
        s.push('\n');
    }
    if reports.iter().any(|r| r.ripple.is_some()) {
        let _ = write!(s, "{:<22}", "ripple phase (deg)");
        for r in reports {
            let _ = write!(s, "{:>14}", cell(r.ripple.map(|x| x.phase_shift_deg)));
        }
        s.push('\n');
        let _ = write!(s, "{:<22}", "ripple amp err (Nm)");
        for r in reports {
            let _ = write!(s, "{:>14}", cell(r.ripple.map(|x| x.amp_error)));
        }
        s.push('\n');
    }
    s
}
