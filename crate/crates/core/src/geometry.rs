//! Cycloidal reducer geometry.
//!
//! Lengths are millimetres and torques newton-metres throughout. The disk
//! profile is the pin-offset epitrochoid
//!
//! ```text
//! x(t) =  Zr cos t - Ze cos(Znp t)
//! y(t) = -Zr sin t + Ze sin(Znp t)
//! ```
//!
//! offset inward along the curve normal by half the outer pin diameter.
//!
//! The published transmission-ratio formula prints `-Znp / (Znp - Znt)` but
//! equates it to `-Znt`. Only the `-Znt / (Znp - Znt)` numerator is consistent
//! with that result and with a 10:1 reducer built from 10 teeth and 11 pins,
//! so that is the form implemented here.

use std::f64::consts::TAU;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("outer pin count {pins} must equal tooth count {teeth} + 1")]
    PinCountMismatch { teeth: u32, pins: u32 },
    #[error("degenerate gear: pin count equals tooth count ({0})")]
    DegenerateRatio(u32),
    #[error("eccentricity {eccentricity} mm must be below pitch radius / pins = {limit} mm")]
    Cusp { eccentricity: f64, limit: f64 },
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("pin offset {offset} mm swallows the profile (minimum base radius {min_radius} mm)")]
    OffsetTooLarge { offset: f64, min_radius: f64 },
    #[error("profile needs at least 64 samples, got {0}")]
    TooFewSamples(usize),
    #[error("counter-disk rule needs a ratio magnitude of at least 4, got {0}")]
    RatioTooSmall(u32),
}

/// Geometry of a single-stage cycloidal reducer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GearParams {
    /// Zr
    pub pitch_radius: f64,
    /// Ze
    pub eccentricity: f64,
    /// Zp
    pub outer_pin_diameter: f64,
    /// Zo
    pub output_pin_diameter: f64,
    /// Znt
    pub num_teeth: u32,
    /// Znp
    pub num_outer_pins: u32,
    pub output_pin_circle_radius: f64,
    pub num_output_pins: u32,
}

impl Default for GearParams {
    /// 10:1 reducer with the output pins on a 19.5 mm circle. The output pin
    /// count of 5 is inferred from the stated 295.65 Nm total at 59.13 Nm per pin.
    fn default() -> Self {
        Self {
            pitch_radius: 30.0,
            eccentricity: 1.0,
            outer_pin_diameter: 5.0,
            output_pin_diameter: 6.0,
            num_teeth: 10,
            num_outer_pins: 11,
            output_pin_circle_radius: 19.5,
            num_output_pins: 5,
        }
    }
}

impl GearParams {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let positive = |v: f64, name| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(GeometryError::NonPositive(name))
            }
        };
        positive(self.pitch_radius, "pitch radius")?;
        positive(self.outer_pin_diameter, "outer pin diameter")?;
        positive(self.output_pin_diameter, "output pin diameter")?;
        positive(self.output_pin_circle_radius, "output pin circle radius")?;
        if self.num_teeth == 0 {
            return Err(GeometryError::NonPositive("tooth count"));
        }
        if self.num_output_pins == 0 {
            return Err(GeometryError::NonPositive("output pin count"));
        }
        if self.num_outer_pins == self.num_teeth {
            return Err(GeometryError::DegenerateRatio(self.num_teeth));
        }
        if self.num_outer_pins != self.num_teeth + 1 {
            return Err(GeometryError::PinCountMismatch {
                teeth: self.num_teeth,
                pins: self.num_outer_pins,
            });
        }
        if !self.eccentricity.is_finite() || self.eccentricity < 0.0 {
            return Err(GeometryError::NonPositive("eccentricity"));
        }
        let limit = self.pitch_radius / f64::from(self.num_outer_pins);
        if self.eccentricity >= limit {
            return Err(GeometryError::Cusp {
                eccentricity: self.eccentricity,
                limit,
            });
        }
        let min_radius = self.pitch_radius - self.eccentricity;
        let offset = self.outer_pin_diameter / 2.0;
        if offset >= min_radius {
            return Err(GeometryError::OffsetTooLarge { offset, min_radius });
        }
        Ok(())
    }

    /// Non-fatal remarks about an otherwise valid parameter set.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.eccentricity == 0.0 {
            out.push(format!(
                "zero eccentricity: profile degenerates to a circle of radius {} mm",
                self.pitch_radius - self.outer_pin_diameter / 2.0
            ));
        }
        out
    }

    /// Signed ratio; negative means the output counter-rotates.
    pub fn transmission_ratio(&self) -> i64 {
        -i64::from(self.num_teeth)
    }

    pub fn counter_disks(&self) -> Result<u32, GeometryError> {
        counter_disk_count(self.num_teeth)
    }

    pub fn output_torque_capacity(&self, per_pin_torque: f64) -> Result<f64, GeometryError> {
        output_pin_capacity(per_pin_torque, self.num_output_pins)
    }
}

/// `-teeth / (pins - teeth)`.
pub fn transmission_ratio(num_teeth: u32, num_outer_pins: u32) -> Result<f64, GeometryError> {
    if num_outer_pins == num_teeth {
        return Err(GeometryError::DegenerateRatio(num_teeth));
    }
    let diff = f64::from(num_outer_pins) - f64::from(num_teeth);
    Ok(-f64::from(num_teeth) / diff)
}

/// Number of counterbalance disks: two for an even ratio, three for an odd one.
pub fn counter_disk_count(ratio_magnitude: u32) -> Result<u32, GeometryError> {
    if ratio_magnitude < 4 {
        return Err(GeometryError::RatioTooSmall(ratio_magnitude));
    }
    Ok(if ratio_magnitude % 2 == 0 { 2 } else { 3 })
}

/// Torque the output pins carry together when each pin is rated at `per_pin_torque`.
pub fn output_pin_capacity(per_pin_torque: f64, num_output_pins: u32) -> Result<f64, GeometryError> {
    if !(per_pin_torque.is_finite() && per_pin_torque > 0.0) {
        return Err(GeometryError::NonPositive("per-pin torque"));
    }
    if num_output_pins == 0 {
        return Err(GeometryError::NonPositive("output pin count"));
    }
    Ok(per_pin_torque * f64::from(num_output_pins))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePolyline {
    pub points: Vec<[f64; 2]>,
    pub closed: bool,
}

impl ProfilePolyline {
    /// Shoelace area; positive for counter-clockwise winding.
    pub fn signed_area(&self) -> f64 {
        let n = self.points.len();
        let mut acc = 0.0;
        for i in 0..n {
            let [x0, y0] = self.points[i];
            let [x1, y1] = self.points[(i + 1) % n];
            acc += x0 * y1 - x1 * y0;
        }
        acc / 2.0
    }

    pub fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|[x, y]| x.hypot(*y))
    }

    /// Local maxima of the radius, treating the outline as cyclic. A circle
    /// (radius constant to rounding) has none.
    pub fn lobe_count(&self) -> usize {
        let mut r: Vec<f64> = self.radii().collect();
        if self.closed {
            r.pop();
        }
        let n = r.len();
        let (lo, hi) = r
            .iter()
            .fold((f64::MAX, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if n < 3 || hi - lo <= 1e-9 * hi {
            return 0;
        }
        (0..n)
            .filter(|&i| {
                let prev = r[(i + n - 1) % n];
                let next = r[(i + 1) % n];
                r[i] > prev && r[i] >= next
            })
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_mm,y_mm\n");
        for [x, y] in &self.points {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let extent = self.radii().fold(0.0_f64, f64::max).max(1.0) * 1.1;
        let mut d = String::new();
        for (i, [x, y]) in self.points.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            // SVG y axis points down
            d.push_str(&format!("{cmd}{x:.6},{:.6} ", -y));
        }
        if self.closed {
            d.push('Z');
        }
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{:.6} {:.6} {:.6} {:.6}\">\n\
             <path d=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"0.1\"/>\n</svg>\n",
            -extent,
            -extent,
            2.0 * extent,
            2.0 * extent,
            d.trim_end()
        )
    }
}

/// Point on the pin-offset disk profile at curve parameter `t`.
fn profile_point(g: &GearParams, t: f64) -> [f64; 2] {
    let r = g.pitch_radius;
    let e = g.eccentricity;
    let n = f64::from(g.num_outer_pins);
    let x = r * t.cos() - e * (n * t).cos();
    let y = -r * t.sin() + e * (n * t).sin();
    let dx = -r * t.sin() + e * n * (n * t).sin();
    let dy = -r * t.cos() + e * n * (n * t).cos();
    let norm = dx.hypot(dy);
    // The base curve runs clockwise, so the inward normal is the tangent turned right.
    let offset = g.outer_pin_diameter / 2.0;
    [x + offset * dy / norm, y - offset * dx / norm]
}

/// Samples the disk outline at `samples` evenly spaced curve parameters and
/// closes it. Points wind counter-clockwise.
pub fn generate_profile(g: &GearParams, samples: usize) -> Result<ProfilePolyline, GeometryError> {
    g.validate()?;
    if samples < 64 {
        return Err(GeometryError::TooFewSamples(samples));
    }
    let mut points: Vec<[f64; 2]> = (0..samples)
        .map(|k| profile_point(g, TAU * k as f64 / samples as f64))
        .collect();
    points.reverse();
    points.push(points[0]);
    Ok(ProfilePolyline { points, closed: true })
}
