//! Pendulum test rig driven by the simulated actuator.
//!
//! The plant is a bar with a point mass on the actuator output:
//!
//! ```text
//! I_p q̈ = τ_q − m_p g r_p sin(q) + τ_wall,   I_p = m_p r_p² + I_bar
//! ```
//!
//! with `q` measured from the downward rest position, so gravity restores.
//! Past `wall_angle` a compliant wall pushes back with
//! `τ_wall = −K_w (q − wall_angle) − D_w q̇`, clipped so it never pulls.
//!
//! The physics runs at 2 kHz and is logged at 200 Hz. Logged acceleration is
//! the differentiated velocity plus white noise, through a first-order
//! low-pass, the way a real rig derives it from encoder data.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::actuator::{self, ActuatorConfig, ActuatorError, ActuatorState, PdGains};
use crate::kv::format_f64;
use crate::seed;

pub const SAMPLE_RATE: f64 = 200.0;
pub const CSV_HEADER: &str = "t,q_ref,q,qd,qdd,tau";

#[derive(Debug, Error)]
pub enum PendulumError {
    #[error(transparent)]
    Actuator(#[from] ActuatorError),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("trajectory csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("trajectory invalid: {0}")]
    InvalidTrajectory(String),
}

/// Sampling ranges for generated scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioRanges {
    pub ref_frequency: (f64, f64),
    pub ref_amplitude: (f64, f64),
    pub initial_position: (f64, f64),
    pub pendulum_masses: [f64; 2],
    pub mass_location: (f64, f64),
}

impl Default for ScenarioRanges {
    fn default() -> Self {
        Self {
            ref_frequency: (0.3, 1.5),
            ref_amplitude: (0.5, 1.5),
            initial_position: (0.0, 1.0),
            pendulum_masses: [1.14, 2.28],
            mass_location: (0.25, 0.6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumScenario {
    pub ref_frequency: f64,
    pub ref_amplitude: f64,
    pub initial_position: f64,
    pub pendulum_mass: f64,
    pub mass_location: f64,
    pub duration: f64,
    pub wall_angle: f64,
    pub seed: u64,
}

impl PendulumScenario {
    pub fn validate(&self) -> Result<(), PendulumError> {
        let values = [
            self.ref_frequency,
            self.ref_amplitude,
            self.initial_position,
            self.pendulum_mass,
            self.mass_location,
            self.duration,
        ];
        // An infinite wall angle means no wall.
        if values.iter().any(|v| !v.is_finite()) || self.wall_angle.is_nan() {
            return Err(PendulumError::InvalidScenario("non-finite field".into()));
        }
        if self.pendulum_mass <= 0.0 || self.mass_location <= 0.0 {
            return Err(PendulumError::InvalidScenario(
                "mass and mass location must be positive".into(),
            ));
        }
        if self.duration * SAMPLE_RATE < 1.0 {
            return Err(PendulumError::InvalidScenario(
                "duration shorter than one sample".into(),
            ));
        }
        if self.ref_frequency < 0.0 || self.ref_amplitude < 0.0 {
            return Err(PendulumError::InvalidScenario(
                "reference frequency and amplitude must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Fields outside the sampling ranges. Hand-written scenarios may do this.
    pub fn range_warnings(&self, ranges: &ScenarioRanges) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if v < lo || v > hi {
                out.push(format!("{name} = {v} outside [{lo}, {hi}]"));
            }
        };
        check("ref_frequency", self.ref_frequency, ranges.ref_frequency);
        check("ref_amplitude", self.ref_amplitude, ranges.ref_amplitude);
        check("initial_position", self.initial_position, ranges.initial_position);
        check("mass_location", self.mass_location, ranges.mass_location);
        if !ranges.pendulum_masses.contains(&self.pendulum_mass) {
            out.push(format!(
                "pendulum_mass = {} not in {:?}",
                self.pendulum_mass, ranges.pendulum_masses
            ));
        }
        out
    }

    pub fn reference(&self, t: f64) -> f64 {
        self.initial_position + self.ref_amplitude * (TAU * self.ref_frequency * t).sin()
    }

    pub fn num_samples(&self) -> usize {
        (self.duration * SAMPLE_RATE).round() as usize
    }
}

/// Rig constants not drawn per scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigParams {
    pub bar_inertia: f64,
    pub wall_stiffness: f64,
    pub wall_damping: f64,
    pub gravity: f64,
    /// Std of the white noise added to the differentiated velocity, rad/s².
    pub accel_noise_std: f64,
    pub accel_filter_hz: f64,
    pub internal_rate: f64,
    pub scenario_duration: f64,
    pub wall_angle: f64,
}

impl Default for RigParams {
    fn default() -> Self {
        Self {
            bar_inertia: 0.02,
            wall_stiffness: 500.0,
            wall_damping: 5.0,
            gravity: 9.81,
            accel_noise_std: 0.5,
            accel_filter_hz: 50.0,
            internal_rate: 2000.0,
            scenario_duration: 20.0,
            wall_angle: 1.4,
        }
    }
}

impl RigParams {
    fn substeps(&self) -> usize {
        (self.internal_rate / SAMPLE_RATE).round() as usize
    }
}

/// Torque the wall exerts on the pendulum. Zero whenever `q <= wall_angle`.
pub fn wall_torque(rig: &RigParams, wall_angle: f64, q: f64, qd: f64) -> f64 {
    if q <= wall_angle {
        return 0.0;
    }
    (-rig.wall_stiffness * (q - wall_angle) - rig.wall_damping * qd).min(0.0)
}

/// Draws `n` scenarios uniformly from `ranges`; masses uniformly from the pair.
pub fn sample_scenarios(n: usize, seed: u64, ranges: &ScenarioRanges, rig: &RigParams) -> Vec<PendulumScenario> {
    let mut rng = seed::fork(seed, "scenarios");
    let mut uniform = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let ref_frequency = uniform(ranges.ref_frequency);
        let ref_amplitude = uniform(ranges.ref_amplitude);
        let initial_position = uniform(ranges.initial_position);
        let mass_location = uniform(ranges.mass_location);
        let heavy = uniform((0.0, 1.0)) < 0.5;
        out.push(PendulumScenario {
            ref_frequency,
            ref_amplitude,
            initial_position,
            pendulum_mass: ranges.pendulum_masses[usize::from(heavy)],
            mass_location,
            duration: rig.scenario_duration,
            wall_angle: rig.wall_angle,
            seed: seed::fork_seed(seed, &format!("scenario-{i}")),
        });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    pub q_ref: f64,
    pub q: f64,
    pub qd: f64,
    pub qdd: f64,
    pub tau: f64,
}

impl Record {
    fn values(&self) -> [f64; 6] {
        [self.t, self.q_ref, self.q, self.qd, self.qdd, self.tau]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub sample_rate: f64,
    pub records: Vec<Record>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<(), PendulumError> {
        let spacing = 1.0 / self.sample_rate;
        for (i, r) in self.records.iter().enumerate() {
            if r.values().iter().any(|v| !v.is_finite()) {
                return Err(PendulumError::InvalidTrajectory(format!(
                    "non-finite value in record {i}"
                )));
            }
            if i > 0 {
                let dt = r.t - self.records[i - 1].t;
                if (dt - spacing).abs() > 1e-9 {
                    return Err(PendulumError::InvalidTrajectory(format!(
                        "record {i}: spacing {dt} s, expected {spacing} s"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 140);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let row: Vec<String> = r.values().iter().map(|v| format_f64(*v)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, PendulumError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == CSV_HEADER => {}
            _ => {
                return Err(PendulumError::Csv {
                    line: 1,
                    message: format!("expected header `{CSV_HEADER}`"),
                })
            }
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| PendulumError::Csv { line: i + 2, message };
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f64::from_str(f.trim()))
                .collect::<Result<_, _>>()
                .map_err(|e| err(e.to_string()))?;
            if fields.len() != 6 {
                return Err(err(format!("expected 6 fields, got {}", fields.len())));
            }
            records.push(Record {
                t: fields[0],
                q_ref: fields[1],
                q: fields[2],
                qd: fields[3],
                qdd: fields[4],
                tau: fields[5],
            });
        }
        let traj = Trajectory {
            sample_rate: SAMPLE_RATE,
            records,
        };
        traj.validate()?;
        Ok(traj)
    }
}

impl fmt::Display for PendulumScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "f_q={:.3} Hz A_q={:.3} rad q0={:.3} rad m_p={} kg r_p={:.3} m",
            self.ref_frequency, self.ref_amplitude, self.initial_position, self.pendulum_mass, self.mass_location
        )
    }
}

/// Pendulum plant on the actuator, integrated at the rig's internal rate.
pub struct Rig<'a> {
    pub actuator: &'a ActuatorConfig,
    pub params: &'a RigParams,
    pub mass: f64,
    pub location: f64,
    pub wall_angle: f64,
}

impl Rig<'_> {
    pub fn inertia(&self) -> f64 {
        self.mass * self.location * self.location + self.params.bar_inertia
    }

    /// Gravity plus wall torque on the output.
    pub fn load_torque(&self, q: f64, qd: f64) -> f64 {
        -self.mass * self.params.gravity * self.location * q.sin() + wall_torque(self.params, self.wall_angle, q, qd)
    }

    /// Pendulum energy with the drivetrain inertia lumped in.
    pub fn energy(&self, q: f64, qd: f64) -> f64 {
        let inertia = self.inertia() + self.actuator.rotor_inertia_reflected + self.actuator.output_inertia;
        0.5 * inertia * qd * qd + self.mass * self.params.gravity * self.location * (1.0 - q.cos())
    }

    /// Runs from rest at `q0`. With `gains == None` the actuator is unpowered.
    pub fn simulate(
        &self,
        gains: Option<&PdGains>,
        reference: impl Fn(f64) -> f64,
        q0: f64,
        num_samples: usize,
        noise_seed: u64,
    ) -> Result<Trajectory, PendulumError> {
        let substeps = self.params.substeps();
        let dt = 1.0 / self.params.internal_rate;
        let load_inertia = self.inertia();
        let mut rng = seed::fork(noise_seed, "accel-noise");
        let noise = (self.params.accel_noise_std > 0.0)
            .then(|| Normal::new(0.0, self.params.accel_noise_std).expect("positive std"));
        let rc = 1.0 / (TAU * self.params.accel_filter_hz);
        let alpha = dt / (rc + dt);

        let mut state = ActuatorState::at_rest(self.actuator, q0);
        let mut filtered_accel = 0.0;
        let mut records = Vec::with_capacity(num_samples);
        for k in 0..num_samples {
            let t = k as f64 / SAMPLE_RATE;
            records.push(Record {
                t,
                q_ref: reference(t),
                q: state.output_angle,
                qd: state.output_velocity,
                qdd: filtered_accel,
                tau: state.transmitted_torque,
            });
            if k + 1 == num_samples {
                break;
            }
            for j in 0..substeps {
                let ts = t + j as f64 * dt;
                let external = self.load_torque(state.output_angle, state.output_velocity);
                state = match gains {
                    Some(g) => actuator::step(&state, self.actuator, g, reference(ts), external, load_inertia, dt)?,
                    None => actuator::advance(&state, self.actuator, 0.0, external, load_inertia, dt)?,
                };
                let mut measured = state.output_accel;
                if let Some(n) = &noise {
                    measured += n.sample(&mut rng);
                }
                filtered_accel += alpha * (measured - filtered_accel);
            }
        }
        Ok(Trajectory {
            sample_rate: SAMPLE_RATE,
            records,
        })
    }
}

pub fn run_scenario(
    scenario: &PendulumScenario,
    actuator: &ActuatorConfig,
    gains: &PdGains,
) -> Result<Trajectory, PendulumError> {
    run_scenario_with(scenario, actuator, gains, &RigParams::default())
}

pub fn run_scenario_with(
    scenario: &PendulumScenario,
    actuator: &ActuatorConfig,
    gains: &PdGains,
    rig: &RigParams,
) -> Result<Trajectory, PendulumError> {
    scenario.validate()?;
    actuator.validate()?;
    gains.validate()?;
    let plant = Rig {
        actuator,
        params: rig,
        mass: scenario.pendulum_mass,
        location: scenario.mass_location,
        wall_angle: scenario.wall_angle,
    };
    plant.simulate(
        Some(gains),
        |t| scenario.reference(t),
        scenario.initial_position,
        scenario.num_samples(),
        scenario.seed,
    )
}

/// Constant-speed sweep without wall contact: the reference ramps at `speed`
/// from `start`. Used to isolate ripple at a known frequency.
#[allow(clippy::too_many_arguments)]
pub fn run_constant_speed(
    actuator: &ActuatorConfig,
    gains: &PdGains,
    rig: &RigParams,
    mass: f64,
    location: f64,
    start: f64,
    speed: f64,
    duration: f64,
    noise_seed: u64,
) -> Result<Trajectory, PendulumError> {
    actuator.validate()?;
    gains.validate()?;
    let plant = Rig {
        actuator,
        params: rig,
        mass,
        location,
        wall_angle: f64::INFINITY,
    };
    let n = (duration * SAMPLE_RATE).round() as usize;
    plant.simulate(Some(gains), |t| start + speed * t, start, n, noise_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> PendulumScenario {
        PendulumScenario {
            ref_frequency: 0.8,
            ref_amplitude: 0.6,
            initial_position: 0.3,
            pendulum_mass: 1.14,
            mass_location: 0.5,
            duration: 4.0,
            wall_angle: 1.4,
            seed: 3,
        }
    }

    #[test]
    fn sampled_scenarios_respect_ranges() {
        let ranges = ScenarioRanges::default();
        let rig = RigParams::default();
        let a = sample_scenarios(100, 42, &ranges, &rig);
        assert_eq!(a.len(), 100);
        for s in &a {
            assert!(s.range_warnings(&ranges).is_empty(), "{s}");
        }
        assert_eq!(a, sample_scenarios(100, 42, &ranges, &rig));
        assert_ne!(a, sample_scenarios(100, 43, &ranges, &rig));
    }

    #[test]
    fn mass_split_is_balanced() {
        let s = sample_scenarios(1000, 5, &ScenarioRanges::default(), &RigParams::default());
        let heavy = s.iter().filter(|s| s.pendulum_mass == 2.28).count() as f64;
        // binomial(1000, 0.5): sigma = sqrt(250)
        assert!((heavy - 500.0).abs() <= 3.0 * 250f64.sqrt(), "{heavy}");
    }

    #[test]
    fn manual_scenario_outside_ranges_warns() {
        let mut s = scenario();
        s.ref_frequency = 3.0;
        s.pendulum_mass = 1.0;
        assert_eq!(s.range_warnings(&ScenarioRanges::default()).len(), 2);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn trajectory_shape() {
        let traj = run_scenario(&scenario(), &ActuatorConfig::default(), &PdGains::default()).unwrap();
        assert_eq!(traj.len(), 800);
        traj.validate().unwrap();
        assert_eq!(traj.records[0].q, 0.3);
        let back = Trajectory::from_csv(&traj.to_csv()).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn upright_rest_has_no_torque() {
        let s = PendulumScenario {
            ref_amplitude: 0.0,
            initial_position: 0.0,
            wall_angle: f64::INFINITY,
            ..scenario()
        };
        let traj = run_scenario(&s, &ActuatorConfig::default(), &PdGains::default()).unwrap();
        assert!(traj.records.iter().all(|r| r.tau == 0.0 && r.q == 0.0));
    }

    #[test]
    fn static_hold_carries_gravity() {
        let s = PendulumScenario {
            ref_amplitude: 0.0,
            initial_position: std::f64::consts::FRAC_PI_2,
            wall_angle: f64::INFINITY,
            ..scenario()
        };
        let traj = run_scenario(&s, &ActuatorConfig::default(), &PdGains::default()).unwrap();
        let tail = &traj.records[400..];
        let mean = tail.iter().map(|r| r.tau).sum::<f64>() / tail.len() as f64;
        let gravity = 1.14 * 9.81 * 0.5;
        // the ripple at this load is about 0.2 Nm
        assert!((mean - gravity).abs() < 0.25, "{mean} vs {gravity}");
    }

    #[test]
    fn wall_contact_pushes_back() {
        let s = PendulumScenario {
            ref_amplitude: 1.0,
            initial_position: 0.9,
            ..scenario()
        };
        let traj = run_scenario(&s, &ActuatorConfig::default(), &PdGains::default()).unwrap();
        let contact: Vec<&Record> = traj.records.iter().filter(|r| r.q > s.wall_angle).collect();
        assert!(!contact.is_empty());
        // pressing into the wall takes positive actuator torque beyond gravity
        let rig = RigParams::default();
        for r in contact {
            assert!(wall_torque(&rig, s.wall_angle, r.q, r.qd) <= 0.0);
        }
        let pressing = traj
            .records
            .iter()
            .filter(|r| r.q > s.wall_angle + 0.02 && r.qd.abs() < 0.5)
            .collect::<Vec<_>>();
        assert!(!pressing.is_empty());
        assert!(pressing.iter().all(|r| r.tau > 1.14 * 9.81 * 0.5));
    }

    #[test]
    fn wall_is_inactive_before_contact() {
        let rig = RigParams::default();
        for q in [-3.0, 0.0, 1.0, 1.4] {
            assert_eq!(wall_torque(&rig, 1.4, q, 5.0), 0.0);
        }
        // continuous at the boundary without the damper
        let stiff_only = RigParams {
            wall_damping: 0.0,
            ..rig
        };
        assert!(wall_torque(&stiff_only, 1.4, 1.4 + 1e-12, 0.0).abs() < 1e-9);
    }

    #[test]
    fn free_swing_conserves_energy() {
        let actuator = ActuatorConfig::default().ideal();
        let params = RigParams {
            accel_noise_std: 0.0,
            ..RigParams::default()
        };
        let rig = Rig {
            actuator: &actuator,
            params: &params,
            mass: 2.28,
            location: 0.5,
            wall_angle: f64::INFINITY,
        };
        let traj = rig.simulate(None, |_| 0.0, 1.0, 2001, 0).unwrap();
        let e0 = rig.energy(1.0, 0.0);
        for r in traj.records.iter().step_by(200) {
            let e = rig.energy(r.q, r.qd);
            let seconds = r.t.max(1.0);
            assert!(
                (e - e0).abs() / e0 < 0.01 * seconds,
                "t={} drift {}",
                r.t,
                (e - e0) / e0
            );
        }
    }

    #[test]
    fn constant_speed_sweep() {
        let traj = run_constant_speed(
            &ActuatorConfig::default(),
            &PdGains::default(),
            &RigParams::default(),
            2.28,
            0.6,
            -1.0,
            1.0807,
            6.0,
            1,
        )
        .unwrap();
        let mean_speed = traj.records[400..].iter().map(|r| r.qd).sum::<f64>() / 800.0;
        assert!((mean_speed - 1.0807).abs() < 0.05, "{mean_speed}");
    }
}
