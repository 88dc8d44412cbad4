//! Lumped model of the cycloidal actuator, expressed on the output side.
//!
//! Two bodies share the gear mesh: the rotor (its inertia reflected through
//! the gear ratio) and whatever hangs on the output flange. Between them sits
//! the backlash dead band. While the mesh is engaged both bodies move
//! together and the mesh carries the torque; inside the dead band the mesh
//! carries nothing and each side integrates on its own until contact is
//! re-established with a plastic impact.
//!
//! Drivetrain friction acts on the rotor side, torque ripple on the mesh.

mod experiments;
mod friction;

use std::f64::consts::PI;

use thiserror::Error;

use crate::kv::{KvError, KvMap};

pub use experiments::{
    virtual_backdrive_experiment, virtual_backlash_experiment, virtual_ripple_experiment, BACKDRIVE_TEST_SPEED,
};
pub use friction::friction_torque;

/// One arcminute in radians.
pub const ARCMIN: f64 = PI / (180.0 * 60.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActuatorError {
    #[error("invalid actuator config: {0}")]
    InvalidConfig(String),
    #[error("invalid PD gains: {0}")]
    InvalidGains(String),
    #[error("time step {0} s outside (0, 0.01]")]
    InvalidStep(f64),
    #[error("actuator state became non-finite (integration blow-up)")]
    NonFinite,
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorConfig {
    pub gear_ratio: f64,
    /// Rotor inertia seen at the output, kg·m².
    pub rotor_inertia_reflected: f64,
    /// Output flange and sensor inertia, kg·m². Loads add to this.
    pub output_inertia: f64,
    /// Ripple amplitude at or above `continuous_torque`, Nm.
    pub ripple_amplitude: f64,
    /// Ripple cycles per output revolution.
    pub ripple_harmonic: u32,
    pub ripple_phase: f64,
    /// Mesh load at which the ripple reaches full amplitude, Nm.
    pub continuous_torque: f64,
    /// Total dead band, arcmin.
    pub backlash_width: f64,
    pub static_friction_out: f64,
    pub kinetic_friction_out: f64,
    pub viscous_coeff: f64,
    pub torque_limit: f64,
    pub stiction_velocity: f64,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        Self {
            gear_ratio: 10.0,
            rotor_inertia_reflected: 5.01e-4,
            output_inertia: 1.0e-3,
            ripple_amplitude: 1.5,
            // 10 lobes times a 10:1 reduction
            ripple_harmonic: 100,
            ripple_phase: 0.0,
            continuous_torque: 37.5,
            backlash_width: 7.0,
            static_friction_out: 1.99,
            kinetic_friction_out: 1.36,
            viscous_coeff: 0.0,
            torque_limit: 89.9,
            stiction_velocity: 1.0e-3,
        }
    }
}

const CONFIG_KEYS: [&str; 13] = [
    "gear_ratio",
    "rotor_inertia_reflected",
    "output_inertia",
    "ripple_amplitude",
    "ripple_harmonic",
    "ripple_phase",
    "continuous_torque",
    "backlash_width",
    "static_friction_out",
    "kinetic_friction_out",
    "viscous_coeff",
    "torque_limit",
    "stiction_velocity",
];

impl ActuatorConfig {
    pub const KEYS: &'static [&'static str] = &CONFIG_KEYS;

    pub fn validate(&self) -> Result<(), ActuatorError> {
        let bad = |msg: &str| Err(ActuatorError::InvalidConfig(msg.to_string()));
        let fields = [
            self.gear_ratio,
            self.rotor_inertia_reflected,
            self.output_inertia,
            self.ripple_amplitude,
            self.ripple_phase,
            self.continuous_torque,
            self.backlash_width,
            self.static_friction_out,
            self.kinetic_friction_out,
            self.viscous_coeff,
            self.torque_limit,
            self.stiction_velocity,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if self.gear_ratio <= 0.0 {
            return bad("gear_ratio must be positive");
        }
        if self.rotor_inertia_reflected <= 0.0 || self.output_inertia <= 0.0 {
            return bad("inertias must be positive");
        }
        if self.ripple_amplitude < 0.0
            || self.backlash_width < 0.0
            || self.static_friction_out < 0.0
            || self.kinetic_friction_out < 0.0
            || self.viscous_coeff < 0.0
        {
            return bad("magnitudes must be non-negative");
        }
        if self.kinetic_friction_out > self.static_friction_out {
            return bad("kinetic_friction_out exceeds static_friction_out");
        }
        if self.torque_limit <= 0.0 || self.continuous_torque <= 0.0 {
            return bad("torque_limit and continuous_torque must be positive");
        }
        if self.stiction_velocity <= 0.0 {
            return bad("stiction_velocity must be positive");
        }
        if self.ripple_harmonic == 0 {
            return bad("ripple_harmonic must be at least 1");
        }
        Ok(())
    }

    /// Half the dead band in output radians.
    pub fn backlash_half_width(&self) -> f64 {
        self.backlash_width * ARCMIN / 2.0
    }

    /// Applies every recognised key in `map` over `self`.
    pub fn apply_kv(&mut self, map: &KvMap) -> Result<(), ActuatorError> {
        map.check_keys(Self::KEYS)?;
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = map.parse_opt(stringify!($field))? { self.$field = v; })*
            };
        }
        take!(
            gear_ratio,
            rotor_inertia_reflected,
            output_inertia,
            ripple_amplitude,
            ripple_harmonic,
            ripple_phase,
            continuous_torque,
            backlash_width,
            static_friction_out,
            kinetic_friction_out,
            viscous_coeff,
            torque_limit,
            stiction_velocity
        );
        self.validate()
    }

    pub fn from_kv(map: &KvMap) -> Result<Self, ActuatorError> {
        let mut config = Self::default();
        config.apply_kv(map)?;
        Ok(config)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut map = KvMap::new();
        map.set_f64("gear_ratio", self.gear_ratio);
        map.set_f64("rotor_inertia_reflected", self.rotor_inertia_reflected);
        map.set_f64("output_inertia", self.output_inertia);
        map.set_f64("ripple_amplitude", self.ripple_amplitude);
        map.set("ripple_harmonic", self.ripple_harmonic);
        map.set_f64("ripple_phase", self.ripple_phase);
        map.set_f64("continuous_torque", self.continuous_torque);
        map.set_f64("backlash_width", self.backlash_width);
        map.set_f64("static_friction_out", self.static_friction_out);
        map.set_f64("kinetic_friction_out", self.kinetic_friction_out);
        map.set_f64("viscous_coeff", self.viscous_coeff);
        map.set_f64("torque_limit", self.torque_limit);
        map.set_f64("stiction_velocity", self.stiction_velocity);
        map
    }

    /// Same drivetrain with ripple, backlash and friction removed.
    pub fn ideal(&self) -> Self {
        Self {
            ripple_amplitude: 0.0,
            backlash_width: 0.0,
            static_friction_out: 0.0,
            kinetic_friction_out: 0.0,
            viscous_coeff: 0.0,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self { kp: 150.0, kd: 3.0 }
    }
}

impl PdGains {
    pub fn new(kp: f64, kd: f64) -> Result<Self, ActuatorError> {
        let gains = Self { kp, kd };
        gains.validate()?;
        Ok(gains)
    }

    pub fn validate(&self) -> Result<(), ActuatorError> {
        if !(self.kp.is_finite() && self.kp > 0.0) {
            return Err(ActuatorError::InvalidGains("kp must be positive".into()));
        }
        if !(self.kd.is_finite() && self.kd >= 0.0) {
            return Err(ActuatorError::InvalidGains("kd must be non-negative".into()));
        }
        Ok(())
    }

    /// Output-side torque command before saturation.
    pub fn command(&self, q_ref: f64, q: f64, qd: f64) -> f64 {
        self.kp * (q_ref - q) - self.kd * qd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActuatorState {
    /// Rotor angle, rad (rotor side).
    pub motor_angle: f64,
    /// Rotor speed, rad/s (rotor side).
    pub motor_velocity: f64,
    pub output_angle: f64,
    pub output_velocity: f64,
    pub output_accel: f64,
    /// Mesh torque delivered to the output, Nm.
    pub transmitted_torque: f64,
    /// Saturated output-side torque command of the last step, Nm.
    pub commanded_torque: f64,
    /// Rotor angle over gear ratio minus output angle, rad.
    pub backlash_offset: f64,
}

impl ActuatorState {
    /// At rest at output angle `q`, rotor centred in the dead band.
    pub fn at_rest(config: &ActuatorConfig, q: f64) -> Self {
        Self {
            motor_angle: q * config.gear_ratio,
            output_angle: q,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.motor_angle,
            self.motor_velocity,
            self.output_angle,
            self.output_velocity,
            self.output_accel,
            self.transmitted_torque,
            self.commanded_torque,
            self.backlash_offset,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Ripple torque on the mesh. The amplitude grows linearly with load up to
/// `continuous_torque` and saturates there.
pub fn ripple_torque(config: &ActuatorConfig, motor_angle: f64, load_torque: f64) -> f64 {
    let scale = (load_torque.abs() / config.continuous_torque).min(1.0);
    let output_angle = motor_angle / config.gear_ratio;
    config.ripple_amplitude * scale * (f64::from(config.ripple_harmonic) * output_angle + config.ripple_phase).sin()
}

/// Kinematic dead-zone map: the output follows `motor_angle_new / ratio` only
/// once the rotor has crossed the dead band.
pub fn backlash_update(state: &ActuatorState, config: &ActuatorConfig, motor_angle_new: f64) -> ActuatorState {
    let half = config.backlash_half_width();
    let rotor = motor_angle_new / config.gear_ratio;
    let mut next = *state;
    next.motor_angle = motor_angle_new;
    let offset = rotor - state.output_angle;
    if offset > half {
        next.output_angle = rotor - half;
        next.backlash_offset = half;
    } else if offset < -half {
        next.output_angle = rotor + half;
        next.backlash_offset = -half;
    } else {
        next.backlash_offset = offset;
    }
    next
}

fn check_dt(dt: f64) -> Result<(), ActuatorError> {
    if dt > 0.0 && dt <= 0.01 {
        Ok(())
    } else {
        Err(ActuatorError::InvalidStep(dt))
    }
}

/// One semi-implicit Euler step under PD position control.
///
/// `load_inertia` is added to the flange inertia; `external_torque` acts on
/// the output (positive along `q`).
pub fn step(
    state: &ActuatorState,
    config: &ActuatorConfig,
    gains: &PdGains,
    q_ref: f64,
    external_torque: f64,
    load_inertia: f64,
    dt: f64,
) -> Result<ActuatorState, ActuatorError> {
    let command = gains.command(q_ref, state.output_angle, state.output_velocity);
    advance(state, config, command, external_torque, load_inertia, dt)
}

/// One step with an explicit output-side torque command (saturated here).
pub fn advance(
    state: &ActuatorState,
    config: &ActuatorConfig,
    command: f64,
    external_torque: f64,
    load_inertia: f64,
    dt: f64,
) -> Result<ActuatorState, ActuatorError> {
    check_dt(dt)?;
    let u = command.clamp(-config.torque_limit, config.torque_limit);
    let half = config.backlash_half_width();
    let rotor_inertia = config.rotor_inertia_reflected;
    let out_inertia = config.output_inertia + load_inertia;
    let ratio = config.gear_ratio;

    let v = state.output_velocity;
    let w = state.motor_velocity / ratio;
    let offset = state.backlash_offset;

    let ripple = ripple_torque(config, state.motor_angle, u);
    let applied = u + ripple + external_torque;
    let total_inertia = rotor_inertia + out_inertia;

    let pushing_pos = half == 0.0 || offset >= half;
    let pushing_neg = half == 0.0 || offset <= -half;
    let engaged = if pushing_pos || pushing_neg {
        let friction = friction_torque(config, v, applied);
        let accel = (applied + friction) / total_inertia;
        let mesh = out_inertia * accel - external_torque;
        half == 0.0 || (pushing_pos && mesh >= 0.0) || (pushing_neg && mesh <= 0.0)
    } else {
        false
    };

    let mut next = *state;
    next.commanded_torque = u;
    if engaged {
        let v_new = friction::integrate_velocity(config, v, applied, total_inertia, dt);
        let accel = (v_new - v) / dt;
        next.output_velocity = v_new;
        next.output_angle = state.output_angle + v_new * dt;
        next.output_accel = accel;
        next.motor_velocity = v_new * ratio;
        next.transmitted_torque = out_inertia * accel - external_torque;
    } else {
        let w_new0 = friction::integrate_velocity(config, w, u, rotor_inertia, dt);
        let v_new0 = v + external_torque / out_inertia * dt;
        let mut w_new = w_new0;
        let mut v_new = v_new0;
        let mut new_offset = offset + (w_new - v_new) * dt;
        if new_offset >= half || new_offset <= -half {
            new_offset = new_offset.clamp(-half, half);
            let closing = if new_offset > 0.0 { w_new > v_new } else { w_new < v_new };
            if closing {
                let common = (rotor_inertia * w_new + out_inertia * v_new) / total_inertia;
                w_new = common;
                v_new = common;
            }
        }
        next.output_angle = state.output_angle + v_new * dt;
        next.output_velocity = v_new;
        next.output_accel = (v_new - v) / dt;
        next.motor_velocity = w_new * ratio;
        next.backlash_offset = new_offset;
        next.transmitted_torque = 0.0;
    }
    next.motor_angle = (next.output_angle + next.backlash_offset) * ratio;

    if !next.is_finite() {
        return Err(ActuatorError::NonFinite);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DT: f64 = 5e-4;

    #[test]
    fn ripple_vanishes_without_load() {
        let c = ActuatorConfig::default();
        for k in 0..100 {
            assert_eq!(ripple_torque(&c, k as f64 * 0.37, 0.0), 0.0);
        }
    }

    #[test]
    fn ripple_peak_to_peak_at_rated_load() {
        let c = ActuatorConfig::default();
        let period = 2.0 * PI * c.gear_ratio / f64::from(c.ripple_harmonic);
        let samples: Vec<f64> = (0..4000)
            .map(|k| ripple_torque(&c, period * k as f64 / 4000.0, 37.5))
            .collect();
        let max = samples.iter().cloned().fold(f64::MIN, f64::max);
        let min = samples.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min - 3.0).abs() < 1e-6);
        // saturates above rated load
        assert_eq!(ripple_torque(&c, period / 4.0, 80.0), 1.5);
    }

    #[test]
    fn backlash_reversal_inside_band_keeps_output() {
        let c = ActuatorConfig::default();
        let width = 2.0 * c.backlash_half_width();
        let mut s = ActuatorState::at_rest(&c, 0.3);
        // engage on the positive side
        s = backlash_update(&s, &c, (0.3 + 0.01) * c.gear_ratio);
        let engaged = s.output_angle;
        let back = s.motor_angle - width * c.gear_ratio;
        let s2 = backlash_update(&s, &c, back);
        assert_eq!(s2.output_angle, engaged);
        assert!((s2.backlash_offset + c.backlash_half_width()).abs() < 1e-12);
    }

    #[test]
    fn engaged_motion_tracks_rotor() {
        let c = ActuatorConfig::default();
        let mut s = ActuatorState::at_rest(&c, 0.0);
        s = backlash_update(&s, &c, 0.05);
        for k in 1..50 {
            let m = 0.05 + k as f64 * 0.01;
            s = backlash_update(&s, &c, m);
            assert!((s.output_angle - (m / c.gear_ratio - c.backlash_half_width())).abs() < 1e-15);
        }
    }

    #[test]
    fn rigid_limit_follows_exactly() {
        let c = ActuatorConfig {
            backlash_width: 0.0,
            ..ActuatorConfig::default()
        };
        let mut s = ActuatorState::at_rest(&c, 0.0);
        for m in [0.1, -0.4, 2.0, 1.9] {
            s = backlash_update(&s, &c, m);
            assert_eq!(s.output_angle, m / c.gear_ratio);
        }
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let c = ActuatorConfig::default();
        let s = ActuatorState::at_rest(&c, 0.4);
        let next = step(&s, &c, &PdGains::default(), 0.4, 0.0, 0.0, DT).unwrap();
        assert_eq!(next.output_angle, s.output_angle);
        assert_eq!(next.output_velocity, 0.0);
        assert_eq!(next.motor_angle, s.motor_angle);
        assert_eq!(next.transmitted_torque, 0.0);
    }

    #[test]
    fn command_saturates() {
        let c = ActuatorConfig::default();
        let s = ActuatorState::at_rest(&c, 0.0);
        let next = step(&s, &c, &PdGains::new(1000.0, 0.0).unwrap(), 5.0, 0.0, 0.0, DT).unwrap();
        assert_eq!(next.commanded_torque, 89.9);
        let next = step(&s, &c, &PdGains::default(), -5.0, 0.0, 0.0, DT).unwrap();
        assert_eq!(next.commanded_torque, -89.9);
    }

    #[test]
    fn converges_within_dead_band() {
        let c = ActuatorConfig::default();
        let gains = PdGains::new(2000.0, 3.0).unwrap();
        let mut s = ActuatorState::at_rest(&c, 0.0);
        for _ in 0..10_000 {
            s = step(&s, &c, &gains, 0.2, 0.0, 0.05, DT).unwrap();
        }
        // Stiction can hold the output anywhere friction/kp short of the target.
        let band = 2.0 * c.backlash_half_width() + c.static_friction_out / gains.kp;
        assert!((s.output_angle - 0.2).abs() <= band, "{}", s.output_angle);
    }

    #[test]
    fn rejects_bad_dt() {
        let c = ActuatorConfig::default();
        let s = ActuatorState::default();
        let g = PdGains::default();
        assert_eq!(
            step(&s, &c, &g, 0.0, 0.0, 0.0, 0.0),
            Err(ActuatorError::InvalidStep(0.0))
        );
        assert!(step(&s, &c, &g, 0.0, 0.0, 0.0, 0.02).is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        let c = ActuatorConfig::default();
        let s = ActuatorState::at_rest(&c, 0.0);
        let r = advance(&s, &c, 0.0, f64::INFINITY, 0.0, DT);
        assert_eq!(r, Err(ActuatorError::NonFinite));
    }

    #[test]
    fn ideal_energy_balance() {
        // Rigid geared body under PD: kinetic energy change equals work done.
        let c = ActuatorConfig::default().ideal();
        let gains = PdGains::default();
        let load = 0.2;
        let inertia = c.rotor_inertia_reflected + c.output_inertia + load;
        let mut s = ActuatorState::at_rest(&c, 0.0);
        let mut work = 0.0;
        let mut peak_ke: f64 = 0.0;
        for k in 0..2000 {
            let t = k as f64 * DT;
            let q_ref = 0.8 * (2.0 * PI * t).sin();
            let next = step(&s, &c, &gains, q_ref, 0.0, load, DT).unwrap();
            // semi-implicit Euler: work uses the mean of old and new velocity
            work += next.commanded_torque * (s.output_velocity + next.output_velocity) / 2.0 * DT;
            s = next;
            peak_ke = peak_ke.max(0.5 * inertia * s.output_velocity.powi(2));
        }
        let ke = 0.5 * inertia * s.output_velocity.powi(2);
        assert!((ke - work).abs() < 0.01 * peak_ke, "ke {ke} work {work}");
    }

    #[test]
    fn config_kv_round_trip() {
        let c = ActuatorConfig {
            backlash_width: 14.0,
            viscous_coeff: 0.013,
            ..ActuatorConfig::default()
        };
        let map = c.to_kv();
        assert_eq!(ActuatorConfig::from_kv(&map).unwrap(), c);
        let bad = KvMap::parse("kinetic_friction_out = 3.0").unwrap();
        assert!(ActuatorConfig::from_kv(&bad).is_err());
        let unknown = KvMap::parse("gear = 3").unwrap();
        assert!(matches!(
            ActuatorConfig::from_kv(&unknown),
            Err(ActuatorError::Kv(KvError::Unknown(_)))
        ));
    }

    proptest! {
        #[test]
        fn offset_stays_in_band(moves in proptest::collection::vec(-0.05f64..0.05, 1..200), width in 0.0f64..30.0) {
            let c = ActuatorConfig { backlash_width: width, ..ActuatorConfig::default() };
            let half = c.backlash_half_width();
            let mut s = ActuatorState::at_rest(&c, 0.0);
            let mut m = 0.0;
            for d in moves {
                m += d;
                s = backlash_update(&s, &c, m);
                prop_assert!(s.backlash_offset.abs() <= half + 1e-15);
            }
        }

        #[test]
        fn dynamic_offset_stays_in_band(targets in proptest::collection::vec(-1.0f64..1.0, 1..20), ext in -20.0f64..20.0) {
            let c = ActuatorConfig::default();
            let half = c.backlash_half_width();
            let mut s = ActuatorState::at_rest(&c, 0.0);
            for q_ref in targets {
                for _ in 0..50 {
                    s = step(&s, &c, &PdGains::default(), q_ref, ext, 0.1, DT).unwrap();
                    prop_assert!(s.backlash_offset.abs() <= half);
                }
            }
        }

        #[test]
        fn ripple_is_periodic(angle in -100.0f64..100.0, load in -80.0f64..80.0) {
            let c = ActuatorConfig::default();
            let period = 2.0 * PI / f64::from(c.ripple_harmonic) * c.gear_ratio;
            let a = ripple_torque(&c, angle, load);
            let b = ripple_torque(&c, angle + period, load);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn step_is_deterministic(q in -1.0f64..1.0, v in -5.0f64..5.0, q_ref in -1.0f64..1.0, ext in -10.0f64..10.0) {
            let c = ActuatorConfig::default();
            let mut s = ActuatorState::at_rest(&c, q);
            s.output_velocity = v;
            s.motor_velocity = v * c.gear_ratio;
            let a = step(&s, &c, &PdGains::default(), q_ref, ext, 0.3, DT).unwrap();
            let b = step(&s, &c, &PdGains::default(), q_ref, ext, 0.3, DT).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
