//! Bench procedures run against the simulated actuator.

use super::{advance, backlash_update, ActuatorConfig, ActuatorError, ActuatorState, PdGains, ARCMIN};

const DT: f64 = 1.0 / 2000.0;

/// Output speed at which the sustaining backdrive torque is measured, rad/s.
pub const BACKDRIVE_TEST_SPEED: f64 = 0.5;

/// Backdrives the unpowered actuator from the output.
///
/// The gap is first closed with a small preload. The output torque is then
/// ramped until the drivetrain breaks away (static value), after which a stiff
/// velocity servo holds the output at [`BACKDRIVE_TEST_SPEED`] and the mean
/// torque it needs is the dynamic value.
pub fn virtual_backdrive_experiment(config: &ActuatorConfig) -> Result<(f64, f64), ActuatorError> {
    config.validate()?;
    let preload = 1e-3;
    let ramp_rate = 0.5; // Nm/s
    let mut state = ActuatorState::at_rest(config, 0.0);

    for _ in 0..200 {
        state = advance(&state, config, 0.0, preload, 0.0, DT)?;
    }
    let mut applied = preload;
    let limit = config.static_friction_out * 2.0 + 10.0;
    let static_torque = loop {
        // Without stiction there is nothing to break away from.
        if config.static_friction_out == 0.0 {
            break 0.0;
        }
        if state.transmitted_torque != 0.0 && state.output_velocity >= config.stiction_velocity {
            break applied;
        }
        if applied > limit {
            break applied;
        }
        applied += ramp_rate * DT;
        state = advance(&state, config, 0.0, applied, 0.0, DT)?;
    };

    // Velocity servo on the output, like a servo motor coupled through the sensor.
    let (stiffness, damping) = (5.0, 0.2);
    let mut target = state.output_angle;
    let mut sustain = Vec::new();
    let settle = 4000;
    for k in 0..settle + 4000 {
        target += BACKDRIVE_TEST_SPEED * DT;
        let servo =
            stiffness * (target - state.output_angle) + damping * (BACKDRIVE_TEST_SPEED - state.output_velocity);
        state = advance(&state, config, 0.0, servo, 0.0, DT)?;
        if k >= settle {
            sustain.push(servo);
        }
    }
    let dynamic_torque = sustain.iter().sum::<f64>() / sustain.len() as f64;
    Ok((static_torque, dynamic_torque.max(0.0)))
}

/// Preload-and-reverse backlash measurement at `n_locations` evenly spaced
/// output angles, in both directions. Returns the mean and half-range of the
/// measured lost motion in arcminutes.
pub fn virtual_backlash_experiment(config: &ActuatorConfig, n_locations: usize) -> Result<(f64, f64), ActuatorError> {
    config.validate()?;
    if n_locations == 0 {
        return Err(ActuatorError::InvalidConfig("need at least one location".into()));
    }
    let ratio = config.gear_ratio;
    // rotor increment, output-equivalent: 0.01 arcmin
    let increment = 0.01 * ARCMIN * ratio;
    let max_steps = ((config.backlash_width + 1.0) / 0.01).ceil() as usize + 10;
    let mut readings = Vec::with_capacity(2 * n_locations);

    for k in 0..n_locations {
        let location = std::f64::consts::TAU * k as f64 / n_locations as f64;
        for direction in [1.0, -1.0] {
            let mut state = ActuatorState::at_rest(config, location);
            // preload against the opposite flank
            let preload = state.motor_angle - direction * (config.backlash_width + 1.0) * ARCMIN * ratio;
            state = backlash_update(&state, config, preload);
            let motor_start = state.motor_angle;
            let output_start = state.output_angle;
            for _ in 0..max_steps {
                let next = backlash_update(&state, config, state.motor_angle + direction * increment);
                let moved = next.output_angle != output_start;
                state = next;
                if moved {
                    break;
                }
            }
            let rotor_travel = (state.motor_angle - motor_start) / ratio;
            let output_travel = state.output_angle - output_start;
            readings.push((rotor_travel - output_travel).abs() / ARCMIN);
        }
    }

    let mean = readings.iter().sum::<f64>() / readings.len() as f64;
    let max = readings.iter().cloned().fold(f64::MIN, f64::max);
    let min = readings.iter().cloned().fold(f64::MAX, f64::min);
    Ok((mean, (max - min) / 2.0))
}

/// High-impedance ripple rig: a heavy flywheel on the output is driven at a
/// constant `speed` against a steady `load` while the actuator tracks a ramp
/// reference. Returns the mesh torque at the internal 2 kHz rate.
pub fn virtual_ripple_experiment(
    config: &ActuatorConfig,
    gains: &PdGains,
    load: f64,
    speed: f64,
    duration: f64,
) -> Result<Vec<f64>, ActuatorError> {
    config.validate()?;
    gains.validate()?;
    let flywheel = 1.0e3;
    // Start at the steady tracking error so the command is constant from t = 0.
    let friction = config.kinetic_friction_out * speed.signum() + config.viscous_coeff * speed;
    let lag = (load + friction + gains.kd * speed) / gains.kp;
    let mut state = ActuatorState::at_rest(config, 0.0);
    state.output_velocity = speed;
    state.motor_velocity = speed * config.gear_ratio;
    state.backlash_offset = config.backlash_half_width() * load.signum();
    state.motor_angle = state.backlash_offset * config.gear_ratio;

    let steps = (duration / DT).round() as usize;
    let mut torque = Vec::with_capacity(steps);
    for k in 0..steps {
        let q_ref = lag + speed * (k as f64 * DT);
        state = super::step(&state, config, gains, q_ref, -load, flywheel, DT)?;
        torque.push(state.transmitted_torque);
    }
    Ok(torque)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_backdrive() {
        let (s, d) = virtual_backdrive_experiment(&ActuatorConfig::default()).unwrap();
        assert!((s - 1.99).abs() < 0.02, "static {s}");
        assert!((d - 1.36).abs() < 0.02, "dynamic {d}");
    }

    #[test]
    fn frictionless_backdrive() {
        let c = ActuatorConfig {
            static_friction_out: 0.0,
            kinetic_friction_out: 0.0,
            ..ActuatorConfig::default()
        };
        let (s, d) = virtual_backdrive_experiment(&c).unwrap();
        assert!(s.abs() < 1e-3 && d.abs() < 1e-3, "{s} {d}");
    }

    #[test]
    fn pure_coulomb_backdrive() {
        let c = ActuatorConfig {
            static_friction_out: 1.5,
            kinetic_friction_out: 1.5,
            ..ActuatorConfig::default()
        };
        let (s, d) = virtual_backdrive_experiment(&c).unwrap();
        assert!((s - d).abs() < 0.02, "{s} {d}");
    }

    #[test]
    fn backlash_readings() {
        let (mean, half) = virtual_backlash_experiment(&ActuatorConfig::default(), 6).unwrap();
        assert!((mean - 7.0).abs() < 1e-9, "{mean}");
        assert!(half < 1e-9);
        let zero = ActuatorConfig {
            backlash_width: 0.0,
            ..ActuatorConfig::default()
        };
        let (mean, half) = virtual_backlash_experiment(&zero, 6).unwrap();
        assert!(mean < 1e-9 && half < 1e-9);
        let wide = ActuatorConfig {
            backlash_width: 14.0,
            ..ActuatorConfig::default()
        };
        let (mean, half) = virtual_backlash_experiment(&wide, 6).unwrap();
        assert!((mean - 14.0).abs() < 1e-9 && half < 1e-9);
        assert!(virtual_backlash_experiment(&wide, 0).is_err());
    }

    #[test]
    fn rated_ripple() {
        let c = ActuatorConfig::default();
        let torque = virtual_ripple_experiment(&c, &PdGains::default(), 37.5, 1.0807, 2.0).unwrap();
        let tail = &torque[1000..];
        let max = tail.iter().cloned().fold(f64::MIN, f64::max);
        let min = tail.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min - 3.0).abs() < 0.1, "p-p {}", max - min);
    }
}
