//! Karnopp-style Coulomb friction with a stiction band.

use super::ActuatorConfig;

/// Friction torque acting on the drivetrain, to be added to `applied`.
///
/// Inside the stiction band (`|velocity| < stiction_velocity`) friction
/// cancels the applied torque up to the breakaway level. Outside it, the
/// kinetic level plus the viscous term opposes the motion.
pub fn friction_torque(config: &ActuatorConfig, velocity: f64, applied: f64) -> f64 {
    if velocity.abs() < config.stiction_velocity {
        if applied.abs() <= config.static_friction_out {
            -applied
        } else {
            -config.static_friction_out * applied.signum()
        }
    } else {
        -(config.kinetic_friction_out * velocity.signum() + config.viscous_coeff * velocity)
    }
}

/// Advances a velocity under `applied` plus friction, snapping to rest when
/// the drivetrain sticks or when friction alone would reverse the motion.
pub(crate) fn integrate_velocity(config: &ActuatorConfig, velocity: f64, applied: f64, inertia: f64, dt: f64) -> f64 {
    let holds = applied.abs() <= config.static_friction_out;
    if velocity.abs() < config.stiction_velocity && holds {
        return 0.0;
    }
    let friction = friction_torque(config, velocity, applied);
    let next = velocity + (applied + friction) / inertia * dt;
    if velocity != 0.0 && next.signum() != velocity.signum() && holds {
        0.0
    } else {
        next
    }
}
