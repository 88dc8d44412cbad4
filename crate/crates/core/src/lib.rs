//! Cycloidal quasi-direct-drive actuator: reducer geometry, lumped
//! dynamics, a pendulum test rig, and GRU/MLP torque estimators trained
//! on its logs with a small reverse-mode autodiff engine.
//!
//! ```
//! use cqdd::geometry::{counter_disk_count, transmission_ratio};
//!
//! assert_eq!(transmission_ratio(10, 11).unwrap(), -10.0);
//! assert_eq!(counter_disk_count(10).unwrap(), 2);
//! ```

pub mod actuator;
pub mod autodiff;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod kv;
pub mod models;
pub mod pendulum;
pub mod seed;
pub mod spectral;
pub mod train;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/actuator.md")]
    mod actuator {}
    #[doc = include_str!("../../../book/src/rig.md")]
    mod rig {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
