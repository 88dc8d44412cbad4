//! Exit-code classification: 2 for anything the user can fix by changing
//! arguments or inputs that fail validation, 1 for everything else.

use std::fmt;

use cqdd::actuator::ActuatorError;
use cqdd::dataset::DatasetError;
use cqdd::eval::EvalError;
use cqdd::geometry::GeometryError;
use cqdd::kv::KvError;
use cqdd::models::ModelError;
use cqdd::pendulum::PendulumError;
use cqdd::spectral::SpectralError;
use cqdd::train::TrainError;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.to_string(),
        }
    }

    pub fn runtime(message: impl fmt::Display) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<KvError> for Failure {
    fn from(e: KvError) -> Self {
        Self::usage(e)
    }
}

impl From<GeometryError> for Failure {
    fn from(e: GeometryError) -> Self {
        Self::usage(e)
    }
}

impl From<ActuatorError> for Failure {
    fn from(e: ActuatorError) -> Self {
        match e {
            ActuatorError::NonFinite => Self::runtime(e),
            _ => Self::usage(e),
        }
    }
}

impl From<PendulumError> for Failure {
    fn from(e: PendulumError) -> Self {
        match e {
            PendulumError::Actuator(a) => a.into(),
            PendulumError::InvalidScenario(_) => Self::usage(e),
            _ => Self::runtime(e),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::TooFewTrajectories(_)
            | DatasetError::BadFractions(_)
            | DatasetError::EmptyTrain
            | DatasetError::ZeroHistory
            | DatasetError::EmptySplit(_) => Self::usage(e),
            DatasetError::Trajectory(p) => p.into(),
            _ => Self::runtime(e),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidSpec(_)
            | ModelError::UnknownPreset(_)
            | ModelError::InputShape { .. }
            | ModelError::ShapeInconsistent(_) => Self::usage(e),
            _ => Self::runtime(e),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::EmptySplit(_) | TrainError::Kv(_) => Self::usage(e),
            TrainError::Model(m) => m.into(),
            TrainError::Diverged { .. } => Self::runtime(e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            _ => Self::usage(e),
        }
    }
}

impl From<SpectralError> for Failure {
    fn from(e: SpectralError) -> Self {
        Self::runtime(e)
    }
}
