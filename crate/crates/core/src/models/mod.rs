//! Torque estimators: stacked GRU and MLP networks over a joint-state window.
//!
//! Parameters live in a flat list of matrices in a fixed declaration order,
//! which is also the checkpoint order. A window is `channels × history`,
//! row-major, normalised.

mod checkpoint;
mod gru;
mod mlp;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Tape, Tensor2D, TensorError, Var};
use crate::dataset::InputMode;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unknown preset {0:?} (expected pva-gru, pv-gru, mlp-tuned or mlp-baseline)")]
    UnknownPreset(String),
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: String, got: String },
    #[error("non-finite activation in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (this build reads {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint shape inconsistency: {0}")]
    ShapeInconsistent(String),
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Gru,
    Mlp,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Gru => "gru",
            ModelKind::Mlp => "mlp",
        })
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gru" => Ok(ModelKind::Gru),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(ModelError::InvalidSpec(format!("unknown kind {other:?}"))),
        }
    }
}

/// Architecture. For an MLP, `layers` counts weight layers, so `layers - 1`
/// hidden layers of `hidden_size` units precede the linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_channels: usize,
    pub history: usize,
    pub layers: usize,
    pub hidden_size: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if InputMode::from_channels(self.input_channels).is_none() {
            return Err(ModelError::InvalidSpec(format!(
                "input_channels must be 2 or 3, got {}",
                self.input_channels
            )));
        }
        for (name, v) in [
            ("history", self.history),
            ("layers", self.layers),
            ("hidden_size", self.hidden_size),
        ] {
            if v == 0 {
                return Err(ModelError::InvalidSpec(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn input_mode(&self) -> InputMode {
        InputMode::from_channels(self.input_channels).expect("validated channel count")
    }

    pub fn window_len(&self) -> usize {
        self.input_channels * self.history
    }

    /// Shapes of every parameter matrix, in declaration order.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        let h = self.hidden_size;
        let mut shapes = Vec::new();
        match self.kind {
            ModelKind::Gru => {
                for layer in 0..self.layers {
                    let input = if layer == 0 { self.input_channels } else { h };
                    shapes.push((3 * h, input));
                    shapes.push((2 * h, h));
                    shapes.push((h, h));
                    shapes.push((3 * h, 1));
                }
                shapes.push((1, h));
                shapes.push((1, 1));
            }
            ModelKind::Mlp => {
                let mut input = self.window_len();
                for layer in 0..self.layers {
                    let out = if layer + 1 == self.layers { 1 } else { h };
                    shapes.push((out, input));
                    shapes.push((out, 1));
                    input = out;
                }
            }
        }
        shapes
    }

    /// Whether parameter `index` (declaration order) is a bias vector.
    pub fn is_bias(&self, index: usize) -> bool {
        match self.kind {
            ModelKind::Gru if index < 4 * self.layers => index % 4 == 3,
            ModelKind::Gru => index == 4 * self.layers + 1,
            ModelKind::Mlp => index % 2 == 1,
        }
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes().iter().map(|(r, c)| r * c).sum()
    }
}

/// Named configurations compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    PvaGru,
    PvGru,
    MlpTuned,
    MlpBaseline,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::PvaGru, Preset::PvGru, Preset::MlpTuned, Preset::MlpBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Preset::PvaGru => "pva-gru",
            Preset::PvGru => "pv-gru",
            Preset::MlpTuned => "mlp-tuned",
            Preset::MlpBaseline => "mlp-baseline",
        }
    }

    pub fn spec(self) -> ModelSpec {
        let (kind, input_channels, history, layers) = match self {
            Preset::PvaGru => (ModelKind::Gru, 3, 30, 4),
            Preset::PvGru => (ModelKind::Gru, 2, 30, 4),
            Preset::MlpTuned => (ModelKind::Mlp, 2, 24, 3),
            Preset::MlpBaseline => (ModelKind::Mlp, 2, 3, 3),
        };
        ModelSpec {
            kind,
            input_channels,
            history,
            layers,
            hidden_size: 32,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ModelError::UnknownPreset(s.to_string()))
    }
}

/// A network: its spec plus parameter matrices in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: Vec<Tensor2D>,
}

impl Model {
    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self, ModelError> {
        spec.validate()?;
        let params = spec
            .param_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (rows, cols))| {
                if spec.is_bias(i) {
                    Tensor2D::zeros(rows, 1)
                } else {
                    let bound = 1.0 / (cols as f64).sqrt();
                    Tensor2D::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
                }
            })
            .collect();
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: Vec<Tensor2D>) -> Result<Self, ModelError> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(ModelError::ShapeInconsistent(format!(
                "spec needs {} parameter matrices, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (i, (p, s)) in params.iter().zip(&shapes).enumerate() {
            if p.shape() != *s {
                return Err(ModelError::ShapeInconsistent(format!(
                    "parameter {i} is {:?}, spec needs {s:?}",
                    p.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor2D] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor2D] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Tensor2D> {
        self.params
    }

    /// Flattened parameter vector in declaration order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    pub fn check_input_mode(&self, mode: InputMode) -> Result<(), ModelError> {
        if mode.channels() != self.spec.input_channels {
            return Err(ModelError::InputShape {
                expected: format!("{} channels", self.spec.input_channels),
                got: format!("{} channels", mode.channels()),
            });
        }
        Ok(())
    }

    fn check_window(&self, window: &[f64]) -> Result<(), ModelError> {
        if window.len() != self.spec.window_len() {
            return Err(ModelError::InputShape {
                expected: format!("{}x{}", self.spec.input_channels, self.spec.history),
                got: format!("{} values", window.len()),
            });
        }
        Ok(())
    }

    /// Single-window prediction (normalised torque).
    pub fn predict(&self, window: &[f64]) -> Result<f64, ModelError> {
        Predictor::new(self).predict(window)
    }

    pub fn predictor(&self) -> Predictor<'_> {
        Predictor::new(self)
    }

    /// Records a forward pass over a batch on `tape`.
    ///
    /// `params` are this model's parameters as leaves of `tape`. `input` holds
    /// one flattened window per column, `(channels·history) × batch`. Returns
    /// the `1 × batch` prediction.
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], input: &Tensor2D) -> Result<Var, ModelError> {
        if input.rows() != self.spec.window_len() {
            return Err(ModelError::InputShape {
                expected: format!("{} rows", self.spec.window_len()),
                got: format!("{} rows", input.rows()),
            });
        }
        match self.spec.kind {
            ModelKind::Gru => gru::forward_tape(&self.spec, tape, params, input),
            ModelKind::Mlp => mlp::forward_tape(&self.spec, tape, params, input),
        }
    }
}

enum Scratch {
    Gru(gru::Scratch),
    Mlp(mlp::Scratch),
}

/// Allocation-free single-window inference with reusable buffers.
pub struct Predictor<'a> {
    model: &'a Model,
    scratch: Scratch,
}

impl<'a> Predictor<'a> {
    fn new(model: &'a Model) -> Self {
        let scratch = match model.spec.kind {
            ModelKind::Gru => Scratch::Gru(gru::scratch(&model.spec, &model.params)),
            ModelKind::Mlp => Scratch::Mlp(mlp::scratch(&model.spec)),
        };
        Self { model, scratch }
    }

    pub fn predict(&mut self, window: &[f64]) -> Result<f64, ModelError> {
        self.model.check_window(window)?;
        let (spec, params) = (&self.model.spec, &self.model.params);
        let y = match &mut self.scratch {
            Scratch::Gru(s) => gru::predict(spec, params, window, s),
            Scratch::Mlp(s) => mlp::predict(spec, params, window, s),
        };
        if !y.is_finite() {
            return Err(ModelError::NonFinite("predict"));
        }
        Ok(y)
    }
}

/// Dot product with independent partial sums so the loop vectorises.
#[inline(always)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4 * 4;
    for (x, y) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        s += x * y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn presets_by_name() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            p.spec().validate().unwrap();
            assert_eq!(p.spec().hidden_size, 32);
        }
        assert!("gru".parse::<Preset>().is_err());
        let s = Preset::PvaGru.spec();
        assert_eq!((s.input_channels, s.history, s.layers), (3, 30, 4));
        let s = Preset::MlpBaseline.spec();
        assert_eq!(s.param_shapes()[0], (32, 6));
        assert_eq!(s.param_shapes().len(), 6);
    }

    #[test]
    fn init_bounds() {
        let mut rng = seed::fork(1, "init");
        let m = Model::init(Preset::PvGru.spec(), &mut rng).unwrap();
        let shapes = m.spec().param_shapes();
        for (i, (p, (r, c))) in m.params().iter().zip(shapes).enumerate() {
            assert_eq!(p.shape(), (r, c));
            assert_eq!(m.spec().is_bias(i), c == 1);
            if c == 1 {
                assert!(p.data().iter().all(|v| *v == 0.0));
            } else {
                let b = 1.0 / (c as f64).sqrt();
                assert!(p.data().iter().all(|v| v.abs() <= b));
            }
        }
    }

    #[test]
    fn rejects_wrong_window() {
        let mut rng = seed::fork(2, "init");
        let m = Model::init(Preset::PvaGru.spec(), &mut rng).unwrap();
        assert!(m.predict(&vec![0.0; 90]).is_ok());
        assert!(matches!(m.predict(&vec![0.0; 60]), Err(ModelError::InputShape { .. })));
        assert!(m.check_input_mode(InputMode::Pv).is_err());
    }

    #[test]
    fn from_params_checks_shapes() {
        let spec = Preset::MlpBaseline.spec();
        let mut rng = seed::fork(3, "init");
        let m = Model::init(spec, &mut rng).unwrap();
        let mut p = m.clone().into_params();
        assert_eq!(Model::from_params(spec, p.clone()).unwrap(), m);
        p.swap(0, 1);
        assert!(matches!(
            Model::from_params(spec, p),
            Err(ModelError::ShapeInconsistent(_))
        ));
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-13);
    }
}
