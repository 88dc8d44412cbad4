//! Mini-batch training with Adam, gradient clipping, a one-cycle schedule and
//! validation-driven early stopping.

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::autodiff::{adam_step, clip_global_norm, AdamState, OneCycleSchedule, Tape, Tensor2D, TensorError};
use crate::dataset::WindowSet;
use crate::kv::{KvError, KvMap};
use crate::models::{Checkpoint, Model, ModelError, ModelSpec, TrainingMeta};
use crate::seed;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} split has no windows")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged { epoch: usize, step: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kv(#[from] KvError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    /// Caps the mini-batches drawn per epoch; each epoch still reshuffles the
    /// full training set.
    pub max_batches_per_epoch: Option<usize>,
    /// Validation uses at most this many evenly strided windows.
    pub max_validation_windows: Option<usize>,
    pub initial_lr: f64,
    pub max_lr: f64,
    pub warmup_fraction: f64,
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = OneCycleSchedule::new(1);
        Self {
            batch_size: 64,
            epochs: 100,
            seed: 0,
            patience: 10,
            clip_norm: 1.0,
            max_batches_per_epoch: None,
            max_validation_windows: None,
            initial_lr: s.initial_lr,
            max_lr: s.max_lr,
            warmup_fraction: s.warmup_fraction,
            final_lr_fraction: s.final_lr_fraction,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 11] = [
        "batch_size",
        "epochs",
        "seed",
        "patience",
        "clip_norm",
        "max_batches_per_epoch",
        "max_validation_windows",
        "initial_lr",
        "max_lr",
        "warmup_fraction",
        "final_lr_fraction",
    ];

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if self.max_batches_per_epoch == Some(0) || self.max_validation_windows == Some(0) {
            return bad("caps must be positive");
        }
        self.schedule(1)
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))
    }

    pub fn schedule(&self, total_steps: u64) -> OneCycleSchedule {
        OneCycleSchedule {
            initial_lr: self.initial_lr,
            max_lr: self.max_lr,
            total_steps,
            warmup_fraction: self.warmup_fraction,
            final_lr_fraction: self.final_lr_fraction,
        }
    }

    pub fn batches_per_epoch(&self, windows: usize) -> usize {
        let full = windows.div_ceil(self.batch_size);
        self.max_batches_per_epoch.map_or(full, |cap| full.min(cap))
    }

    /// Overrides fields present in `map`; a cap of `none` removes it.
    pub fn apply_kv(&mut self, map: &KvMap) -> Result<(), TrainError> {
        let cap = |key: &str| -> Result<Option<Option<usize>>, TrainError> {
            match map.get(key) {
                None => Ok(None),
                Some("none") => Ok(Some(None)),
                Some(_) => Ok(Some(Some(map.require(key)?))),
            }
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = map.parse_opt(stringify!($field))? {
                    self.$field = v;
                }
            )*};
        }
        set!(
            batch_size,
            epochs,
            seed,
            patience,
            clip_norm,
            initial_lr,
            max_lr,
            warmup_fraction,
            final_lr_fraction
        );
        if let Some(v) = cap("max_batches_per_epoch")? {
            self.max_batches_per_epoch = v;
        }
        if let Some(v) = cap("max_validation_windows")? {
            self.max_validation_windows = v;
        }
        self.validate()
    }

    pub fn to_kv(&self) -> KvMap {
        let mut m = KvMap::new();
        let cap = |c: Option<usize>| c.map_or("none".to_string(), |v| v.to_string());
        m.set("batch_size", self.batch_size);
        m.set("epochs", self.epochs);
        m.set("seed", self.seed);
        m.set("patience", self.patience);
        m.set_f64("clip_norm", self.clip_norm);
        m.set("max_batches_per_epoch", cap(self.max_batches_per_epoch));
        m.set("max_validation_windows", cap(self.max_validation_windows));
        m.set_f64("initial_lr", self.initial_lr);
        m.set_f64("max_lr", self.max_lr);
        m.set_f64("warmup_fraction", self.warmup_fraction);
        m.set_f64("final_lr_fraction", self.final_lr_fraction);
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// mean mini-batch loss, normalised units
    pub train_loss: f64,
    pub val_loss: f64,
    /// lowest validation loss up to and including this epoch
    pub best_val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Columns of `windows` listed in `batch`, one flattened window per column.
pub fn batch_input(windows: &WindowSet, batch: &[usize]) -> Tensor2D {
    let rows = windows.channels() * windows.history();
    let mut data = vec![0.0; rows * batch.len()];
    let mut buf = vec![0.0; rows];
    for (j, &i) in batch.iter().enumerate() {
        windows.write_input(i, &mut buf);
        for (r, v) in buf.iter().enumerate() {
            data[r * batch.len() + j] = *v;
        }
    }
    Tensor2D::new(rows, batch.len(), data).expect("non-empty batch")
}

/// Indices `0..len` thinned to at most `cap`, evenly strided.
pub fn strided(len: usize, cap: Option<usize>) -> Vec<usize> {
    match cap {
        Some(c) if c < len => (0..c).map(|k| k * len / c).collect(),
        _ => (0..len).collect(),
    }
}

/// Mean squared error in normalised units over `indices`.
pub fn mean_squared_error(model: &Model, windows: &WindowSet, indices: &[usize]) -> Result<f64, ModelError> {
    let mut predictor = model.predictor();
    let mut buf = vec![0.0; windows.channels() * windows.history()];
    let mut sum = 0.0;
    for &i in indices {
        windows.write_input(i, &mut buf);
        let e = predictor.predict(&buf)? - windows.target(i);
        sum += e * e;
    }
    Ok(sum / indices.len() as f64)
}

fn check_windows(spec: &ModelSpec, w: &WindowSet) -> Result<(), TrainError> {
    if w.channels() != spec.input_channels || w.history() != spec.history {
        return Err(ModelError::InputShape {
            expected: format!("{}x{}", spec.input_channels, spec.history),
            got: format!("{}x{}", w.channels(), w.history()),
        }
        .into());
    }
    Ok(())
}

/// Trains `spec` and returns the parameters from the epoch with the lowest
/// validation loss. Deterministic for a given config seed.
pub fn train(
    name: &str,
    spec: ModelSpec,
    train_set: &WindowSet,
    validation: &WindowSet,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    spec.validate()?;
    check_windows(&spec, train_set)?;
    check_windows(&spec, validation)?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if validation.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }

    let mut model = Model::init(spec, &mut seed::fork(config.seed, "init"))?;
    let mut order_rng = seed::fork(config.seed, "shuffle");
    let per_epoch = config.batches_per_epoch(train_set.len());
    let schedule = config.schedule((config.epochs * per_epoch) as u64);
    let mut adam = AdamState::new(model.params());
    let val_indices = strided(validation.len(), config.max_validation_windows);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(Model, usize, f64, f64)> = None;
    let mut since_best = 0;
    let mut step = 0u64;
    let mut tape = Tape::new();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut lr = schedule.initial_lr;
        for batch in order.chunks(config.batch_size).take(per_epoch) {
            let diverged = |detail: String| TrainError::Diverged {
                epoch,
                step: step as usize,
                detail,
            };
            let input = batch_input(train_set, batch);
            let targets = Tensor2D::from_fn(1, batch.len(), |_, j| train_set.target(batch[j]));
            let vars: Vec<_> = model.params().iter().map(|p| tape.leaf_copy(p, true)).collect();
            let pred = model.forward_tape(&mut tape, &vars, &input).map_err(|e| match e {
                ModelError::Tensor(TensorError::NonFinite(op)) => diverged(format!("non-finite {op}")),
                other => other.into(),
            })?;
            let target = tape.leaf(targets, false);
            let loss = tape.mse_loss(pred, target).map_err(|e| diverged(e.to_string()))?;
            let loss_value = tape.value(loss).data()[0];
            let mut grads = tape.backward(loss).map_err(|e| diverged(e.to_string()))?;
            let mut grads: Vec<Tensor2D> = vars
                .iter()
                .map(|v| grads.take(*v).expect("parameter leaf gradient"))
                .collect();
            clip_global_norm(&mut grads, config.clip_norm);
            lr = schedule
                .lr(step)
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            adam_step(model.params_mut(), &grads, &mut adam, lr).map_err(|e| diverged(e.to_string()))?;
            for g in grads {
                tape.recycle(g);
            }
            step += 1;
            loss_sum += loss_value;
        }
        let train_loss = loss_sum / per_epoch as f64;
        let val_loss = mean_squared_error(&model, validation, &val_indices)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                step: step as usize,
                detail: format!("loss train {train_loss} validation {val_loss}"),
            });
        }
        let improved = best.as_ref().is_none_or(|b| val_loss < b.3);
        if improved {
            best = Some((model.clone(), epoch, train_loss, val_loss));
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            best_val_loss: best.as_ref().map_or(val_loss, |b| b.3),
            lr,
        });
        if since_best >= config.patience {
            break;
        }
    }

    let (model, best_epoch, train_loss, val_loss) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            name: name.to_string(),
            model,
            normalization: *train_set.normalization(),
            meta: TrainingMeta {
                seed: config.seed,
                epochs: history.len() as u32,
                best_epoch: best_epoch as u32,
                train_loss,
                val_loss,
            },
        },
        history,
    })
}
