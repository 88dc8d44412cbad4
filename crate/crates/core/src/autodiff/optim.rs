//! Adam with bias correction, global-norm clipping, and a one-cycle
//! learning-rate schedule (linear warm-up, cosine anneal).

use std::f64::consts::PI;

use super::{Tensor2D, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor2D]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }
}

pub fn adam_step(
    params: &mut [Tensor2D],
    grads: &[Tensor2D],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(TensorError::Shape {
            op: "adam_step",
            detail: format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.first_moment[i].len() != p.len() {
            return Err(TensorError::Shape {
                op: "adam_step",
                detail: format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
        if !g.is_finite() {
            return Err(TensorError::NonFiniteGradient(i));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (((w, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor2D], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor2D::sum_squares).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(k);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycleSchedule {
    pub initial_lr: f64,
    pub max_lr: f64,
    pub total_steps: u64,
    pub warmup_fraction: f64,
    pub final_lr_fraction: f64,
}

impl OneCycleSchedule {
    /// Warm up from 1e-4 to ten times that over the first 30 %, then anneal
    /// to 4 % of the initial rate.
    pub fn new(total_steps: u64) -> Self {
        Self {
            initial_lr: 1e-4,
            max_lr: 1e-3,
            total_steps,
            warmup_fraction: 0.3,
            final_lr_fraction: 0.04,
        }
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |m: &str| Err(TensorError::Schedule(m.to_string()));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if !(self.max_lr >= self.initial_lr && self.max_lr.is_finite()) {
            return bad("max_lr must be at least initial_lr");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction.is_finite()) {
            return bad("final_lr_fraction must be positive");
        }
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        Ok(())
    }

    pub fn warmup_end(&self) -> f64 {
        self.warmup_fraction * self.total_steps as f64
    }

    pub fn final_lr(&self) -> f64 {
        self.initial_lr * self.final_lr_fraction
    }

    pub fn lr(&self, step: u64) -> Result<f64, TensorError> {
        self.validate()?;
        if step > self.total_steps {
            return Err(TensorError::Schedule(format!(
                "step {step} beyond total {}",
                self.total_steps
            )));
        }
        Ok(self.lr_at(step as f64))
    }

    /// Continuous form of the schedule.
    pub fn lr_at(&self, step: f64) -> f64 {
        let warm = self.warmup_end();
        if step <= warm {
            self.initial_lr + (self.max_lr - self.initial_lr) * step / warm
        } else {
            let progress = (step - warm) / (self.total_steps as f64 - warm);
            let floor = self.final_lr();
            floor + (self.max_lr - floor) * 0.5 * (1.0 + (PI * progress).cos())
        }
    }
}
