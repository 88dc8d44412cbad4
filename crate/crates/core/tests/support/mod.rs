//! Independent references shared by the integration tests and the
//! acceptance run: a naive per-scalar forward pass and a finite-difference
//! gradient check on whole models.

#![allow(dead_code)]

use cqdd::autodiff::{Tape, Tensor2D};
use cqdd::models::{Model, ModelKind, ModelSpec, Preset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight transcription of the gated recurrence, one scalar at a time.
pub fn reference_gru(spec: &ModelSpec, p: &[Tensor2D], window: &[f64]) -> f64 {
    let (l, h) = (spec.history, spec.hidden_size);
    // seq[t][i]
    let mut seq: Vec<Vec<f64>> = (0..l)
        .map(|t| (0..spec.input_channels).map(|c| window[c * l + t]).collect())
        .collect();
    let mut last = vec![0.0; h];
    for layer in 0..spec.layers {
        let w = &p[4 * layer];
        let ug = &p[4 * layer + 1];
        let uc = &p[4 * layer + 2];
        let b = &p[4 * layer + 3];
        let mut state = vec![0.0; h];
        let mut out = Vec::new();
        for x in &seq {
            let mut z = vec![0.0; h];
            let mut r = vec![0.0; h];
            for i in 0..h {
                let mut sz = b.get(i, 0);
                let mut sr = b.get(h + i, 0);
                for (k, xk) in x.iter().enumerate() {
                    sz += w.get(i, k) * xk;
                    sr += w.get(h + i, k) * xk;
                }
                for k in 0..h {
                    sz += ug.get(i, k) * state[k];
                    sr += ug.get(h + i, k) * state[k];
                }
                z[i] = sigmoid(sz);
                r[i] = sigmoid(sr);
            }
            let mut next = vec![0.0; h];
            for i in 0..h {
                let mut s = b.get(2 * h + i, 0);
                for (k, xk) in x.iter().enumerate() {
                    s += w.get(2 * h + i, k) * xk;
                }
                for k in 0..h {
                    s += uc.get(i, k) * (r[k] * state[k]);
                }
                let cand = s.tanh();
                next[i] = (1.0 - z[i]) * state[i] + z[i] * cand;
            }
            state = next;
            out.push(state.clone());
        }
        last = state;
        seq = out;
    }
    let head = &p[4 * spec.layers];
    let mut y = p[4 * spec.layers + 1].get(0, 0);
    for k in 0..h {
        y += head.get(0, k) * last[k];
    }
    y
}

pub fn reference_mlp(spec: &ModelSpec, p: &[Tensor2D], window: &[f64]) -> f64 {
    let mut x = window.to_vec();
    for layer in 0..spec.layers {
        let w = &p[2 * layer];
        let b = &p[2 * layer + 1];
        let mut y = vec![0.0; w.rows()];
        for i in 0..w.rows() {
            let mut s = b.get(i, 0);
            for k in 0..w.cols() {
                s += w.get(i, k) * x[k];
            }
            y[i] = if layer + 1 == spec.layers { s } else { s.tanh() };
        }
        x = y;
    }
    x[0]
}

pub fn reference(model: &Model, window: &[f64]) -> f64 {
    match model.spec().kind {
        ModelKind::Gru => reference_gru(model.spec(), model.params(), window),
        ModelKind::Mlp => reference_mlp(model.spec(), model.params(), window),
    }
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    ModelSpec {
        kind: if rng.random_bool(0.5) {
            ModelKind::Gru
        } else {
            ModelKind::Mlp
        },
        input_channels: rng.random_range(2..=3),
        history: rng.random_range(1..=12),
        layers: rng.random_range(1..=4),
        hidden_size: rng.random_range(1..=12),
    }
}

pub fn randomize(model: &mut Model, rng: &mut ChaCha8Rng, scale: f64) {
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

pub fn random_window(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-3.0..3.0)).collect()
}

/// Worst absolute deviation of the fast and taped forward passes from the
/// reference over `cases` random models; every tenth case is a preset.
pub fn oracle_sweep(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let spec = if case % 10 == 0 {
            Preset::ALL[case / 10 % 4].spec()
        } else {
            random_spec(&mut rng)
        };
        let mut model = Model::init(spec, &mut rng).unwrap();
        randomize(&mut model, &mut rng, 0.8);
        let batch = 3;
        let windows: Vec<Vec<f64>> = (0..batch).map(|_| random_window(&mut rng, spec.window_len())).collect();

        let mut tape = Tape::new();
        let vars: Vec<_> = model.params().iter().map(|p| tape.leaf(p.clone(), true)).collect();
        let input = Tensor2D::from_fn(spec.window_len(), batch, |r, c| windows[c][r]);
        let out = model.forward_tape(&mut tape, &vars, &input).unwrap();

        for (j, w) in windows.iter().enumerate() {
            let expected = reference(&model, w);
            let fast = model.predict(w).unwrap();
            let taped = tape.value(out).get(0, j);
            worst = worst.max((fast - expected).abs()).max((taped - expected).abs());
        }
    }
    worst
}

const H: f64 = 1e-6;

fn reference_loss(model: &Model, windows: &[Vec<f64>], targets: &[f64]) -> f64 {
    let n = windows.len() as f64;
    windows
        .iter()
        .zip(targets)
        .map(|(w, t)| (reference(model, w) - t).powi(2))
        .sum::<f64>()
        / n
}

/// Worst relative error between tape gradients of a batch MSE loss and
/// central differences of the reference loss, over `cases` small random
/// dense or recurrent models.
pub fn model_gradcheck(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let spec = ModelSpec {
            kind: if rng.random_bool(0.5) {
                ModelKind::Gru
            } else {
                ModelKind::Mlp
            },
            input_channels: rng.random_range(2..=3),
            history: rng.random_range(1..=4),
            layers: rng.random_range(1..=2),
            hidden_size: rng.random_range(1..=4),
        };
        let mut model = Model::init(spec, &mut rng).unwrap();
        randomize(&mut model, &mut rng, 0.8);
        let batch = 2;
        let windows: Vec<Vec<f64>> = (0..batch).map(|_| random_window(&mut rng, spec.window_len())).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut tape = Tape::new();
        let vars: Vec<_> = model.params().iter().map(|p| tape.leaf(p.clone(), true)).collect();
        let input = Tensor2D::from_fn(spec.window_len(), batch, |r, c| windows[c][r]);
        let out = model.forward_tape(&mut tape, &vars, &input).unwrap();
        let target = tape.leaf(Tensor2D::from_fn(1, batch, |_, c| targets[c]), false);
        let loss = tape.mse_loss(out, target).unwrap();
        let grads = tape.backward(loss).unwrap();

        for (k, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v).unwrap().clone();
            for idx in 0..analytic.len() {
                let mut plus = model.clone();
                plus.params_mut()[k].data_mut()[idx] += H;
                let mut minus = model.clone();
                minus.params_mut()[k].data_mut()[idx] -= H;
                let numeric = (reference_loss(&plus, &windows, &targets) - reference_loss(&minus, &windows, &targets))
                    / (2.0 * H);
                let a = analytic.data()[idx];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3));
            }
        }
    }
    worst
}
