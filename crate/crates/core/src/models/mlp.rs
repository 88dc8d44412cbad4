//! Fully connected network on the flattened window: tanh hidden layers and a
//! linear output.

use crate::autodiff::fastmath::tanh_in_place;
use crate::autodiff::{Tape, Tensor2D, Var};

use super::{dot, ModelError, ModelSpec};

pub(super) fn forward_tape(
    spec: &ModelSpec,
    tape: &mut Tape,
    params: &[Var],
    input: &Tensor2D,
) -> Result<Var, ModelError> {
    let mut x = tape.leaf_copy(input, false);
    for layer in 0..spec.layers {
        let y = tape.matmul(params[2 * layer], x)?;
        let y = tape.add_bias(y, params[2 * layer + 1])?;
        x = if layer + 1 == spec.layers { y } else { tape.tanh(y)? };
    }
    Ok(x)
}

pub(super) struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

pub(super) fn scratch(spec: &ModelSpec) -> Scratch {
    Scratch {
        a: vec![0.0; spec.hidden_size],
        b: vec![0.0; spec.hidden_size],
    }
}

pub(super) fn predict(spec: &ModelSpec, params: &[Tensor2D], window: &[f64], scratch: &mut Scratch) -> f64 {
    let Scratch { a, b } = scratch;
    let last = spec.layers - 1;
    for layer in 0..last {
        let (w, bias) = (&params[2 * layer], params[2 * layer + 1].data());
        let input: &[f64] = if layer == 0 { window } else { a };
        for (i, out) in b.iter_mut().enumerate() {
            *out = dot(w.row(i), input) + bias[i];
        }
        tanh_in_place(b);
        std::mem::swap(a, b);
    }
    let input: &[f64] = if last == 0 { window } else { a };
    dot(params[2 * last].data(), input) + params[2 * last + 1].data()[0]
}
