//! Stacked GRU with a linear head on the last hidden state.
//!
//! Per layer the parameters are: input weights `3H × in` (update, reset and
//! candidate gates stacked as rows), recurrent weights for update/reset
//! `2H × H`, recurrent candidate weights `H × H`, and a `3H × 1` bias.

use crate::autodiff::fastmath::{sigmoid_in_place, tanh_in_place};
use crate::autodiff::{matmul_into, Tape, Tensor2D, Var, View};

use super::{dot, ModelError, ModelSpec};

const PARAMS_PER_LAYER: usize = 4;

pub(super) fn forward_tape(
    spec: &ModelSpec,
    tape: &mut Tape,
    params: &[Var],
    input: &Tensor2D,
) -> Result<Var, ModelError> {
    let (c, l, h) = (spec.input_channels, spec.history, spec.hidden_size);
    let batch = input.cols();
    let mut sequence: Vec<Var> = (0..l)
        .map(|t| {
            tape.leaf_with(c, batch, false, |d| {
                for ch in 0..c {
                    d[ch * batch..(ch + 1) * batch].copy_from_slice(input.row(ch * l + t));
                }
            })
        })
        .collect();

    let mut state = None;
    for layer in 0..spec.layers {
        let p = &params[layer * PARAMS_PER_LAYER..(layer + 1) * PARAMS_PER_LAYER];
        let (w, u_gates, u_cand, bias) = (p[0], p[1], p[2], p[3]);
        let mut hidden = tape.leaf_with(h, batch, false, |d| d.fill(0.0));
        let mut outputs = Vec::with_capacity(l);
        for x in &sequence {
            let projected = tape.matmul(w, *x)?;
            let projected = tape.add_bias(projected, bias)?;
            let recurrent = tape.matmul(u_gates, hidden)?;
            let gate_in = tape.slice_rows(projected, 0, 2 * h)?;
            let gates = tape.add(gate_in, recurrent)?;
            let gates = tape.sigmoid(gates)?;
            let update = tape.slice_rows(gates, 0, h)?;
            let reset = tape.slice_rows(gates, h, 2 * h)?;
            let reset_hidden = tape.mul(reset, hidden)?;
            let cand_rec = tape.matmul(u_cand, reset_hidden)?;
            let cand_in = tape.slice_rows(projected, 2 * h, 3 * h)?;
            let cand = tape.add(cand_in, cand_rec)?;
            let cand = tape.tanh(cand)?;
            let delta = tape.sub(cand, hidden)?;
            let delta = tape.mul(update, delta)?;
            hidden = tape.add(hidden, delta)?;
            outputs.push(hidden);
        }
        state = Some(hidden);
        sequence = outputs;
    }
    let head = spec.layers * PARAMS_PER_LAYER;
    let last = state.expect("at least one layer");
    let out = tape.matmul(params[head], last)?;
    Ok(tape.add_bias(out, params[head + 1])?)
}

/// Buffers and transposed recurrent weights for single-window inference.
pub(super) struct Scratch {
    /// input projections plus bias, one row of `3H` per time step
    proj: Vec<f64>,
    /// layer outputs, one row of `H` per time step
    seq: Vec<f64>,
    hidden: Vec<f64>,
    gates: Vec<f64>,
    reset_hidden: Vec<f64>,
    cand: Vec<f64>,
    /// per layer: recurrent gate weights transposed (`H × 2H`) and candidate
    /// weights transposed (`H × H`)
    recurrent_t: Vec<(Vec<f64>, Vec<f64>)>,
}

pub(super) fn scratch(spec: &ModelSpec, params: &[Tensor2D]) -> Scratch {
    let (l, h) = (spec.history, spec.hidden_size);
    let recurrent_t = (0..spec.layers)
        .map(|layer| {
            let p = &params[layer * PARAMS_PER_LAYER..];
            (p[1].transpose().into_data(), p[2].transpose().into_data())
        })
        .collect();
    Scratch {
        proj: vec![0.0; 3 * h * l],
        seq: vec![0.0; h * l],
        hidden: vec![0.0; h],
        gates: vec![0.0; 2 * h],
        reset_hidden: vec![0.0; h],
        cand: vec![0.0; h],
        recurrent_t,
    }
}

/// `out += Σ_k rows[k] · v[k]` where `rows` is `v.len() × out.len()`.
#[inline(always)]
fn accumulate_columns(out: &mut [f64], rows: &[f64], v: &[f64]) {
    let n = out.len();
    for (row, &vk) in rows.chunks_exact(n).zip(v) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * vk;
        }
    }
}

pub(super) fn predict(spec: &ModelSpec, params: &[Tensor2D], window: &[f64], s: &mut Scratch) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the required CPU feature was detected at runtime.
        return unsafe { predict_avx2(spec, params, window, s) };
    }
    predict_portable(spec, params, window, s)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn predict_avx2(spec: &ModelSpec, params: &[Tensor2D], window: &[f64], s: &mut Scratch) -> f64 {
    predict_portable(spec, params, window, s)
}

/// Single-window forward. Input projections for the whole sequence go
/// through one matrix product per layer; the recurrence accumulates
/// transposed weight rows so the inner loops run over contiguous memory.
#[inline(always)]
fn predict_portable(spec: &ModelSpec, params: &[Tensor2D], window: &[f64], s: &mut Scratch) -> f64 {
    let (l, h) = (spec.history, spec.hidden_size);
    for layer in 0..spec.layers {
        let p = &params[layer * PARAMS_PER_LAYER..(layer + 1) * PARAMS_PER_LAYER];
        let (w, bias) = (&p[0], p[3].data());
        let input_size = w.cols();
        // time-major view of the layer input: element (t, c)
        let input = if layer == 0 {
            View {
                data: window,
                row_stride: 1,
                col_stride: l,
            }
        } else {
            View {
                data: &s.seq,
                row_stride: h,
                col_stride: 1,
            }
        };
        let weights_t = View {
            data: w.data(),
            row_stride: 1,
            col_stride: input_size,
        };
        matmul_into(l, input_size, 3 * h, input, weights_t, &mut s.proj);
        for row in s.proj.chunks_exact_mut(3 * h) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }

        let (gates_t, cand_t) = &s.recurrent_t[layer];
        s.hidden.fill(0.0);
        for t in 0..l {
            let proj = &s.proj[t * 3 * h..(t + 1) * 3 * h];
            s.gates.copy_from_slice(&proj[..2 * h]);
            accumulate_columns(&mut s.gates, gates_t, &s.hidden);
            sigmoid_in_place(&mut s.gates);
            for ((rh, r), hv) in s.reset_hidden.iter_mut().zip(&s.gates[h..]).zip(&s.hidden) {
                *rh = r * hv;
            }
            s.cand.copy_from_slice(&proj[2 * h..]);
            accumulate_columns(&mut s.cand, cand_t, &s.reset_hidden);
            tanh_in_place(&mut s.cand);
            let out = &mut s.seq[t * h..(t + 1) * h];
            for i in 0..h {
                s.hidden[i] += s.gates[i] * (s.cand[i] - s.hidden[i]);
                out[i] = s.hidden[i];
            }
        }
    }
    let head = spec.layers * PARAMS_PER_LAYER;
    dot(params[head].data(), &s.hidden) + params[head + 1].data()[0]
}
