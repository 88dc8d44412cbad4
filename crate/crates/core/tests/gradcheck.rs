//! Central finite differences against the tape, one primitive at a time.

use cqdd::autodiff::{Tape, Tensor2D, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const CASES: usize = 100;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor2D {
    Tensor2D::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5))
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>;

/// Loss = mse(op(inputs), target), evaluated on a fresh tape.
fn loss(inputs: &[Tensor2D], target: &Tensor2D, op: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let out = op(&mut tape, &vars).unwrap();
    let tgt = tape.leaf(target.clone(), false);
    let l = tape.mse_loss(out, tgt).unwrap();
    tape.value(l).data()[0]
}

fn check(name: &str, shapes: &[(usize, usize)], op: &Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37 ^ name.len() as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let inputs: Vec<Tensor2D> = shapes.iter().map(|&(r, c)| random(&mut rng, r, c)).collect();
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = op(&mut tape, &vars).unwrap();
        let (r, c) = tape.value(out).shape();
        let target = random(&mut rng, r, c);
        let tgt = tape.leaf(target.clone(), false);
        let l = tape.mse_loss(out, tgt).unwrap();
        let grads = tape.backward(l).unwrap();

        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).expect("tracked leaf has a gradient");
            for idx in 0..input.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[idx] += H;
                let mut minus = inputs.clone();
                minus[k].data_mut()[idx] -= H;
                let numeric = (loss(&plus, &target, op) - loss(&minus, &target, op)) / (2.0 * H);
                let a = analytic.data()[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
    }
    assert!(worst < 1e-4, "{name}: worst relative error {worst:e}");
}

#[test]
fn matmul() {
    check("matmul", &[(3, 4), (4, 2)], &|t, v| t.matmul(v[0], v[1]));
}

#[test]
fn add_bias() {
    check("add_bias", &[(3, 5), (3, 1)], &|t, v| t.add_bias(v[0], v[1]));
}

#[test]
fn add() {
    check("add", &[(2, 3), (2, 3)], &|t, v| t.add(v[0], v[1]));
}

#[test]
fn sub() {
    check("sub", &[(2, 3), (2, 3)], &|t, v| t.sub(v[0], v[1]));
}

#[test]
fn mul() {
    check("mul", &[(2, 3), (2, 3)], &|t, v| t.mul(v[0], v[1]));
}

#[test]
fn sigmoid() {
    check("sigmoid", &[(3, 3)], &|t, v| t.sigmoid(v[0]));
}

#[test]
fn tanh() {
    check("tanh", &[(3, 3)], &|t, v| t.tanh(v[0]));
}

#[test]
fn concat_rows() {
    check("concat_rows", &[(2, 3), (1, 3), (3, 3)], &|t, v| t.concat_rows(v));
}

#[test]
fn slice_rows() {
    check("slice_rows", &[(5, 2)], &|t, v| t.slice_rows(v[0], 1, 4));
}

#[test]
fn mse_both_sides() {
    check("mse", &[(2, 4), (2, 4)], &|t, v| {
        let l = t.mse_loss(v[0], v[1])?;
        Ok(l)
    });
}

#[test]
fn reused_input_accumulates() {
    // x appears on both sides of the product and in the sum
    check("reuse", &[(2, 2)], &|t, v| {
        let sq = t.mul(v[0], v[0])?;
        let s = t.sigmoid(v[0])?;
        t.add(sq, s)
    });
}

#[test]
fn gru_like_cell() {
    // one gated update with shared weights applied twice
    check("cell", &[(6, 2), (6, 3), (3, 4), (6, 1)], &|t, v| {
        let (w, u, x0, b) = (v[0], v[1], v[2], v[3]);
        let mut h = t.slice_rows(x0, 0, 3)?;
        for _ in 0..2 {
            let xin = t.slice_rows(x0, 1, 3)?;
            let a = t.matmul(w, xin)?;
            let rec = t.matmul(u, h)?;
            let pre = t.add(a, rec)?;
            let pre = t.add_bias(pre, b)?;
            let z = t.slice_rows(pre, 0, 3)?;
            let z = t.sigmoid(z)?;
            let c = t.slice_rows(pre, 3, 6)?;
            let c = t.tanh(c)?;
            let d = t.sub(c, h)?;
            let zd = t.mul(z, d)?;
            h = t.add(h, zd)?;
        }
        Ok(h)
    });
}
