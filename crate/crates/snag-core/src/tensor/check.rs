//! Central-difference gradient checking.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::{Tensor, TensorError};

const STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares analytic gradients of a scalar-valued function against central
/// finite differences (step 1e-5) at the given point.
///
/// `f` builds the function on a fresh tape from leaves bound in `points`
/// order; it must be deterministic (seed any internal randomness per call).
/// The relative error denominator is `max(1, |analytic|, |numeric|)` so tiny
/// gradients do not blow up the ratio.
pub fn finite_diff_check<F>(f: F, points: &[Tensor], tolerance: f64) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let analytic = {
        let mut tape = Tape::new(true);
        let vars: Vec<Var> = points
            .iter()
            .map(|p| tape.leaf(&p.clone().with_grad()))
            .collect();
        let loss = f(&mut tape, &vars)?;
        if tape.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(tape.shape(loss).to_vec()));
        }
        tape.backward(loss)?;
        vars.iter().map(|&v| tape.harvest_grad(v)).collect::<Vec<_>>()
    };

    let eval = |perturbed: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new(true);
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.leaf(p)).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss)[0])
    };

    let mut max_rel_error: f64 = 0.0;
    let mut work: Vec<Tensor> = points.to_vec();
    for (pi, point) in points.iter().enumerate() {
        for k in 0..point.numel() {
            let orig = point.data()[k];
            work[pi].data_mut()[k] = orig + STEP;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - STEP;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[pi][k];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            max_rel_error = max_rel_error.max(rel);
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    })
}

/// Contracts `y` against fixed weights: makes d(loss)/d(op output) non-uniform
/// without adding nonlinear truncation error of its own.
fn weighted_sum(tape: &mut Tape, y: Var, w: &[f64]) -> Result<Var, TensorError> {
    let shape = tape.shape(y).to_vec();
    let wv = tape.constant(shape, w.to_vec())?;
    let prod = tape.mul(y, wv)?;
    tape.sum_all(prod)
}

/// Uniform tensor in [lo, hi).
fn uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("valid shape")
}

/// Uniform tensor with every entry at least `margin` away from zero, so
/// perturbations of size `STEP` cannot cross a piecewise-linear kink.
fn uniform_off_zero(shape: Vec<usize>, margin: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = uniform(shape, -2.0, 2.0, rng);
    for v in t.data_mut() {
        if v.abs() < margin {
            *v += if *v >= 0.0 { margin } else { -margin };
        }
    }
    t
}

/// `[rows, cols]` tensor whose entries within each column are pairwise at
/// least 0.15 apart, so max reductions have a stable argmax under perturbation.
fn distinct_columns(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = vec![0.0; rows * cols];
    for j in 0..cols {
        let mut levels: Vec<usize> = (0..rows).collect();
        for i in (1..rows).rev() {
            levels.swap(i, rng.gen_range(0..=i));
        }
        for i in 0..rows {
            data[i * cols + j] = 0.25 * levels[i] as f64 + rng.gen_range(-0.05..0.05);
        }
    }
    Tensor::from_vec(vec![rows, cols], data).expect("valid shape")
}

/// Finite-difference sweep over every differentiable tape op at randomized
/// points. Inputs for piecewise-linear ops are kept away from their kinks;
/// everything else is exercised at generic positions. Returns one report per
/// op, in a fixed order.
pub fn op_sweep(seed: u64, tolerance: f64) -> Result<Vec<(&'static str, GradCheckReport)>, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports: Vec<(&'static str, GradCheckReport)> = Vec::new();

    let w12: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w6: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w18: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w15: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w9: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();

    macro_rules! run {
        ($name:expr, $points:expr, $f:expr) => {
            reports.push(($name, finite_diff_check($f, &$points, tolerance)?));
        };
    }

    let a34 = uniform(vec![3, 4], -2.0, 2.0, &mut rng);
    let b42 = uniform(vec![4, 2], -2.0, 2.0, &mut rng);
    let w = w6.clone();
    run!("matmul", [a34.clone(), b42], move |t: &mut Tape, v: &[Var]| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y, &w)
    });

    let x = uniform(vec![3, 4], -2.0, 2.0, &mut rng);
    let y2 = uniform(vec![3, 4], -2.0, 2.0, &mut rng);
    for (name, f) in [
        ("add", (|t: &mut Tape, a: Var, b: Var| t.add(a, b)) as fn(&mut Tape, Var, Var) -> Result<Var, TensorError>),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
    ] {
        let w = w12.clone();
        run!(name, [x.clone(), y2.clone()], move |t: &mut Tape, v: &[Var]| {
            let y = f(t, v[0], v[1])?;
            weighted_sum(t, y, &w)
        });
    }

    // maximum needs the two sides separated so the winner is stable.
    let ma = uniform(vec![3, 4], -2.0, 2.0, &mut rng);
    let mut mb = uniform(vec![3, 4], -2.0, 2.0, &mut rng);
    for (bv, &av) in mb.data_mut().iter_mut().zip(ma.data()) {
        if (*bv - av).abs() < 0.05 {
            *bv += 0.1;
        }
    }
    let w = w12.clone();
    run!("maximum", [ma, mb], move |t: &mut Tape, v: &[Var]| {
        let y = t.maximum(v[0], v[1])?;
        weighted_sum(t, y, &w)
    });

    let bias = uniform(vec![1, 4], -1.0, 1.0, &mut rng);
    let w = w12.clone();
    run!("add_bias", [x.clone(), bias], move |t: &mut Tape, v: &[Var]| {
        let y = t.add_bias(v[0], v[1])?;
        weighted_sum(t, y, &w)
    });

    let row = uniform(vec![1, 4], -1.0, 1.0, &mut rng);
    let w = w12.clone();
    run!("mul_row_vec", [x.clone(), row], move |t: &mut Tape, v: &[Var]| {
        let y = t.mul_row_vec(v[0], v[1])?;
        weighted_sum(t, y, &w)
    });

    let col = uniform(vec![3, 1], -1.0, 1.0, &mut rng);
    let w = w12.clone();
    run!("scale_rows", [x.clone(), col], move |t: &mut Tape, v: &[Var]| {
        let y = t.scale_rows(v[0], v[1])?;
        weighted_sum(t, y, &w)
    });

    let w = w12.clone();
    run!("scale", [x.clone()], move |t: &mut Tape, v: &[Var]| {
        let y = t.scale(v[0], 1.7)?;
        weighted_sum(t, y, &w)
    });
    let w = w12.clone();
    run!("add_scalar", [x.clone()], move |t: &mut Tape, v: &[Var]| {
        let y = t.add_scalar(v[0], -0.3)?;
        weighted_sum(t, y, &w)
    });

    let off = uniform_off_zero(vec![3, 4], 0.05, &mut rng);
    let w = w12.clone();
    run!("relu", [off.clone()], move |t: &mut Tape, v: &[Var]| {
        let y = t.relu(v[0])?;
        weighted_sum(t, y, &w)
    });
    let w = w12.clone();
    run!("leaky_relu", [off], move |t: &mut Tape, v: &[Var]| {
        let y = t.leaky_relu(v[0], 0.2)?;
        weighted_sum(t, y, &w)
    });

    // elu has a continuous first derivative, no margin needed.
    for (name, f) in [
        ("elu", (|t: &mut Tape, x: Var| t.elu(x)) as fn(&mut Tape, Var) -> Result<Var, TensorError>),
        ("tanh", |t, x| t.tanh(x)),
        ("sigmoid", |t, x| t.sigmoid(x)),
        ("exp", |t, x| t.exp(x)),
        ("row_softmax", |t, x| t.row_softmax(x)),
        ("row_log_softmax", |t, x| t.row_log_softmax(x)),
    ] {
        let w = w12.clone();
        run!(name, [x.clone()], move |t: &mut Tape, v: &[Var]| {
            let y = f(t, v[0])?;
            weighted_sum(t, y, &w)
        });
    }

    let pos = uniform(vec![3, 4], 0.5, 3.0, &mut rng);
    let w = w12.clone();
    run!("log", [pos], move |t: &mut Tape, v: &[Var]| {
        let y = t.log(v[0])?;
        weighted_sum(t, y, &w)
    });

    let c0a = uniform(vec![2, 3], -2.0, 2.0, &mut rng);
    let c0b = uniform(vec![1, 3], -2.0, 2.0, &mut rng);
    let w = w9.clone();
    run!("concat_rows", [c0a, c0b], move |t: &mut Tape, v: &[Var]| {
        let y = t.concat(&[v[0], v[1]], 0)?;
        weighted_sum(t, y, &w)
    });
    let c1a = uniform(vec![2, 2], -2.0, 2.0, &mut rng);
    let c1b = uniform(vec![2, 4], -2.0, 2.0, &mut rng);
    let w = w12.clone();
    run!("concat_cols", [c1a, c1b], move |t: &mut Tape, v: &[Var]| {
        let y = t.concat(&[v[0], v[1]], 1)?;
        weighted_sum(t, y, &w)
    });

    let gx = uniform(vec![4, 3], -2.0, 2.0, &mut rng);
    let idx = Arc::new(vec![0usize, 2, 2, 3, 1]);
    let w = w15.clone();
    run!("gather_rows", [gx], move |t: &mut Tape, v: &[Var]| {
        let y = t.gather_rows(v[0], &idx)?;
        weighted_sum(t, y, &w)
    });

    let seg = Arc::new(vec![0usize, 0, 1, 3, 3, 3]);
    let sx = uniform(vec![6, 3], -2.0, 2.0, &mut rng);
    for (name, f) in [
        (
            "segment_sum",
            (|t: &mut Tape, x: Var, s: &Arc<Vec<usize>>| t.segment_sum(x, s, 4))
                as fn(&mut Tape, Var, &Arc<Vec<usize>>) -> Result<Var, TensorError>,
        ),
        ("segment_mean", |t, x, s| t.segment_mean(x, s, 4)),
    ] {
        let w = w12.clone();
        let seg = Arc::clone(&seg);
        run!(name, [sx.clone()], move |t: &mut Tape, v: &[Var]| {
            let y = f(t, v[0], &seg)?;
            weighted_sum(t, y, &w)
        });
    }
    let w = w18.clone();
    let seg2 = Arc::clone(&seg);
    run!("segment_softmax", [sx], move |t: &mut Tape, v: &[Var]| {
        let y = t.segment_softmax(v[0], &seg2, 4)?;
        weighted_sum(t, y, &w)
    });

    let dx = distinct_columns(6, 3, &mut rng);
    let w = w12.clone();
    let seg3 = Arc::clone(&seg);
    run!("segment_max", [dx], move |t: &mut Tape, v: &[Var]| {
        let y = t.segment_max(v[0], &seg3, 4)?;
        weighted_sum(t, y, &w)
    });

    // Dropout reseeds per call, so every evaluation applies the same mask.
    let w = w12.clone();
    run!("dropout", [x.clone()], move |t: &mut Tape, v: &[Var]| {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(12345);
        let y = t.dropout(v[0], 0.35, &mut drop_rng)?;
        weighted_sum(t, y, &w)
    });

    run!("sum_all", [x.clone()], |t: &mut Tape, v: &[Var]| t.sum_all(v[0]));
    run!("mean_all", [x.clone()], |t: &mut Tape, v: &[Var]| t.mean_all(v[0]));

    let logits = uniform(vec![4, 3], -2.0, 2.0, &mut rng);
    run!("masked_softmax_cross_entropy", [logits], |t: &mut Tape, v: &[Var]| {
        t.masked_softmax_cross_entropy(v[0], &[0, 2, 1, 1], &[true, false, true, true])
    });

    let blogits = uniform(vec![3, 4], -2.0, 2.0, &mut rng);
    let targets: Arc<Vec<f64>> = Arc::new((0..12).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect());
    run!("masked_sigmoid_bce", [blogits], move |t: &mut Tape, v: &[Var]| {
        t.masked_sigmoid_bce(v[0], &targets, &[true, true, false])
    });

    Ok(reports)
}
