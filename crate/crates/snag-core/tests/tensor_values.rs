//! Forward-value oracles and error contracts for the tensor layer.

use std::sync::Arc;

use approx::assert_relative_eq;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snag_core::tensor::adam::AdamState;
use snag_core::tensor::tape::Tape;
use snag_core::tensor::{Tensor, TensorError};

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

#[test]
fn matmul_matches_hand_computation() {
    let mut tape = Tape::new(false);
    let a = tape.leaf(&t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.leaf(&t(2, 2, &[5.0, 6.0, 7.0, 8.0]));
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(y), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_rejects_inner_dim_mismatch() {
    let mut tape = Tape::new(false);
    let a = tape.leaf(&t(2, 3, &[0.0; 6]));
    let b = tape.leaf(&t(2, 2, &[0.0; 4]));
    assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn relu_clamps_and_gates_gradient() {
    let mut tape = Tape::new(false);
    let x = tape.leaf(&t(1, 3, &[-1.0, 0.0, 2.0]).with_grad());
    let y = tape.relu(x).unwrap();
    assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);

    let mut tape = Tape::new(false);
    let x = tape.leaf(&t(1, 2, &[-1.0, 2.0]).with_grad());
    let y = tape.relu(x).unwrap();
    let s = tape.sum_all(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0]);
}

#[test]
fn elu_is_exp_minus_one_below_zero() {
    let mut tape = Tape::new(false);
    let x = tape.leaf(&t(1, 3, &[-2.0, 0.0, 1.5]));
    let y = tape.elu(x).unwrap();
    let v = tape.value(y);
    assert_relative_eq!(v[0], (-2.0f64).exp() - 1.0, max_relative = 1e-15);
    assert_eq!(v[1], 0.0);
    assert_eq!(v[2], 1.5);
}

#[test]
fn softmax_cross_entropy_matches_closed_form() {
    // Single masked row [2, 0] with label 0: loss = ln(1 + e^-2).
    let mut tape = Tape::new(false);
    let logits = tape.leaf(&t(1, 2, &[2.0, 0.0]).with_grad());
    let loss = tape
        .masked_softmax_cross_entropy(logits, &[0], &[true])
        .unwrap();
    assert_relative_eq!(tape.value(loss)[0], 0.126928011042972, epsilon = 1e-12);

    tape.backward(loss).unwrap();
    let g = tape.grad(logits).unwrap();
    let p0 = (2.0f64).exp() / ((2.0f64).exp() + 1.0);
    assert_relative_eq!(g[0], p0 - 1.0, epsilon = 1e-12);
    assert_relative_eq!(g[1], 1.0 - p0, epsilon = 1e-12);
}

#[test]
fn cross_entropy_ignores_unmasked_rows() {
    let mut tape = Tape::new(false);
    let logits = tape.leaf(&t(2, 2, &[2.0, 0.0, 100.0, -100.0]).with_grad());
    let loss = tape
        .masked_softmax_cross_entropy(logits, &[0, 1], &[true, false])
        .unwrap();
    assert_relative_eq!(tape.value(loss)[0], 0.126928011042972, epsilon = 1e-12);
    tape.backward(loss).unwrap();
    let g = tape.grad(logits).unwrap();
    assert_eq!(&g[2..], &[0.0, 0.0]);
}

#[test]
fn cross_entropy_rejects_bad_label_and_empty_mask() {
    let mut tape = Tape::new(false);
    let logits = tape.leaf(&t(1, 2, &[0.0, 0.0]));
    assert!(tape.masked_softmax_cross_entropy(logits, &[2], &[true]).is_err());
    assert!(tape.masked_softmax_cross_entropy(logits, &[0], &[false]).is_err());
}

#[test]
fn sigmoid_bce_matches_closed_form() {
    // logit 0 against target 1: ln 2. Gradient (sigma(0) - 1) = -0.5.
    let mut tape = Tape::new(false);
    let logits = tape.leaf(&t(1, 1, &[0.0]).with_grad());
    let targets = Arc::new(vec![1.0]);
    let loss = tape.masked_sigmoid_bce(logits, &targets, &[true]).unwrap();
    assert_relative_eq!(tape.value(loss)[0], std::f64::consts::LN_2, epsilon = 1e-15);
    tape.backward(loss).unwrap();
    assert_relative_eq!(tape.grad(logits).unwrap()[0], -0.5, epsilon = 1e-15);
}

#[test]
fn bce_is_stable_at_extreme_logits() {
    let mut tape = Tape::new(false);
    let logits = tape.leaf(&t(1, 2, &[800.0, -800.0]));
    let targets = Arc::new(vec![1.0, 0.0]);
    let loss = tape.masked_sigmoid_bce(logits, &targets, &[true]).unwrap();
    assert_eq!(tape.value(loss)[0], 0.0);
}

#[test]
fn segment_reductions_match_hand_computation() {
    let x = t(4, 1, &[1.0, 2.0, 3.0, 4.0]);
    let seg = Arc::new(vec![0usize, 0, 1, 1]);

    let mut tape = Tape::new(false);
    let xv = tape.leaf(&x);
    let s = tape.segment_sum(xv, &seg, 2).unwrap();
    assert_eq!(tape.value(s), &[3.0, 7.0]);
    let m = tape.segment_mean(xv, &seg, 2).unwrap();
    assert_eq!(tape.value(m), &[1.5, 3.5]);
    let mx = tape.segment_max(xv, &seg, 2).unwrap();
    assert_eq!(tape.value(mx), &[2.0, 4.0]);
}

#[test]
fn empty_segments_yield_zero_rows() {
    let x = t(2, 2, &[1.0, -1.0, 3.0, 5.0]);
    let seg = Arc::new(vec![2usize, 2]);
    let mut tape = Tape::new(false);
    let xv = tape.leaf(&x);
    for var in [
        tape.segment_sum(xv, &seg, 4).unwrap(),
        tape.segment_mean(xv, &seg, 4).unwrap(),
        tape.segment_max(xv, &seg, 4).unwrap(),
    ] {
        let v = tape.value(var);
        assert_eq!(tape.shape(var), &[4, 2]);
        assert_eq!(&v[0..4], &[0.0; 4], "segments 0..2 are empty");
        assert_eq!(&v[6..8], &[0.0; 2], "segment 3 is empty");
    }
}

#[test]
fn segment_softmax_sums_to_one_within_segments() {
    let x = t(5, 2, &[0.3, -1.0, 2.0, 0.5, -0.7, 0.0, 4.0, 4.0, 1.0, -2.0]);
    let seg = Arc::new(vec![0usize, 0, 0, 2, 2]);
    let mut tape = Tape::new(false);
    let xv = tape.leaf(&x);
    let y = tape.segment_softmax(xv, &seg, 3).unwrap();
    let v = tape.value(y);
    for col in 0..2 {
        let s0: f64 = (0..3).map(|r| v[r * 2 + col]).sum();
        let s2: f64 = (3..5).map(|r| v[r * 2 + col]).sum();
        assert_relative_eq!(s0, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s2, 1.0, epsilon = 1e-12);
    }
}

#[test]
fn gather_rows_repeats_and_scatters_gradient() {
    let mut tape = Tape::new(false);
    let x = tape.leaf(&t(2, 2, &[1.0, 2.0, 3.0, 4.0]).with_grad());
    let idx = Arc::new(vec![1usize, 1, 0]);
    let y = tape.gather_rows(x, &idx).unwrap();
    assert_eq!(tape.value(y), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
    let s = tape.sum_all(y).unwrap();
    tape.backward(s).unwrap();
    // Row 1 was gathered twice, so its gradient doubles.
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 2.0, 2.0]);
}

#[test]
fn maximum_routes_ties_to_first_input() {
    let mut tape = Tape::new(false);
    let a = tape.leaf(&t(1, 1, &[1.0]).with_grad());
    let b = tape.leaf(&t(1, 1, &[1.0]).with_grad());
    let y = tape.maximum(a, b).unwrap();
    let s = tape.sum_all(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).unwrap(), &[1.0]);
    assert!(tape.grad(b).is_none() || tape.grad(b).unwrap() == [0.0]);
}

#[test]
fn dropout_rate_zero_and_eval_mode_are_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new(true);
    let x = tape.leaf(&t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.dropout(x, 0.0, &mut rng).unwrap();
    assert_eq!(x, y, "rate 0 returns the input handle unchanged");

    let mut tape = Tape::new(false);
    let x = tape.leaf(&t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let y = tape.dropout(x, 0.9, &mut rng).unwrap();
    assert_eq!(x, y, "eval mode returns the input handle unchanged");
}

#[test]
fn dropout_scales_kept_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::new(true);
    let x = tape.leaf(&Tensor::full(vec![1, 1000], 1.0).unwrap());
    let y = tape.dropout(x, 0.5, &mut rng).unwrap();
    let v = tape.value(y);
    assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
    let kept = v.iter().filter(|&&e| e != 0.0).count();
    assert!((350..=650).contains(&kept), "kept {kept} of 1000 at rate 0.5");
}

#[test]
fn row_softmax_and_log_softmax_agree() {
    let mut tape = Tape::new(false);
    let x = tape.leaf(&t(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]));
    let p = tape.row_softmax(x).unwrap();
    let lp = tape.row_log_softmax(x).unwrap();
    for (a, b) in tape.value(p).iter().zip(tape.value(lp)) {
        assert_relative_eq!(a.ln(), *b, epsilon = 1e-12);
    }
    for row in tape.value(p).chunks(3) {
        assert_relative_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn non_finite_results_are_rejected_at_the_op() {
    let mut tape = Tape::new(false);
    let x = tape.leaf(&t(1, 1, &[1000.0]));
    assert!(matches!(tape.exp(x), Err(TensorError::NonFinite { op: "exp" })));
    let z = tape.leaf(&t(1, 1, &[0.0]));
    assert!(matches!(tape.log(z), Err(TensorError::NonFinite { op: "log" })));
    assert!(Tensor::from_vec(vec![1], vec![f64::NAN]).is_err());
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new(false);
    let x = tape.leaf(&t(1, 2, &[1.0, 2.0]).with_grad());
    let y = tape.relu(x).unwrap();
    assert!(matches!(tape.backward(y), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn unreached_parameters_harvest_zero_gradients() {
    let mut tape = Tape::new(false);
    let used = tape.leaf(&t(1, 2, &[1.0, 2.0]).with_grad());
    let unused = tape.leaf(&t(1, 2, &[3.0, 4.0]).with_grad());
    let s = tape.sum_all(used).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.harvest_grad(used), vec![1.0, 1.0]);
    assert_eq!(tape.harvest_grad(unused), vec![0.0, 0.0]);
    assert!(tape.grad(unused).is_none());
}

#[test]
fn concat_stacks_rows_and_widens_columns() {
    let mut tape = Tape::new(false);
    let a = tape.leaf(&t(1, 2, &[1.0, 2.0]));
    let b = tape.leaf(&t(2, 2, &[3.0, 4.0, 5.0, 6.0]));
    let y = tape.concat(&[a, b], 0).unwrap();
    assert_eq!(tape.shape(y), &[3, 2]);
    assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

    let c = tape.leaf(&t(1, 3, &[7.0, 8.0, 9.0]));
    let y = tape.concat(&[a, c], 1).unwrap();
    assert_eq!(tape.shape(y), &[1, 5]);
    assert_eq!(tape.value(y), &[1.0, 2.0, 7.0, 8.0, 9.0]);

    assert!(tape.concat(&[a, b], 1).is_err(), "row counts differ");
    assert!(tape.concat(&[a, c], 0).is_err(), "column counts differ");
}

#[test]
fn adam_first_step_moves_by_learning_rate_against_gradient_sign() {
    let mut p = Tensor::from_vec(vec![2], vec![1.0, -3.0]).unwrap().with_grad();
    p.set_grad(vec![0.5, -0.25]).unwrap();
    let mut state = AdamState::new(&[&p], 0.1);
    state.step(&mut [&mut p]).unwrap();
    // Bias-corrected first step is lr * g / (|g| + eps), i.e. lr * sign(g).
    assert_relative_eq!(p.data()[0], 1.0 - 0.1, epsilon = 1e-8);
    assert_relative_eq!(p.data()[1], -3.0 + 0.1, epsilon = 1e-8);
    assert_eq!(p.grad().unwrap(), &[0.0, 0.0], "gradients are zeroed after the step");
    assert_eq!(state.step_count(), 1);
}

#[test]
fn adam_errors_when_a_gradient_is_missing() {
    let mut p = Tensor::from_vec(vec![1], vec![1.0]).unwrap().with_grad();
    let mut state = AdamState::new(&[&p], 0.1);
    assert!(matches!(
        state.step(&mut [&mut p]),
        Err(TensorError::MissingGrad { index: 0 })
    ));
}

#[test]
fn glorot_respects_fan_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = Tensor::glorot(30, 20, &mut rng);
    let limit = (6.0f64 / 50.0).sqrt();
    assert!(w.data().iter().all(|v| v.abs() < limit));
    assert!(w.requires_grad());
    // Same seed, same weights.
    let mut rng2 = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(w, Tensor::glorot(30, 20, &mut rng2));
}
