//! Aggregation primitives: the per-layer neighborhood aggregators and the
//! cross-layer aggregators that combine selected layer outputs.
//!
//! Every node aggregator computes `act(W * agg({h_u : u in N(v)}) + b)` where
//! the neighborhood includes the node itself (the graph must carry self
//! loops). The attention variants fold `W` into the aggregate itself and the
//! bias is applied just before the activation in all cases, so each kind has
//! exactly one bias row.
//!
//! Parameter layouts consumed by [`node_aggregate`], in slot order:
//!
//! | kind                                   | slots                                  |
//! |----------------------------------------|----------------------------------------|
//! | `gcn`, `sage-sum/mean/max`, `mlp`      | `w [d_in,d_out]`, `b [1,d_out]`        |
//! | `sage-lstm`                            | 12 LSTM tensors, `w [d_out,d_out]`, `b`|
//! | `gat`, `gat-sym`, `gat-linear`         | `w`, `b`, `a_l [d_out,1]`, `a_r [d_out,1]` |
//! | `gat-cos`                              | `w`, `b`, `a_l [1,d_out]`, `a_r [1,d_out]` |
//! | `gat-gen-linear`                       | `w`, `b`, `w_l [d_in,d_out]`, `w_r [d_in,d_out]`, `w_g [d_out,1]` |
//!
//! LSTM tensor order within a cell follows [`crate::tensor::lstm::LstmParams::tensors`].

use std::sync::Arc;

use crate::graph::Graph;
use crate::tensor::lstm;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::TensorError;

use super::{LayerAggregatorKind, ModelError, NodeAggregatorKind};

/// Nonlinearity applied after the linear transform of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Identity,
}

/// Negative slope applied to raw attention scores before their softmax.
pub const ATTENTION_SLOPE: f64 = 0.2;

fn apply(tape: &mut Tape, act: Activation, x: Var) -> Result<Var, TensorError> {
    match act {
        Activation::Elu => tape.elu(x),
        Activation::Identity => Ok(x),
    }
}

/// Number of parameter tensors a node aggregator expects.
pub fn node_param_count(kind: NodeAggregatorKind) -> usize {
    use NodeAggregatorKind::*;
    match kind {
        Gcn | SageSum | SageMean | SageMax | Mlp => 2,
        SageLstm => 3 * lstm::GATES + 2,
        Gat | GatSym | GatCos | GatLinear => 4,
        GatGenLinear => 5,
    }
}

fn check_params(kind: NodeAggregatorKind, params: &[Var]) -> Result<(), ModelError> {
    let want = node_param_count(kind);
    if params.len() != want {
        return Err(ModelError::Invalid(format!(
            "aggregator {kind} takes {want} parameter tensors, got {}",
            params.len()
        )));
    }
    Ok(())
}

/// One aggregation layer: neighborhood aggregate of `h [N, d_in]`, linear
/// transform, bias, activation. `g` must contain a self loop at every node.
pub fn node_aggregate(
    tape: &mut Tape,
    kind: NodeAggregatorKind,
    g: &Graph,
    h: Var,
    params: &[Var],
    act: Activation,
) -> Result<Var, ModelError> {
    check_params(kind, params)?;
    if !g.has_all_self_loops() {
        return Err(ModelError::Invalid(
            "aggregation requires a self loop at every node; call add_self_loops first".into(),
        ));
    }
    let n = g.num_nodes();
    if tape.shape(h)[0] != n {
        return Err(ModelError::Invalid(format!(
            "feature rows {} do not match the {} graph nodes",
            tape.shape(h)[0],
            n
        )));
    }
    use NodeAggregatorKind::*;
    let agg = match kind {
        Mlp => h,
        Gcn => {
            let coeff = gcn_coefficients(tape, g)?;
            let hn = tape.gather_rows(h, g.edge_neighbors())?;
            let scaled = tape.scale_rows(hn, coeff)?;
            tape.segment_sum(scaled, g.edge_centers(), n)?
        }
        SageSum => {
            let hn = tape.gather_rows(h, g.edge_neighbors())?;
            tape.segment_sum(hn, g.edge_centers(), n)?
        }
        SageMean => {
            let hn = tape.gather_rows(h, g.edge_neighbors())?;
            tape.segment_mean(hn, g.edge_centers(), n)?
        }
        SageMax => {
            let hn = tape.gather_rows(h, g.edge_neighbors())?;
            tape.segment_max(hn, g.edge_centers(), n)?
        }
        SageLstm => {
            let cell = lstm::bind_vars(&params[0..12]);
            return sage_lstm(tape, g, h, &cell, params[12], params[13], act);
        }
        Gat | GatSym | GatCos | GatLinear | GatGenLinear => {
            let z = tape.matmul(h, params[0])?;
            let alpha = attention_from_scores(tape, kind, g, h, z, params)?;
            let zn = tape.gather_rows(z, g.edge_neighbors())?;
            let weighted = tape.scale_rows(zn, alpha)?;
            let out = tape.segment_sum(weighted, g.edge_centers(), n)?;
            let biased = tape.add_bias(out, params[1])?;
            return Ok(apply(tape, act, biased)?);
        }
    };
    let lin = tape.matmul(agg, params[0])?;
    let biased = tape.add_bias(lin, params[1])?;
    Ok(apply(tape, act, biased)?)
}

/// Per-edge attention weights for an attention aggregator, `[E, 1]`, summing
/// to one within each node's neighborhood. `None` for the other kinds.
pub fn attention_weights(
    tape: &mut Tape,
    kind: NodeAggregatorKind,
    g: &Graph,
    h: Var,
    params: &[Var],
) -> Result<Option<Var>, ModelError> {
    use NodeAggregatorKind::*;
    if !matches!(kind, Gat | GatSym | GatCos | GatLinear | GatGenLinear) {
        return Ok(None);
    }
    check_params(kind, params)?;
    let z = tape.matmul(h, params[0])?;
    Ok(Some(attention_from_scores(tape, kind, g, h, z, params)?))
}

/// Raw variant-specific scores, one LeakyReLU, one softmax per neighborhood.
fn attention_from_scores(
    tape: &mut Tape,
    kind: NodeAggregatorKind,
    g: &Graph,
    h: Var,
    z: Var,
    params: &[Var],
) -> Result<Var, ModelError> {
    use NodeAggregatorKind::*;
    let centers = g.edge_centers();
    let neighbors = g.edge_neighbors();
    let score = match kind {
        Gat => {
            let cl = tape.matmul(z, params[2])?;
            let cr = tape.matmul(z, params[3])?;
            let sc = tape.gather_rows(cl, centers)?;
            let sn = tape.gather_rows(cr, neighbors)?;
            tape.add(sc, sn)?
        }
        GatSym => {
            // e(v,u) + e(u,v) collapses to (a_l + a_r) applied at both ends.
            let cl = tape.matmul(z, params[2])?;
            let cr = tape.matmul(z, params[3])?;
            let both = tape.add(cl, cr)?;
            let sc = tape.gather_rows(both, centers)?;
            let sn = tape.gather_rows(both, neighbors)?;
            tape.add(sc, sn)?
        }
        GatCos => {
            let pl = tape.mul_row_vec(z, params[2])?;
            let pr = tape.mul_row_vec(z, params[3])?;
            let pc = tape.gather_rows(pl, centers)?;
            let pn = tape.gather_rows(pr, neighbors)?;
            let prod = tape.mul(pc, pn)?;
            row_sum(tape, prod)?
        }
        GatLinear => {
            let cl = tape.matmul(z, params[2])?;
            let cr = tape.matmul(z, params[3])?;
            let tl = tape.tanh(cl)?;
            let tr = tape.tanh(cr)?;
            let sc = tape.gather_rows(tl, centers)?;
            let sn = tape.gather_rows(tr, neighbors)?;
            tape.add(sc, sn)?
        }
        GatGenLinear => {
            let zl = tape.matmul(h, params[2])?;
            let zr = tape.matmul(h, params[3])?;
            let lc = tape.gather_rows(zl, centers)?;
            let rn = tape.gather_rows(zr, neighbors)?;
            let sum = tape.add(lc, rn)?;
            let t = tape.tanh(sum)?;
            tape.matmul(t, params[4])?
        }
        _ => unreachable!("guarded by the caller"),
    };
    let bent = tape.leaky_relu(score, ATTENTION_SLOPE)?;
    Ok(tape.segment_softmax(bent, centers, g.num_nodes())?)
}

/// Sums each row into a column vector by multiplying with a ones column.
fn row_sum(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let d = tape.shape(x)[1];
    let ones = tape.constant(vec![d, 1], vec![1.0; d])?;
    tape.matmul(x, ones)
}

/// Symmetric normalization 1/sqrt(deg(v) deg(u)) per stored edge, as a
/// constant `[E, 1]` column. Degrees count the self loop.
fn gcn_coefficients(tape: &mut Tape, g: &Graph) -> Result<Var, TensorError> {
    let centers = g.edge_centers();
    let neighbors = g.edge_neighbors();
    let coeffs: Vec<f64> = centers
        .iter()
        .zip(neighbors.iter())
        .map(|(&v, &u)| 1.0 / ((g.degree(v) as f64) * (g.degree(u) as f64)).sqrt())
        .collect();
    tape.constant(vec![coeffs.len(), 1], coeffs)
}

/// LSTM aggregation over each node's neighbor sequence in ascending neighbor
/// index order (the stored adjacency order), batched by processing nodes in
/// descending degree so every step works on a contiguous active prefix.
fn sage_lstm(
    tape: &mut Tape,
    g: &Graph,
    h: Var,
    cell: &lstm::LstmVars,
    w: Var,
    b: Var,
    act: Activation,
) -> Result<Var, ModelError> {
    let n = g.num_nodes();
    let hid = tape.shape(w)[0];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| g.degree(b).cmp(&g.degree(a)).then(a.cmp(&b)));
    let max_deg = g.degree(order[0]);
    // active[t] = how many nodes still have a t-th neighbor to feed.
    let active: Vec<usize> = (0..max_deg)
        .map(|t| order.partition_point(|&v| g.degree(v) > t))
        .collect();

    let mut hs = tape.constant(vec![n, hid], vec![0.0; n * hid])?;
    let mut cs = hs;
    let mut finished: Vec<Var> = Vec::new();
    for t in 0..max_deg {
        let n_t = active[t];
        if n_t < tape.shape(hs)[0] {
            let prefix = Arc::new((0..n_t).collect());
            hs = tape.gather_rows(hs, &prefix)?;
            cs = tape.gather_rows(cs, &prefix)?;
        }
        let step_idx: Arc<Vec<usize>> = Arc::new(order[..n_t].iter().map(|&v| g.neighbors(v)[t]).collect());
        let x = tape.gather_rows(h, &step_idx)?;
        let (h_next, c_next) = lstm::lstm_step(tape, cell, x, hs, cs)?;
        hs = h_next;
        cs = c_next;
        let n_next = if t + 1 < max_deg { active[t + 1] } else { 0 };
        if n_next < n_t {
            let tail = Arc::new((n_next..n_t).collect());
            finished.push(tape.gather_rows(hs, &tail)?);
        }
    }
    // Chunks complete shortest-degree first; reversed, they line up with
    // `order`. Undo the permutation to get back to node-index rows.
    finished.reverse();
    let stacked = if finished.len() == 1 { finished[0] } else { tape.concat(&finished, 0)? };
    let mut inverse = vec![0usize; n];
    for (i, &v) in order.iter().enumerate() {
        inverse[v] = i;
    }
    let agg = tape.gather_rows(stacked, &Arc::new(inverse))?;
    let lin = tape.matmul(agg, w)?;
    let biased = tape.add_bias(lin, b)?;
    Ok(apply(tape, act, biased)?)
}

/// Number of parameter tensors a layer aggregator expects.
pub fn layer_param_count(kind: LayerAggregatorKind) -> usize {
    match kind {
        LayerAggregatorKind::Concat | LayerAggregatorKind::Max => 0,
        LayerAggregatorKind::Lstm => 3 * lstm::GATES,
    }
}

/// Combines the selected layer outputs into the final node representation.
///
/// CONCAT joins along the feature axis in layer order; MAX is the elementwise
/// maximum (grad routed to the earliest layer on ties); LSTM runs a shared
/// cell over the outputs as a length-`layers.len()` sequence and returns the
/// final hidden state. All inputs must share the row count, and MAX and LSTM
/// also require one common width.
pub fn layer_aggregate(
    tape: &mut Tape,
    kind: LayerAggregatorKind,
    layers: &[Var],
    params: &[Var],
) -> Result<Var, ModelError> {
    if layers.is_empty() {
        return Err(ModelError::Invalid("layer aggregation over an empty selection".into()));
    }
    let want = layer_param_count(kind);
    if params.len() != want {
        return Err(ModelError::Invalid(format!(
            "layer aggregator {kind} takes {want} parameter tensors, got {}",
            params.len()
        )));
    }
    match kind {
        LayerAggregatorKind::Concat => {
            if layers.len() == 1 {
                return Ok(layers[0]);
            }
            Ok(tape.concat(layers, 1)?)
        }
        LayerAggregatorKind::Max => {
            let mut acc = layers[0];
            for &l in &layers[1..] {
                acc = tape.maximum(acc, l)?;
            }
            Ok(acc)
        }
        LayerAggregatorKind::Lstm => {
            let cell = lstm::bind_vars(params);
            let rows = tape.shape(layers[0])[0];
            let hid = tape.shape(layers[0])[1];
            let mut hs = tape.constant(vec![rows, hid], vec![0.0; rows * hid])?;
            let mut cs = hs;
            for &x in layers {
                let (h_next, c_next) = lstm::lstm_step(tape, &cell, x, hs, cs)?;
                hs = h_next;
                cs = c_next;
            }
            Ok(hs)
        }
    }
}
