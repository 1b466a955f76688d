//! Stochastic block model generator: planted communities with block-indicator
//! features, used as desk-scale node classification tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Graph, GraphError, Labels};
use crate::tensor::Tensor;

/// Samples an undirected SBM graph. Node v belongs to block v / nodes_per_block;
/// an edge joins two distinct nodes with probability `p_in` inside a block and
/// `p_out` across blocks. Features are one-hot block indicators plus
/// `feature_noise`-scaled Gaussian noise; labels are block ids.
///
/// Requires `0 <= p_out < p_in <= 1`. Degenerate settings are exact:
/// `p_in = 1` always connects within blocks, `p_out = 0` never connects
/// across, and `feature_noise = 0` leaves features exactly one-hot.
pub fn sbm_generate(
    blocks: usize,
    nodes_per_block: usize,
    p_in: f64,
    p_out: f64,
    feature_noise: f64,
    seed: u64,
) -> Result<Graph, GraphError> {
    if blocks == 0 || nodes_per_block == 0 {
        return Err(GraphError::Invalid("blocks and nodes_per_block must be positive".into()));
    }
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) || p_out >= p_in {
        return Err(GraphError::Invalid(format!(
            "need 0 <= p_out < p_in <= 1, got p_in={p_in} p_out={p_out}"
        )));
    }
    if !(feature_noise >= 0.0) || !feature_noise.is_finite() {
        return Err(GraphError::Invalid(format!("feature_noise must be finite and >= 0, got {feature_noise}")));
    }

    let n = blocks * nodes_per_block;
    let block_of = |v: usize| v / nodes_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block_of(u) == block_of(v) { p_in } else { p_out };
            // gen::<f64>() is uniform in [0, 1), so p=1 always fires and p=0 never does.
            if p > 0.0 && rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }

    let mut feats = vec![0.0; n * blocks];
    for v in 0..n {
        feats[v * blocks + block_of(v)] = 1.0;
    }
    if feature_noise > 0.0 {
        for f in feats.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *f += feature_noise * z;
        }
    }
    let features = Tensor::matrix(n, blocks, feats).map_err(|e| GraphError::Invalid(e.to_string()))?;
    let labels = Labels::Multiclass {
        num_classes: blocks,
        ids: (0..n).map(block_of).collect(),
    };
    Graph::from_edges(n, &edges, true, features, labels)
}
