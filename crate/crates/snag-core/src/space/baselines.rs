//! Human-designed architectures expressed as genotypes, used as fixed
//! training targets and search baselines.

use crate::gnn::{LayerAggregatorKind, NodeAggregatorKind};

use super::{Genotype, SpaceError};

pub const BASELINE_NAMES: [&str; 11] = [
    "GCN",
    "GCN-JK",
    "GraphSAGE",
    "GraphSAGE-SUM",
    "GraphSAGE-MEAN",
    "GraphSAGE-MAX",
    "GraphSAGE-JK",
    "GAT",
    "GAT-JK",
    "GIN",
    "GIN-JK",
];

/// Maps a baseline name to its genotype at the given depth.
///
/// Plain models repeat one node aggregator with all skips zero (only the last
/// layer feeds the concat aggregator, so it degenerates to last-layer-only);
/// `-JK` variants set every skip and concatenate all layers. `GraphSAGE`
/// without a suffix is the mean variant. `GIN` maps to sum aggregation
/// followed by the layer's linear transform, an approximation without the
/// learnable epsilon or 2-layer transform of the original.
pub fn baseline_genotype(name: &str, depth: usize) -> Result<Genotype, SpaceError> {
    let (agg, jk) = match name {
        "GCN" => (NodeAggregatorKind::Gcn, false),
        "GCN-JK" => (NodeAggregatorKind::Gcn, true),
        "GraphSAGE" | "GraphSAGE-MEAN" => (NodeAggregatorKind::SageMean, false),
        "GraphSAGE-SUM" => (NodeAggregatorKind::SageSum, false),
        "GraphSAGE-MAX" => (NodeAggregatorKind::SageMax, false),
        "GraphSAGE-JK" => (NodeAggregatorKind::SageMean, true),
        "GAT" => (NodeAggregatorKind::Gat, false),
        "GAT-JK" => (NodeAggregatorKind::Gat, true),
        "GIN" => (NodeAggregatorKind::SageSum, false),
        "GIN-JK" => (NodeAggregatorKind::SageSum, true),
        other => return Err(SpaceError::UnknownBaseline(other.to_string())),
    };
    if depth == 0 {
        return Err(SpaceError::Invalid("baseline depth must be at least 1".into()));
    }
    Genotype::new(
        vec![agg; depth],
        vec![jk; depth - 1],
        Some(LayerAggregatorKind::Concat),
    )
}
