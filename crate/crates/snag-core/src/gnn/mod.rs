//! Message-passing layers: neighborhood aggregators, layer aggregators, model
//! assembly, losses, and metrics.
//!
//! One layer computes `h_v = act(W . combine({h_u : u adjacent to v}))`, where
//! the combine step is the node aggregator under search. After the last layer,
//! a layer aggregator merges the per-layer states selected by the genotype's
//! skip bits (the final layer is always selected), and a linear classifier
//! maps the merged state to logits.

pub mod aggregate;
pub mod metrics;
pub mod model;

use thiserror::Error;

use crate::graph::GraphError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{0}")]
    Invalid(String),
}

/// Neighborhood aggregators searchable per layer. Neighborhoods always include
/// the node itself (adjacency must carry self-loops).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeAggregatorKind {
    /// Degree-normalized mean, the symmetric-normalization convolution
    /// collapsed onto Ñ(v).
    Gcn,
    SageSum,
    SageMean,
    SageMax,
    /// Sequence aggregation: neighbors fed to an LSTM in ascending node order.
    SageLstm,
    /// No message passing; transforms each node's own state.
    Mlp,
    Gat,
    GatSym,
    GatCos,
    GatLinear,
    GatGenLinear,
}

impl NodeAggregatorKind {
    pub const ALL: [NodeAggregatorKind; 11] = [
        NodeAggregatorKind::Gcn,
        NodeAggregatorKind::SageSum,
        NodeAggregatorKind::SageMean,
        NodeAggregatorKind::SageMax,
        NodeAggregatorKind::SageLstm,
        NodeAggregatorKind::Mlp,
        NodeAggregatorKind::Gat,
        NodeAggregatorKind::GatSym,
        NodeAggregatorKind::GatCos,
        NodeAggregatorKind::GatLinear,
        NodeAggregatorKind::GatGenLinear,
    ];

    pub fn id(self) -> &'static str {
        match self {
            NodeAggregatorKind::Gcn => "gcn",
            NodeAggregatorKind::SageSum => "sage-sum",
            NodeAggregatorKind::SageMean => "sage-mean",
            NodeAggregatorKind::SageMax => "sage-max",
            NodeAggregatorKind::SageLstm => "sage-lstm",
            NodeAggregatorKind::Mlp => "mlp",
            NodeAggregatorKind::Gat => "gat",
            NodeAggregatorKind::GatSym => "gat-sym",
            NodeAggregatorKind::GatCos => "gat-cos",
            NodeAggregatorKind::GatLinear => "gat-linear",
            NodeAggregatorKind::GatGenLinear => "gat-gen-linear",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }
}

impl std::fmt::Display for NodeAggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}

/// How the selected per-layer states merge into the final node representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerAggregatorKind {
    Concat,
    Max,
    /// Selected states form a sequence (layer order); the final hidden state
    /// of an LSTM over it is the representation.
    Lstm,
}

impl LayerAggregatorKind {
    pub const ALL: [LayerAggregatorKind; 3] = [
        LayerAggregatorKind::Concat,
        LayerAggregatorKind::Max,
        LayerAggregatorKind::Lstm,
    ];

    pub fn id(self) -> &'static str {
        match self {
            LayerAggregatorKind::Concat => "concat",
            LayerAggregatorKind::Max => "max",
            LayerAggregatorKind::Lstm => "lstm",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }
}

impl std::fmt::Display for LayerAggregatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.id())
    }
}
