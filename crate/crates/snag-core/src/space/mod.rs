//! The architecture search space: genotypes, their text grammar, enumeration,
//! uniform sampling, and named baseline architectures.

mod baselines;
mod grammar;

pub use baselines::{baseline_genotype, BASELINE_NAMES};

use rand::Rng;
use thiserror::Error;

use crate::gnn::{LayerAggregatorKind, NodeAggregatorKind};

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("invalid genotype: {0}")]
    Invalid(String),
    #[error("genotype parse error at byte {position}: {msg}")]
    Parse { position: usize, msg: String },
    #[error("invalid search space: {0}")]
    InvalidConfig(String),
    #[error("space holds {size} genotypes, above the enumeration cap {cap}")]
    CapExceeded { size: u128, cap: u64 },
    #[error("unknown baseline {0:?} (expected one of {})", BASELINE_NAMES.join(", "))]
    UnknownBaseline(String),
}

/// One architecture: a node aggregator per layer, a skip bit per
/// non-final layer (true keeps that layer's output for the layer aggregator,
/// false drops it), and the layer aggregator. The final layer is always fed
/// to the layer aggregator and is not stored as a bit.
///
/// `layer_agg` is `None` in the ablated space: no skips, the last layer's
/// state passes through unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Genotype {
    node_aggs: Vec<NodeAggregatorKind>,
    skips: Vec<bool>,
    layer_agg: Option<LayerAggregatorKind>,
}

impl Genotype {
    pub fn new(
        node_aggs: Vec<NodeAggregatorKind>,
        skips: Vec<bool>,
        layer_agg: Option<LayerAggregatorKind>,
    ) -> Result<Self, SpaceError> {
        if node_aggs.is_empty() {
            return Err(SpaceError::Invalid("a genotype needs at least one layer".into()));
        }
        if skips.len() + 1 != node_aggs.len() {
            return Err(SpaceError::Invalid(format!(
                "{} layers need {} skip bits, got {}",
                node_aggs.len(),
                node_aggs.len() - 1,
                skips.len()
            )));
        }
        if layer_agg.is_none() && skips.iter().any(|&b| b) {
            return Err(SpaceError::Invalid(
                "without a layer aggregator, skip bits must all be zero".into(),
            ));
        }
        Ok(Genotype { node_aggs, skips, layer_agg })
    }

    /// Number of layers K.
    pub fn depth(&self) -> usize {
        self.node_aggs.len()
    }

    pub fn node_aggs(&self) -> &[NodeAggregatorKind] {
        &self.node_aggs
    }

    pub fn skips(&self) -> &[bool] {
        &self.skips
    }

    pub fn layer_agg(&self) -> Option<LayerAggregatorKind> {
        self.layer_agg
    }

    /// 0-based indices of the layers feeding the layer aggregator, ascending.
    /// The final layer is always present.
    pub fn selected_layers(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.skips.len()).filter(|&i| self.skips[i]).collect();
        out.push(self.depth() - 1);
        out
    }

    /// Projection into the ablated space: same node aggregators, no skips,
    /// last layer passes through.
    pub fn ablated(&self) -> Genotype {
        Genotype {
            node_aggs: self.node_aggs.clone(),
            skips: vec![false; self.skips.len()],
            layer_agg: None,
        }
    }

    /// Text form (see [`mod@grammar`]); also available via `Display`.
    pub fn encode(&self) -> String {
        grammar::encode(self)
    }

    /// Parses the text form; also available via `FromStr`.
    pub fn decode(s: &str) -> Result<Genotype, SpaceError> {
        grammar::decode(s)
    }
}

impl std::fmt::Display for Genotype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.encode())
    }
}

impl std::str::FromStr for Genotype {
    type Err = SpaceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Genotype::decode(s)
    }
}

/// The set of genotypes a search runs over.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpaceConfig {
    /// Number of layers K.
    pub depth: usize,
    pub node_aggregators: Vec<NodeAggregatorKind>,
    pub layer_aggregators: Vec<LayerAggregatorKind>,
    /// The ablation switch: when false, skips are pinned to zero and the last
    /// layer's state passes through instead of a layer aggregator.
    pub include_layer_aggregators: bool,
}

impl Default for SearchSpaceConfig {
    fn default() -> Self {
        SearchSpaceConfig {
            depth: 3,
            node_aggregators: NodeAggregatorKind::ALL.to_vec(),
            layer_aggregators: LayerAggregatorKind::ALL.to_vec(),
            include_layer_aggregators: true,
        }
    }
}

impl SearchSpaceConfig {
    pub fn validate(&self) -> Result<(), SpaceError> {
        if self.depth == 0 {
            return Err(SpaceError::InvalidConfig("depth must be at least 1".into()));
        }
        if self.depth > 24 {
            return Err(SpaceError::InvalidConfig(format!("depth {} is beyond the supported 24", self.depth)));
        }
        for (what, len, distinct) in [
            (
                "node aggregators",
                self.node_aggregators.len(),
                dedup_count(&self.node_aggregators),
            ),
            (
                "layer aggregators",
                self.layer_aggregators.len(),
                dedup_count(&self.layer_aggregators),
            ),
        ] {
            if len == 0 {
                return Err(SpaceError::InvalidConfig(format!("allowed {what} set is empty")));
            }
            if len != distinct {
                return Err(SpaceError::InvalidConfig(format!("allowed {what} contain duplicates")));
            }
        }
        Ok(())
    }

    /// Closed-form size: |node|^K * 2^(K-1) * |layer|, with the skip and layer
    /// factors collapsing to 1 in the ablated space. Cannot overflow within
    /// the validated depth bound.
    pub fn space_size(&self) -> u128 {
        let nodes = self.node_aggregators.len() as u128;
        let mut size: u128 = nodes.pow(self.depth as u32);
        if self.include_layer_aggregators {
            size *= 1u128 << (self.depth - 1);
            size *= self.layer_aggregators.len() as u128;
        }
        size
    }

    /// Uniform draw over the space.
    pub fn sample_uniform(&self, rng: &mut impl Rng) -> Genotype {
        let node_aggs = (0..self.depth)
            .map(|_| self.node_aggregators[rng.gen_range(0..self.node_aggregators.len())])
            .collect();
        let (skips, layer_agg) = if self.include_layer_aggregators {
            (
                (0..self.depth - 1).map(|_| rng.gen_range(0..2u8) == 1).collect(),
                Some(self.layer_aggregators[rng.gen_range(0..self.layer_aggregators.len())]),
            )
        } else {
            (vec![false; self.depth - 1], None)
        };
        Genotype { node_aggs, skips, layer_agg }
    }

    /// True when the genotype is drawn from this space.
    pub fn contains(&self, g: &Genotype) -> bool {
        if g.depth() != self.depth {
            return false;
        }
        if !g.node_aggs.iter().all(|k| self.node_aggregators.contains(k)) {
            return false;
        }
        match (self.include_layer_aggregators, g.layer_agg) {
            (true, Some(l)) => self.layer_aggregators.contains(&l),
            (false, None) => g.skips.iter().all(|&b| !b),
            _ => false,
        }
    }

    /// Lexicographic enumeration of every genotype (node choices outrank skip
    /// bits outrank the layer choice; zero/first-listed sorts first). Refuses
    /// spaces larger than `cap`.
    pub fn enumerate(&self, cap: u64) -> Result<GenotypeIter, SpaceError> {
        self.validate()?;
        let size = self.space_size();
        if size > cap as u128 {
            return Err(SpaceError::CapExceeded { size, cap });
        }
        let mut radices: Vec<usize> = vec![self.node_aggregators.len(); self.depth];
        if self.include_layer_aggregators {
            radices.extend(vec![2usize; self.depth - 1]);
            radices.push(self.layer_aggregators.len());
        }
        Ok(GenotypeIter {
            cfg: self.clone(),
            digits: vec![0; radices.len()],
            radices,
            done: false,
        })
    }
}

fn dedup_count<T: PartialEq>(items: &[T]) -> usize {
    items
        .iter()
        .enumerate()
        .filter(|(i, item)| !items[..*i].contains(item))
        .count()
}

/// Odometer over the space's digit vector; see [`SearchSpaceConfig::enumerate`].
#[derive(Debug)]
pub struct GenotypeIter {
    cfg: SearchSpaceConfig,
    digits: Vec<usize>,
    radices: Vec<usize>,
    done: bool,
}

impl Iterator for GenotypeIter {
    type Item = Genotype;

    fn next(&mut self) -> Option<Genotype> {
        if self.done {
            return None;
        }
        let depth = self.cfg.depth;
        let node_aggs: Vec<NodeAggregatorKind> = (0..depth)
            .map(|i| self.cfg.node_aggregators[self.digits[i]])
            .collect();
        let (skips, layer_agg) = if self.cfg.include_layer_aggregators {
            (
                (0..depth - 1).map(|i| self.digits[depth + i] == 1).collect(),
                Some(self.cfg.layer_aggregators[self.digits[2 * depth - 1]]),
            )
        } else {
            (vec![false; depth - 1], None)
        };
        // Advance the rightmost digit; carry leftward; wrap means exhaustion.
        let mut pos = self.digits.len();
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            self.digits[pos] += 1;
            if self.digits[pos] < self.radices[pos] {
                break;
            }
            self.digits[pos] = 0;
        }
        Some(Genotype { node_aggs, skips, layer_agg })
    }
}
