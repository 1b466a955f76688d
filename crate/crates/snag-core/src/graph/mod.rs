//! Graph datasets: CSR adjacency, canonical on-disk format, seeded splits,
//! and a stochastic block model generator for synthetic tasks.

pub mod manifest;
pub mod sbm;

pub use manifest::{load_dataset, save_canonical, Dataset, DatasetManifest, GraphEntry, SplitRole, TaskKind};

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

/// Node supervision: one class id per node, or a 0/1 class matrix.
#[derive(Debug, Clone)]
pub enum Labels {
    Multiclass { num_classes: usize, ids: Vec<usize> },
    /// `values` is a flat `[num_nodes, num_classes]` 0/1 array.
    Multilabel { num_classes: usize, values: Arc<Vec<f64>> },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Multiclass { ids, .. } => ids.len(),
            Labels::Multilabel { values, num_classes } => values.len() / num_classes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Labels::Multiclass { num_classes, .. } | Labels::Multilabel { num_classes, .. } => *num_classes,
        }
    }

    pub fn is_multilabel(&self) -> bool {
        matches!(self, Labels::Multilabel { .. })
    }
}

/// Immutable graph with CSR adjacency. Neighbor lists are sorted and deduped;
/// undirected graphs store both directions explicitly.
#[derive(Debug, Clone)]
pub struct Graph {
    num_nodes: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Tensor,
    labels: Labels,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    /// Segment id (the center node) for every CSR entry; drives segment ops.
    edge_centers: Arc<Vec<usize>>,
    /// Source row (the neighbor) for every CSR entry; drives row gathers.
    edge_neighbors: Arc<Vec<usize>>,
    has_all_self_loops: bool,
}

impl Graph {
    /// Builds a graph from directed edge pairs. With `undirected`, each pair
    /// is stored in both directions. Duplicate entries collapse.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        undirected: bool,
        features: Tensor,
        labels: Labels,
    ) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::Invalid("graph needs at least one node".into()));
        }
        if features.shape().len() != 2 || features.shape()[0] != num_nodes {
            return Err(GraphError::Invalid(format!(
                "features shape {:?} does not match {} nodes",
                features.shape(),
                num_nodes
            )));
        }
        if labels.len() != num_nodes {
            return Err(GraphError::Invalid(format!(
                "{} labels for {} nodes",
                labels.len(),
                num_nodes
            )));
        }
        let mut entries: Vec<(usize, usize)> = Vec::with_capacity(edges.len() * if undirected { 2 } else { 1 });
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::Invalid(format!(
                    "edge ({u}, {v}) out of range for {num_nodes} nodes"
                )));
            }
            entries.push((u, v));
            if undirected {
                entries.push((v, u));
            }
        }
        entries.sort_unstable();
        entries.dedup();

        let mut offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &entries {
            offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let targets: Vec<usize> = entries.iter().map(|&(_, v)| v).collect();

        let masks = vec![false; num_nodes];
        let mut g = Graph {
            num_nodes,
            offsets,
            targets,
            features,
            labels,
            train_mask: masks.clone(),
            val_mask: masks.clone(),
            test_mask: masks,
            edge_centers: Arc::new(Vec::new()),
            edge_neighbors: Arc::new(Vec::new()),
            has_all_self_loops: false,
        };
        g.rebuild_edge_views();
        Ok(g)
    }

    fn rebuild_edge_views(&mut self) {
        let mut centers = Vec::with_capacity(self.targets.len());
        for v in 0..self.num_nodes {
            centers.extend(std::iter::repeat(v).take(self.offsets[v + 1] - self.offsets[v]));
        }
        self.edge_centers = Arc::new(centers);
        self.edge_neighbors = Arc::new(self.targets.clone());
        self.has_all_self_loops = (0..self.num_nodes).all(|v| self.neighbors(v).binary_search(&v).is_ok());
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Count of directed CSR entries.
    pub fn num_entries(&self) -> usize {
        self.targets.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn num_features(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    /// Center node per CSR entry, shared with tape segment ops.
    pub fn edge_centers(&self) -> &Arc<Vec<usize>> {
        &self.edge_centers
    }

    /// Neighbor node per CSR entry, shared with tape gathers.
    pub fn edge_neighbors(&self) -> &Arc<Vec<usize>> {
        &self.edge_neighbors
    }

    /// True when every node's neighbor list already contains the node itself.
    pub fn has_all_self_loops(&self) -> bool {
        self.has_all_self_loops
    }

    /// Replaces the three masks. They must be disjoint and sized to the graph.
    pub fn set_masks(
        &mut self,
        train: Vec<bool>,
        val: Vec<bool>,
        test: Vec<bool>,
    ) -> Result<(), GraphError> {
        for (name, m) in [("train", &train), ("val", &val), ("test", &test)] {
            if m.len() != self.num_nodes {
                return Err(GraphError::Invalid(format!(
                    "{name} mask has {} entries for {} nodes",
                    m.len(),
                    self.num_nodes
                )));
            }
        }
        if (0..self.num_nodes).any(|v| usize::from(train[v]) + usize::from(val[v]) + usize::from(test[v]) > 1) {
            return Err(GraphError::Invalid("masks overlap".into()));
        }
        self.train_mask = train;
        self.val_mask = val;
        self.test_mask = test;
        Ok(())
    }

    /// Marks every node as belonging to one role; inductive graphs are
    /// supervised on all their nodes.
    pub fn set_uniform_mask(&mut self, role: manifest::SplitRole) {
        let n = self.num_nodes;
        self.train_mask = vec![false; n];
        self.val_mask = vec![false; n];
        self.test_mask = vec![false; n];
        let mask = match role {
            manifest::SplitRole::Train => &mut self.train_mask,
            manifest::SplitRole::Val => &mut self.val_mask,
            manifest::SplitRole::Test => &mut self.test_mask,
        };
        mask.iter_mut().for_each(|b| *b = true);
    }
}

/// Returns a graph whose adjacency includes exactly one self-loop per node,
/// adding only the missing ones. Idempotent; features, labels, and masks are
/// carried over unchanged.
pub fn add_self_loops(g: &Graph) -> Graph {
    let mut offsets = Vec::with_capacity(g.num_nodes + 1);
    let mut targets = Vec::with_capacity(g.targets.len() + g.num_nodes);
    offsets.push(0);
    for v in 0..g.num_nodes {
        let row = g.neighbors(v);
        match row.binary_search(&v) {
            Ok(_) => targets.extend_from_slice(row),
            Err(pos) => {
                targets.extend_from_slice(&row[..pos]);
                targets.push(v);
                targets.extend_from_slice(&row[pos..]);
            }
        }
        offsets.push(targets.len());
    }
    let mut out = Graph {
        num_nodes: g.num_nodes,
        offsets,
        targets,
        features: g.features.clone(),
        labels: g.labels.clone(),
        train_mask: g.train_mask.clone(),
        val_mask: g.val_mask.clone(),
        test_mask: g.test_mask.clone(),
        edge_centers: Arc::new(Vec::new()),
        edge_neighbors: Arc::new(Vec::new()),
        has_all_self_loops: true,
    };
    out.rebuild_edge_views();
    out
}

/// Assigns train/val/test masks by seeded shuffle. Validation and test get
/// `floor(fraction * N)` nodes each; train takes the remainder. Fractions must
/// be non-negative and sum to 1 within 1e-9.
pub fn make_splits(g: &Graph, fractions: (f64, f64, f64), seed: u64) -> Result<Graph, GraphError> {
    let (f_train, f_val, f_test) = fractions;
    if f_train < 0.0 || f_val < 0.0 || f_test < 0.0 {
        return Err(GraphError::Invalid(format!(
            "split fractions must be non-negative, got ({f_train}, {f_val}, {f_test})"
        )));
    }
    if (f_train + f_val + f_test - 1.0).abs() > 1e-9 {
        return Err(GraphError::Invalid(format!(
            "split fractions sum to {}, expected 1",
            f_train + f_val + f_test
        )));
    }
    let n = g.num_nodes;
    let n_val = (f_val * n as f64).floor() as usize;
    let n_test = (f_test * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 {
        return Err(GraphError::Invalid("split leaves no training nodes".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }

    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for (pos, &v) in order.iter().enumerate() {
        if pos < n_train {
            train[v] = true;
        } else if pos < n_train + n_val {
            val[v] = true;
        } else {
            test[v] = true;
        }
    }
    let mut out = g.clone();
    out.set_masks(train, val, test).expect("constructed masks are valid");
    Ok(out)
}

/// Scales each feature row to sum to one when its sum is positive; other rows
/// are left alone.
pub fn row_normalize(features: &mut Tensor) {
    let cols = features.shape()[1];
    for row in features.data_mut().chunks_mut(cols) {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row.iter_mut().for_each(|v| *v /= sum);
        }
    }
}
