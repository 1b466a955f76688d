//! Canonical dataset directory format.
//!
//! A dataset directory holds `manifest.json` plus plain-text arrays:
//!
//! * `edges.txt`: two whitespace-separated 0-based node ids per line; one
//!   line per directed entry, or per undirected pair when the manifest sets
//!   `undirected`.
//! * `features.csv`: one row per node, comma-separated decimals.
//! * `labels.txt`: one integer per line (multiclass), or one comma-separated
//!   0/1 row per node (multilabel).
//! * optional splits file: one of `train`/`val`/`test`/`none` per line.
//!
//! Inductive datasets list per-graph file entries with a role each instead of
//! the top-level arrays. Loading and re-serializing a dataset round-trips the
//! arrays bit-exactly (floats are written shortest-round-trip).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{row_normalize, Graph, GraphError, Labels};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Transductive,
    Inductive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

/// One graph of an inductive dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphEntry {
    pub role: SplitRole,
    pub num_nodes: usize,
    pub edges: String,
    pub features: String,
    pub labels: String,
}

fn default_true() -> bool {
    true
}

/// `manifest.json` contents. Declared counts are validated against the loaded
/// arrays exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_nodes: Option<usize>,
    pub num_features: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub multilabel: bool,
    /// When set, each edge line stores an undirected pair (both directions).
    #[serde(default = "default_true")]
    pub undirected: bool,
    /// Scale feature rows to sum to one at load time.
    #[serde(default = "default_true")]
    pub row_normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub graphs: Vec<GraphEntry>,
}

/// A loaded dataset: one graph with masks, or disjoint graph lists.
#[derive(Debug, Clone)]
pub enum Dataset {
    Transductive(Graph),
    Inductive {
        train: Vec<Graph>,
        val: Vec<Graph>,
        test: Vec<Graph>,
    },
}

impl Dataset {
    pub fn num_features(&self) -> usize {
        match self {
            Dataset::Transductive(g) => g.num_features(),
            Dataset::Inductive { train, .. } => train[0].num_features(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Dataset::Transductive(g) => g.num_classes(),
            Dataset::Inductive { train, .. } => train[0].num_classes(),
        }
    }

    pub fn is_multilabel(&self) -> bool {
        match self {
            Dataset::Transductive(g) => g.labels().is_multilabel(),
            Dataset::Inductive { train, .. } => train[0].labels().is_multilabel(),
        }
    }

    /// Graphs a model trains its loss on. Transductive data exposes its one
    /// graph under every role; the masks tell the splits apart there.
    pub fn graphs_for(&self, role: SplitRole) -> &[Graph] {
        match self {
            Dataset::Transductive(g) => std::slice::from_ref(g),
            Dataset::Inductive { train, val, test } => match role {
                SplitRole::Train => train,
                SplitRole::Val => val,
                SplitRole::Test => test,
            },
        }
    }

    /// Applies [`super::add_self_loops`] to every graph.
    pub fn with_self_loops(&self) -> Dataset {
        let fix = |gs: &Vec<Graph>| gs.iter().map(super::add_self_loops).collect();
        match self {
            Dataset::Transductive(g) => Dataset::Transductive(super::add_self_loops(g)),
            Dataset::Inductive { train, val, test } => Dataset::Inductive {
                train: fix(train),
                val: fix(val),
                test: fix(test),
            },
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_edges(path: &Path) -> Result<Vec<(usize, usize)>, GraphError> {
    let text = read_to_string(path)?;
    let mut edges = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (u, v) = (it.next(), it.next());
        if it.next().is_some() {
            return Err(parse_err(path, i + 1, "expected exactly two node ids"));
        }
        match (u.and_then(|s| s.parse().ok()), v.and_then(|s| s.parse().ok())) {
            (Some(u), Some(v)) => edges.push((u, v)),
            _ => return Err(parse_err(path, i + 1, format!("cannot parse edge from {line:?}"))),
        }
    }
    Ok(edges)
}

fn parse_features(path: &Path, num_nodes: usize, num_features: usize) -> Result<Tensor, GraphError> {
    let text = read_to_string(path)?;
    let mut data = Vec::with_capacity(num_nodes * num_features);
    let mut rows = 0usize;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        rows += 1;
        let before = data.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("cannot parse decimal {tok:?}")))?;
            data.push(v);
        }
        if data.len() - before != num_features {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected {num_features} values, got {}", data.len() - before),
            ));
        }
    }
    if rows != num_nodes {
        return Err(GraphError::Invalid(format!(
            "{}: expected {num_nodes} feature rows, got {rows}",
            path.display()
        )));
    }
    Tensor::matrix(num_nodes, num_features, data)
        .map_err(|e| GraphError::Invalid(format!("{}: {e}", path.display())))
}

fn parse_labels(
    path: &Path,
    num_nodes: usize,
    num_classes: usize,
    multilabel: bool,
) -> Result<Labels, GraphError> {
    let text = read_to_string(path)?;
    if multilabel {
        let mut values = Vec::with_capacity(num_nodes * num_classes);
        let mut rows = 0usize;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            rows += 1;
            let before = values.len();
            for tok in line.split(',') {
                match tok.trim() {
                    "0" => values.push(0.0),
                    "1" => values.push(1.0),
                    other => return Err(parse_err(path, i + 1, format!("expected 0 or 1, got {other:?}"))),
                }
            }
            if values.len() - before != num_classes {
                return Err(parse_err(
                    path,
                    i + 1,
                    format!("expected {num_classes} indicators, got {}", values.len() - before),
                ));
            }
        }
        if rows != num_nodes {
            return Err(GraphError::Invalid(format!(
                "{}: expected {num_nodes} label rows, got {rows}",
                path.display()
            )));
        }
        Ok(Labels::Multilabel {
            num_classes,
            values: Arc::new(values),
        })
    } else {
        let mut ids = Vec::with_capacity(num_nodes);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let id: usize = line
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("cannot parse label {line:?}")))?;
            if id >= num_classes {
                return Err(parse_err(path, i + 1, format!("label {id} out of range for {num_classes} classes")));
            }
            ids.push(id);
        }
        if ids.len() != num_nodes {
            return Err(GraphError::Invalid(format!(
                "{}: expected {num_nodes} labels, got {}",
                path.display(),
                ids.len()
            )));
        }
        Ok(Labels::Multiclass { num_classes, ids })
    }
}

fn parse_splits(path: &Path, num_nodes: usize) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>), GraphError> {
    let text = read_to_string(path)?;
    let mut train = Vec::with_capacity(num_nodes);
    let mut val = Vec::with_capacity(num_nodes);
    let mut test = Vec::with_capacity(num_nodes);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let (t, v, s) = match line {
            "train" => (true, false, false),
            "val" => (false, true, false),
            "test" => (false, false, true),
            "none" => (false, false, false),
            other => return Err(parse_err(path, i + 1, format!("expected train/val/test/none, got {other:?}"))),
        };
        train.push(t);
        val.push(v);
        test.push(s);
    }
    if train.len() != num_nodes {
        return Err(GraphError::Invalid(format!(
            "{}: expected {num_nodes} split rows, got {}",
            path.display(),
            train.len()
        )));
    }
    Ok((train, val, test))
}

fn load_one_graph(
    dir: &Path,
    edges: &str,
    features: &str,
    labels: &str,
    num_nodes: usize,
    num_features: usize,
    num_classes: usize,
    multilabel: bool,
    undirected: bool,
    normalize: bool,
) -> Result<Graph, GraphError> {
    let edges = parse_edges(&dir.join(edges))?;
    let mut feats = parse_features(&dir.join(features), num_nodes, num_features)?;
    if normalize {
        row_normalize(&mut feats);
    }
    let labels = parse_labels(&dir.join(labels), num_nodes, num_classes, multilabel)?;
    Graph::from_edges(num_nodes, &edges, undirected, feats, labels)
}

/// Reads `manifest.json` from `dir` and loads the dataset it declares.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Dataset), GraphError> {
    let manifest_path = dir.join("manifest.json");
    let text = read_to_string(&manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| GraphError::Manifest(format!("{}: {e}", manifest_path.display())))?;
    let dataset = load_from_manifest(&manifest, dir)?;
    Ok((manifest, dataset))
}

/// Loads the arrays a manifest points at, resolving paths against `dir`.
pub fn load_from_manifest(manifest: &DatasetManifest, dir: &Path) -> Result<Dataset, GraphError> {
    match manifest.task {
        TaskKind::Transductive => {
            let num_nodes = manifest
                .num_nodes
                .ok_or_else(|| GraphError::Manifest("transductive manifest needs num_nodes".into()))?;
            let (edges, features, labels) = match (&manifest.edges, &manifest.features, &manifest.labels) {
                (Some(e), Some(f), Some(l)) => (e, f, l),
                _ => {
                    return Err(GraphError::Manifest(
                        "transductive manifest needs edges, features, and labels paths".into(),
                    ))
                }
            };
            let mut g = load_one_graph(
                dir,
                edges,
                features,
                labels,
                num_nodes,
                manifest.num_features,
                manifest.num_classes,
                manifest.multilabel,
                manifest.undirected,
                manifest.row_normalize,
            )?;
            if let Some(splits) = &manifest.splits {
                let (train, val, test) = parse_splits(&dir.join(splits), num_nodes)?;
                g.set_masks(train, val, test)?;
            }
            Ok(Dataset::Transductive(g))
        }
        TaskKind::Inductive => {
            if manifest.graphs.is_empty() {
                return Err(GraphError::Manifest("inductive manifest lists no graphs".into()));
            }
            let mut train = Vec::new();
            let mut val = Vec::new();
            let mut test = Vec::new();
            for entry in &manifest.graphs {
                let mut g = load_one_graph(
                    dir,
                    &entry.edges,
                    &entry.features,
                    &entry.labels,
                    entry.num_nodes,
                    manifest.num_features,
                    manifest.num_classes,
                    manifest.multilabel,
                    manifest.undirected,
                    manifest.row_normalize,
                )?;
                g.set_uniform_mask(entry.role);
                match entry.role {
                    SplitRole::Train => train.push(g),
                    SplitRole::Val => val.push(g),
                    SplitRole::Test => test.push(g),
                }
            }
            for (role, list) in [("train", &train), ("val", &val), ("test", &test)] {
                if list.is_empty() {
                    return Err(GraphError::Manifest(format!("inductive manifest has no {role} graph")));
                }
            }
            Ok(Dataset::Inductive { train, val, test })
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), GraphError> {
    fs::write(path, contents).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn edges_text(g: &Graph) -> String {
    // Every directed CSR entry is written explicitly, so reloading with
    // undirected=false rebuilds the identical adjacency.
    let mut out = String::new();
    for v in 0..g.num_nodes() {
        for &u in g.neighbors(v) {
            let _ = writeln!(out, "{v} {u}");
        }
    }
    out
}

fn features_text(g: &Graph) -> String {
    let mut out = String::new();
    let cols = g.num_features();
    for row in g.features().data().chunks(cols) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn labels_text(g: &Graph) -> String {
    let mut out = String::new();
    match g.labels() {
        Labels::Multiclass { ids, .. } => {
            for id in ids {
                let _ = writeln!(out, "{id}");
            }
        }
        Labels::Multilabel { values, num_classes } => {
            for row in values.chunks(*num_classes) {
                for (j, v) in row.iter().enumerate() {
                    if j > 0 {
                        out.push(',');
                    }
                    let _ = write!(out, "{v}");
                }
                out.push('\n');
            }
        }
    }
    out
}

fn splits_text(g: &Graph) -> String {
    let mut out = String::new();
    for v in 0..g.num_nodes() {
        let role = if g.train_mask[v] {
            "train"
        } else if g.val_mask[v] {
            "val"
        } else if g.test_mask[v] {
            "test"
        } else {
            "none"
        };
        out.push_str(role);
        out.push('\n');
    }
    out
}

fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<(), GraphError> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| GraphError::Manifest(format!("serialize manifest: {e}")))?;
    write_file(&dir.join("manifest.json"), &(json + "\n"))
}

/// Writes a dataset in canonical form into `dir` (created if missing) and
/// returns the manifest written. Arrays are emitted exactly as held in
/// memory: the written manifest turns off load-time normalization and stores
/// directed entries so a reload is bit-identical.
pub fn save_canonical(dataset: &Dataset, name: &str, dir: &Path) -> Result<DatasetManifest, GraphError> {
    fs::create_dir_all(dir).map_err(|source| GraphError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let manifest = match dataset {
        Dataset::Transductive(g) => {
            write_file(&dir.join("edges.txt"), &edges_text(g))?;
            write_file(&dir.join("features.csv"), &features_text(g))?;
            write_file(&dir.join("labels.txt"), &labels_text(g))?;
            let has_masks = g.train_mask.iter().chain(&g.val_mask).chain(&g.test_mask).any(|&b| b);
            if has_masks {
                write_file(&dir.join("splits.txt"), &splits_text(g))?;
            }
            DatasetManifest {
                name: name.to_string(),
                task: TaskKind::Transductive,
                num_nodes: Some(g.num_nodes()),
                num_features: g.num_features(),
                num_classes: g.num_classes(),
                multilabel: g.labels().is_multilabel(),
                undirected: false,
                row_normalize: false,
                edges: Some("edges.txt".into()),
                features: Some("features.csv".into()),
                labels: Some("labels.txt".into()),
                splits: has_masks.then(|| "splits.txt".into()),
                graphs: Vec::new(),
            }
        }
        Dataset::Inductive { train, val, test } => {
            let mut entries = Vec::new();
            let mut index = 0usize;
            for (role, list) in [(SplitRole::Train, train), (SplitRole::Val, val), (SplitRole::Test, test)] {
                for g in list {
                    let sub: PathBuf = dir.join(format!("g{index}"));
                    fs::create_dir_all(&sub).map_err(|source| GraphError::Io {
                        path: sub.display().to_string(),
                        source,
                    })?;
                    write_file(&sub.join("edges.txt"), &edges_text(g))?;
                    write_file(&sub.join("features.csv"), &features_text(g))?;
                    write_file(&sub.join("labels.txt"), &labels_text(g))?;
                    entries.push(GraphEntry {
                        role,
                        num_nodes: g.num_nodes(),
                        edges: format!("g{index}/edges.txt"),
                        features: format!("g{index}/features.csv"),
                        labels: format!("g{index}/labels.txt"),
                    });
                    index += 1;
                }
            }
            let first = &train[0];
            DatasetManifest {
                name: name.to_string(),
                task: TaskKind::Inductive,
                num_nodes: None,
                num_features: first.num_features(),
                num_classes: first.num_classes(),
                multilabel: first.labels().is_multilabel(),
                undirected: false,
                row_normalize: false,
                edges: None,
                features: None,
                labels: None,
                splits: None,
                graphs: entries,
            }
        }
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}
