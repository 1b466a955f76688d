//! Converting edge-list + CSV inputs into the canonical dataset directory.
//!
//! Input files:
//! * edges: two whitespace-separated 0-based node ids per line; blank lines
//!   and `#` comments are skipped.
//! * features: one comma-separated row of decimals per node; the row count
//!   defines the node count.
//! * labels: one integer class id per line, or (when any line contains a
//!   comma) one comma-separated 0/1 row per node for multilabel tasks.
//! * splits (optional): one of `train`/`val`/`test`/`none` per line.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use snag_core::graph::{load_dataset, row_normalize, save_canonical, Dataset, Graph, Labels};
use snag_core::tensor::Tensor;

use crate::HarnessError;

#[derive(Debug, Clone)]
pub struct ConvertSpec {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: Option<PathBuf>,
    pub name: String,
    /// Keep edge lines as single directed entries instead of undirected pairs.
    pub directed: bool,
    /// Scale each feature row to sum to one before writing.
    pub row_normalize: bool,
}

#[derive(Debug, Clone)]
pub struct ConvertSummary {
    pub out_dir: PathBuf,
    pub num_nodes: usize,
    /// Directed adjacency entries after symmetrization and dedup.
    pub num_entries: usize,
    pub num_features: usize,
    pub num_classes: usize,
    pub multilabel: bool,
}

fn read_input(path: &Path, what: &str) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            HarnessError::Config(format!("missing {what} file {}", path.display()))
        } else {
            HarnessError::Config(format!("cannot read {what} file {}: {e}", path.display()))
        }
    })
}

fn at(path: &Path, line: usize, msg: String) -> HarnessError {
    HarnessError::Config(format!("{}:{line}: {msg}", path.display()))
}

fn parse_edges(path: &Path) -> Result<Vec<(usize, usize)>, HarnessError> {
    let text = read_input(path, "edges")?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(at(path, i + 1, format!("expected two node ids, got {line:?}")));
        };
        let u = a.parse::<usize>().map_err(|_| at(path, i + 1, format!("bad node id {a:?}")))?;
        let v = b.parse::<usize>().map_err(|_| at(path, i + 1, format!("bad node id {b:?}")))?;
        edges.push((u, v));
    }
    Ok(edges)
}

fn parse_features(path: &Path) -> Result<Tensor, HarnessError> {
    let text = read_input(path, "features")?;
    let mut rows: Vec<f64> = Vec::new();
    let (mut n, mut width) = (0usize, 0usize);
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            return Err(at(path, i + 1, "blank feature row".into()));
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|_| at(path, i + 1, format!("bad feature value {tok:?}")))
            })
            .collect::<Result<_, _>>()?;
        if n == 0 {
            width = row.len();
        } else if row.len() != width {
            return Err(at(path, i + 1, format!("row has {} values, expected {width}", row.len())));
        }
        rows.extend(row);
        n += 1;
    }
    if n == 0 {
        return Err(HarnessError::Config(format!("{}: no feature rows", path.display())));
    }
    Tensor::matrix(n, width, rows).map_err(|e| HarnessError::Config(e.to_string()))
}

fn parse_labels(path: &Path, num_nodes: usize) -> Result<Labels, HarnessError> {
    let text = read_input(path, "labels")?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != num_nodes {
        return Err(HarnessError::Config(format!(
            "{}: {} label lines for {num_nodes} nodes",
            path.display(),
            lines.len()
        )));
    }
    if text.contains(',') {
        let mut values = Vec::new();
        let mut width = 0usize;
        for (i, line) in lines.iter().enumerate() {
            let row: Vec<f64> = line
                .split(',')
                .map(|tok| match tok.trim() {
                    "0" => Ok(0.0),
                    "1" => Ok(1.0),
                    other => Err(at(path, i + 1, format!("multilabel entries must be 0 or 1, got {other:?}"))),
                })
                .collect::<Result<_, _>>()?;
            if i == 0 {
                width = row.len();
            } else if row.len() != width {
                return Err(at(path, i + 1, format!("row has {} labels, expected {width}", row.len())));
            }
            values.extend(row);
        }
        Ok(Labels::Multilabel { num_classes: width, values: Arc::new(values) })
    } else {
        let mut ids = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            let id = line
                .trim()
                .parse::<usize>()
                .map_err(|_| at(path, i + 1, format!("bad class id {:?}", line.trim())))?;
            ids.push(id);
        }
        let num_classes = ids.iter().max().copied().unwrap_or(0) + 1;
        Ok(Labels::Multiclass { num_classes, ids })
    }
}

fn parse_split_file(path: &Path, num_nodes: usize) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>), HarnessError> {
    let text = read_input(path, "splits")?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != num_nodes {
        return Err(HarnessError::Config(format!(
            "{}: {} split lines for {num_nodes} nodes",
            path.display(),
            lines.len()
        )));
    }
    let mut train = vec![false; num_nodes];
    let mut val = vec![false; num_nodes];
    let mut test = vec![false; num_nodes];
    for (i, line) in lines.iter().enumerate() {
        match line.trim() {
            "train" => train[i] = true,
            "val" => val[i] = true,
            "test" => test[i] = true,
            "none" => {}
            other => {
                return Err(at(path, i + 1, format!("expected train/val/test/none, got {other:?}")));
            }
        }
    }
    Ok((train, val, test))
}

/// Reads the input files, builds the graph, writes the canonical directory,
/// and verifies it loads back with matching counts.
pub fn convert(spec: &ConvertSpec, out_dir: &Path) -> Result<ConvertSummary, HarnessError> {
    let edges = parse_edges(&spec.edges)?;
    let mut features = parse_features(&spec.features)?;
    let num_nodes = features.shape()[0];
    let labels = parse_labels(&spec.labels, num_nodes)?;
    if spec.row_normalize {
        row_normalize(&mut features);
    }
    let mut graph = Graph::from_edges(num_nodes, &edges, !spec.directed, features, labels)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    if let Some(splits) = &spec.splits {
        let (train, val, test) = parse_split_file(splits, num_nodes)?;
        graph
            .set_masks(train, val, test)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    let dataset = Dataset::Transductive(graph);
    save_canonical(&dataset, &spec.name, out_dir)
        .map_err(|e| HarnessError::Runtime(format!("writing {}: {e}", out_dir.display())))?;

    // Round-trip check: the directory we just wrote must load to the same
    // shape.
    let (manifest, loaded) = load_dataset(out_dir)
        .map_err(|e| HarnessError::Runtime(format!("round-trip load failed: {e}")))?;
    let (Dataset::Transductive(orig), Dataset::Transductive(back)) = (&dataset, &loaded) else {
        return Err(HarnessError::Runtime("round-trip changed the task kind".into()));
    };
    if back.num_nodes() != orig.num_nodes()
        || back.num_entries() != orig.num_entries()
        || back.num_features() != orig.num_features()
        || back.num_classes() != orig.num_classes()
    {
        return Err(HarnessError::Runtime("round-trip load disagrees with the source".into()));
    }
    Ok(ConvertSummary {
        out_dir: out_dir.to_path_buf(),
        num_nodes: orig.num_nodes(),
        num_entries: orig.num_entries(),
        num_features: orig.num_features(),
        num_classes: manifest.num_classes,
        multilabel: manifest.multilabel,
    })
}
