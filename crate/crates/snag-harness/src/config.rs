//! Experiment configuration: one flat JSON object per run. Unknown keys are
//! rejected so typos fail loudly instead of silently using a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use snag_core::gnn::{LayerAggregatorKind, NodeAggregatorKind};
use snag_core::search::{ChildConfig, ClockKind, SearchConfig};
use snag_core::space::{baseline_genotype, Genotype, SearchSpaceConfig};

use crate::HarnessError;

/// What a run does with its budget.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchMode {
    /// REINFORCE search, children trained from scratch.
    Snag,
    /// REINFORCE search with the shared parameter dictionary.
    SnagWs,
    /// Uniform random baseline.
    Random,
    /// No search: train this genotype directly.
    Fixed(Genotype),
}

impl SearchMode {
    /// Accepts `snag`, `snag-ws`, `random`, or `fixed:<name-or-genotype>`,
    /// where the fixed payload is a named baseline (e.g. `GCN`, `GAT-JK`) or
    /// a full genotype string.
    pub fn parse(s: &str, depth: usize) -> Result<Self, HarnessError> {
        match s {
            "snag" => Ok(SearchMode::Snag),
            "snag-ws" => Ok(SearchMode::SnagWs),
            "random" => Ok(SearchMode::Random),
            _ => {
                let Some(spec) = s.strip_prefix("fixed:") else {
                    return Err(HarnessError::Config(format!(
                        "unknown mode {s:?} (expected snag, snag-ws, random, or fixed:<genotype>)"
                    )));
                };
                if let Ok(g) = baseline_genotype(spec, depth) {
                    return Ok(SearchMode::Fixed(g));
                }
                match Genotype::decode(spec) {
                    Ok(g) => Ok(SearchMode::Fixed(g)),
                    Err(e) => Err(HarnessError::Config(format!(
                        "fixed mode payload {spec:?} is neither a baseline name nor a genotype: {e}"
                    ))),
                }
            }
        }
    }

    pub fn is_reinforce(&self) -> bool {
        matches!(self, SearchMode::Snag | SearchMode::SnagWs)
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_budget() -> usize {
    20
}
fn default_depth() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_hidden_dim() -> usize {
    64
}
fn default_dropout() -> f64 {
    0.5
}
fn default_learning_rate() -> f64 {
    0.005
}
fn default_max_epochs() -> usize {
    300
}
fn default_patience() -> usize {
    30
}
fn default_controller_hidden() -> usize {
    64
}
fn default_embed_dim() -> usize {
    32
}
fn default_controller_lr() -> f64 {
    0.005
}
fn default_baseline_gamma() -> f64 {
    0.95
}
fn default_entropy_beta() -> f64 {
    1e-3
}
fn default_timing() -> ClockKind {
    ClockKind::Wall
}

/// One experiment, defined by a flat JSON object. Exactly one data source is
/// set: `dataset` (a canonical dataset directory) or the `sbm_*` family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// `snag` | `snag-ws` | `random` | `fixed:<name-or-genotype>`.
    pub mode: String,
    /// Candidates evaluated per seed (ignored by fixed mode).
    #[serde(default = "default_budget")]
    pub budget: usize,
    pub seeds: Vec<u64>,

    /// Canonical dataset directory, resolved relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    /// Declared task kind; checked against the loaded data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<snag_core::graph::TaskKind>,

    // Synthetic planted-community task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sbm_blocks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sbm_nodes_per_block: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sbm_p_in: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sbm_p_out: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sbm_feature_noise: Option<f64>,
    #[serde(default)]
    pub sbm_seed: u64,

    /// Re-split a transductive graph: (train, val, test) fractions. Defaults
    /// to 0.6/0.2/0.2 when the graph carries no split of its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_fractions: Option<[f64; 3]>,
    #[serde(default)]
    pub split_seed: u64,

    // Search space.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_aggregators: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_aggregators: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub include_layer_aggregators: bool,

    // Child training.
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,

    // Controller.
    #[serde(default = "default_controller_hidden")]
    pub controller_hidden: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_controller_lr")]
    pub controller_lr: f64,
    #[serde(default = "default_baseline_gamma")]
    pub baseline_gamma: f64,
    #[serde(default = "default_entropy_beta")]
    pub entropy_beta: f64,

    /// `wall` for real time, `virtual` for the epoch-counting clock that
    /// makes traces bit-reproducible.
    #[serde(default = "default_timing")]
    pub timing: ClockKind,
    /// Skip repeated genotypes in random mode.
    #[serde(default = "default_true")]
    pub random_dedup: bool,

    /// Final-architecture derivation: candidates sampled from the trained
    /// policy. 0 retrains the best trace genotype instead.
    #[serde(default)]
    pub derive_candidates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derive_learning_rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derive_hidden_dims: Option<Vec<usize>>,

    /// Where traces and reports go; `--out` overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    /// Parses and validates a config file. Relative paths inside the config
    /// resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(ds) = &cfg.dataset {
            let p = base.join(ds);
            cfg.dataset = Some(p.to_string_lossy().into_owned());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every invariant that does not require loading the data.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |msg: String| Err(HarnessError::Config(msg));
        if self.seeds.is_empty() {
            return err("seeds must be non-empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return err("seeds contain duplicates".into());
        }
        if self.budget == 0 {
            return err("budget must be at least 1".into());
        }
        let mode = self.mode()?;

        let sbm_on = self.sbm_blocks.is_some()
            || self.sbm_nodes_per_block.is_some()
            || self.sbm_p_in.is_some()
            || self.sbm_p_out.is_some()
            || self.sbm_feature_noise.is_some();
        match (&self.dataset, sbm_on) {
            (Some(_), true) => return err("set either dataset or the sbm_* keys, not both".into()),
            (None, false) => return err("no data source: set dataset or the sbm_* keys".into()),
            (Some(path), false) => {
                if !Path::new(path).is_dir() {
                    return err(format!("dataset directory {path} does not exist"));
                }
            }
            (None, true) => {
                for (key, set) in [
                    ("sbm_blocks", self.sbm_blocks.is_some()),
                    ("sbm_nodes_per_block", self.sbm_nodes_per_block.is_some()),
                    ("sbm_p_in", self.sbm_p_in.is_some()),
                    ("sbm_p_out", self.sbm_p_out.is_some()),
                ] {
                    if !set {
                        return err(format!("synthetic task needs {key}"));
                    }
                }
            }
        }
        if let Some(f) = self.split_fractions {
            if f.iter().any(|&x| x < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return err(format!("split_fractions {f:?} must be non-negative and sum to 1"));
            }
        }
        self.space().map_err(|e| HarnessError::Config(e.to_string()))?.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for (key, v) in [
            ("hidden_dim", self.hidden_dim),
            ("controller_hidden", self.controller_hidden),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return err(format!("{key} must be positive"));
            }
        }
        for (key, v) in [
            ("learning_rate", self.learning_rate),
            ("controller_lr", self.controller_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{key} must be positive and finite, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.baseline_gamma) {
            return err(format!("baseline_gamma {} outside [0, 1)", self.baseline_gamma));
        }
        if !(self.entropy_beta >= 0.0 && self.entropy_beta.is_finite()) {
            return err(format!("entropy_beta must be finite and >= 0, got {}", self.entropy_beta));
        }
        if self.derive_candidates > 0 {
            if !mode.is_reinforce() {
                return err("derive_candidates needs a trained policy (mode snag or snag-ws)".into());
            }
            if matches!(&self.derive_learning_rates, Some(v) if v.is_empty())
                || matches!(&self.derive_hidden_dims, Some(v) if v.is_empty())
            {
                return err("derivation grid lists must be non-empty when given".into());
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> Result<SearchMode, HarnessError> {
        SearchMode::parse(&self.mode, self.depth)
    }

    /// The search space this config spans.
    pub fn space(&self) -> Result<SearchSpaceConfig, HarnessError> {
        let node_aggregators = match &self.node_aggregators {
            None => NodeAggregatorKind::ALL.to_vec(),
            Some(ids) => ids
                .iter()
                .map(|id| {
                    NodeAggregatorKind::from_id(id)
                        .ok_or_else(|| HarnessError::Config(format!("unknown node aggregator {id:?}")))
                })
                .collect::<Result<_, _>>()?,
        };
        let layer_aggregators = match &self.layer_aggregators {
            None => LayerAggregatorKind::ALL.to_vec(),
            Some(ids) => ids
                .iter()
                .map(|id| {
                    LayerAggregatorKind::from_id(id)
                        .ok_or_else(|| HarnessError::Config(format!("unknown layer aggregator {id:?}")))
                })
                .collect::<Result<_, _>>()?,
        };
        Ok(SearchSpaceConfig {
            depth: self.depth,
            node_aggregators,
            layer_aggregators,
            include_layer_aggregators: self.include_layer_aggregators,
        })
    }

    pub fn child(&self) -> ChildConfig {
        ChildConfig {
            hidden_dim: self.hidden_dim,
            dropout: self.dropout,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
        }
    }

    pub fn engine(&self) -> Result<SearchConfig, HarnessError> {
        Ok(SearchConfig {
            space: self.space()?,
            child: self.child(),
            controller_hidden: self.controller_hidden,
            embed_dim: self.embed_dim,
            controller_lr: self.controller_lr,
            baseline_gamma: self.baseline_gamma,
            entropy_beta: self.entropy_beta,
            timing: self.timing,
        })
    }

    /// Output directory after applying the CLI override.
    pub fn resolve_out_dir(&self, cli_out: Option<&Path>) -> Result<PathBuf, HarnessError> {
        match (cli_out, &self.out_dir) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, Some(s)) => Ok(PathBuf::from(s)),
            (None, None) => Err(HarnessError::Config(
                "no output directory: set out_dir in the config or pass --out".into(),
            )),
        }
    }
}
