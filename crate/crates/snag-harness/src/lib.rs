//! Experiment harness around the search library: JSON-configured runs,
//! dataset conversion, the layer-aggregator ablation, and space listing.

pub mod config;
pub mod convert;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, SearchMode};
pub use convert::{convert, ConvertSpec, ConvertSummary};
pub use report::{mean_std, AblationReport, RunReport, SeedResult};
pub use run::{load_data, run_ablation, run_experiment};

use snag_core::space::SearchSpaceConfig;

/// Errors are classed by exit code: configuration and input validation
/// problems exit 2, anything failing mid-run exits 1.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Search(#[from] snag_core::search::SearchError),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Every genotype of `space` in lexicographic string order, followed by a
/// `total:` line. Refuses spaces larger than `cap`.
pub fn enumerate_listing(space: &SearchSpaceConfig, cap: u64) -> Result<String, HarnessError> {
    let mut lines: Vec<String> = space
        .enumerate(cap)
        .map_err(|e| HarnessError::Config(e.to_string()))?
        .map(|g| g.encode())
        .collect();
    lines.sort();
    let mut out = lines.join("\n");
    out.push_str(&format!("\ntotal: {}\n", space.space_size()));
    Ok(out)
}
