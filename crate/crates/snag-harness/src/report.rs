//! Aggregate results across seeds.

use serde::{Deserialize, Serialize};

/// One seed's outcome: the architecture the run settled on and its metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub genotype: String,
    pub val_metric: f64,
    pub test_metric: f64,
    /// Search time for this seed under the configured clock.
    pub seconds: f64,
    pub diverged: bool,
}

/// The aggregate a run leaves behind, one entry per seed plus summary
/// statistics over the test metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub mode: String,
    pub dataset: String,
    /// `accuracy` or `micro-f1`, decided by the task.
    pub metric: String,
    pub budget: usize,
    pub per_seed: Vec<SeedResult>,
    pub mean_test: f64,
    pub std_test: f64,
    pub total_seconds: f64,
}

impl RunReport {
    pub fn json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Side-by-side pair from an ablation: the same run with and without layer
/// aggregators in the space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationReport {
    #[serde(rename = "with")]
    pub with_layer_aggs: RunReport,
    #[serde(rename = "without")]
    pub without_layer_aggs: RunReport,
}

impl AblationReport {
    pub fn json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Mean and sample standard deviation (n-1 denominator; 0 for a single
/// value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    assert!(!xs.is_empty(), "mean of nothing");
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
