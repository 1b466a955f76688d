//! Executing experiments: data loading, the per-seed run, and report/trace
//! emission.

use std::path::Path;
use std::time::Instant;

use snag_core::graph::sbm::sbm_generate;
use snag_core::graph::{load_dataset, make_splits, Dataset, TaskKind};
use snag_core::search::child::metric_kind_for;
use snag_core::search::{
    child_seed, derive, random_search, search, ClockKind, DerivationConfig, SearchTrace,
    TraceRecord, train_child,
};
use snag_core::space::Genotype;

use crate::config::{ExperimentConfig, SearchMode};
use crate::report::{mean_std, AblationReport, RunReport, SeedResult};
use crate::HarnessError;

/// Builds the configured dataset, applies splits, and adds self-loops.
/// Returns the data alongside its display name.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, String), HarnessError> {
    let conf = |msg: String| HarnessError::Config(msg);
    let (mut data, name, task) = match &cfg.dataset {
        Some(dir) => {
            let (manifest, data) =
                load_dataset(Path::new(dir)).map_err(|e| conf(format!("loading {dir}: {e}")))?;
            (data, manifest.name, manifest.task)
        }
        None => {
            let g = sbm_generate(
                cfg.sbm_blocks.expect("validated"),
                cfg.sbm_nodes_per_block.expect("validated"),
                cfg.sbm_p_in.expect("validated"),
                cfg.sbm_p_out.expect("validated"),
                cfg.sbm_feature_noise.unwrap_or(0.0),
                cfg.sbm_seed,
            )
            .map_err(|e| conf(e.to_string()))?;
            let name = format!(
                "sbm-{}x{}",
                cfg.sbm_blocks.unwrap(),
                cfg.sbm_nodes_per_block.unwrap()
            );
            (Dataset::Transductive(g), name, TaskKind::Transductive)
        }
    };
    if let Some(declared) = cfg.task {
        if declared != task {
            return Err(conf(format!("config declares task {declared:?} but {name} is {task:?}")));
        }
    }
    match &mut data {
        Dataset::Transductive(g) => {
            let has_split = g.train_mask.iter().any(|&b| b);
            let fractions = match cfg.split_fractions {
                Some(f) => Some((f[0], f[1], f[2])),
                // A graph arriving with no split at all gets the standard one.
                None if !has_split => Some((0.6, 0.2, 0.2)),
                None => None,
            };
            if let Some(f) = fractions {
                *g = make_splits(g, f, cfg.split_seed).map_err(|e| conf(e.to_string()))?;
            }
        }
        Dataset::Inductive { .. } => {
            if cfg.split_fractions.is_some() {
                return Err(conf("split_fractions applies only to transductive data".into()));
            }
        }
    }
    Ok((data.with_self_loops(), name))
}

/// Retrains the best-validation trace candidate from scratch. Children are
/// seeded by genotype, so for from-scratch searches this reproduces the
/// in-search result exactly; for weight-sharing runs it is the honest
/// standalone restatement of the shared-weight score.
fn choose_from_trace(
    cfg: &ExperimentConfig,
    data: &Dataset,
    trace: &SearchTrace,
    seed: u64,
) -> Result<SeedResult, HarnessError> {
    let best = trace
        .best()
        .ok_or_else(|| HarnessError::Runtime("search produced an empty trace".into()))?;
    let genotype = Genotype::decode(&best.genotype)
        .map_err(|e| HarnessError::Runtime(format!("trace genotype failed to decode: {e}")))?;
    let out = train_child(&genotype, data, &cfg.child(), None, child_seed(seed, &genotype, 0))?;
    Ok(SeedResult {
        seed,
        genotype: best.genotype.clone(),
        val_metric: out.val_metric,
        test_metric: out.test_metric,
        seconds: trace.records.last().map_or(0.0, |r| r.seconds),
        diverged: out.diverged,
    })
}

fn run_seed(
    cfg: &ExperimentConfig,
    mode: &SearchMode,
    data: &Dataset,
    seed: u64,
) -> Result<(SeedResult, String), HarnessError> {
    match mode {
        SearchMode::Fixed(g) => {
            let start = Instant::now();
            let out = train_child(g, data, &cfg.child(), None, child_seed(seed, g, 0))?;
            let seconds = match cfg.timing {
                ClockKind::Wall => start.elapsed().as_secs_f64(),
                ClockKind::Virtual => out.epochs_run.max(1) as f64,
            };
            let trace = SearchTrace {
                records: vec![TraceRecord {
                    iter: 1,
                    seconds,
                    genotype: g.encode(),
                    val_metric: out.val_metric,
                    baseline: 0.0,
                    diverged: out.diverged,
                }],
            };
            let result = SeedResult {
                seed,
                genotype: g.encode(),
                val_metric: out.val_metric,
                test_metric: out.test_metric,
                seconds,
                diverged: out.diverged,
            };
            Ok((result, trace.to_csv()))
        }
        SearchMode::Random => {
            let trace = random_search(&cfg.engine()?, data, cfg.budget, cfg.random_dedup, seed)?;
            let result = choose_from_trace(cfg, data, &trace, seed)?;
            Ok((result, trace.to_csv()))
        }
        SearchMode::Snag | SearchMode::SnagWs => {
            let ws = matches!(mode, SearchMode::SnagWs);
            let outcome = search(&cfg.engine()?, data, cfg.budget, ws, seed)?;
            let seconds = outcome.trace.records.last().map_or(0.0, |r| r.seconds);
            let result = if cfg.derive_candidates > 0 {
                let dcfg = DerivationConfig {
                    num_candidates: cfg.derive_candidates,
                    learning_rates: cfg
                        .derive_learning_rates
                        .clone()
                        .unwrap_or_else(|| vec![cfg.learning_rate]),
                    hidden_dims: cfg.derive_hidden_dims.clone().unwrap_or_else(|| vec![cfg.hidden_dim]),
                };
                let rep = derive(&outcome.controller, data, &dcfg, &cfg.child(), seed)?;
                // The report's winner corresponds to one grid entry; recover
                // its divergence flag.
                let diverged = rep
                    .candidates
                    .iter()
                    .find(|c| c.genotype == rep.chosen_genotype)
                    .and_then(|c| {
                        c.grid.iter().find(|p| {
                            p.learning_rate == rep.learning_rate && p.hidden_dim == rep.hidden_dim
                        })
                    })
                    .is_some_and(|p| p.diverged);
                SeedResult {
                    seed,
                    genotype: rep.chosen_genotype,
                    val_metric: rep.val_metric,
                    test_metric: rep.test_metric,
                    seconds,
                    diverged,
                }
            } else {
                choose_from_trace(cfg, data, &outcome.trace, seed)?
            };
            Ok((result, outcome.trace.to_csv()))
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

/// Runs the configured mode once per seed, writing `trace_seed<k>.csv` per
/// seed and `report.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunReport, HarnessError> {
    cfg.validate()?;
    let mode = cfg.mode()?;
    let (data, dataset_name) = load_data(cfg)?;
    let metric = metric_kind_for(&data);
    std::fs::create_dir_all(out_dir)
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", out_dir.display())))?;
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (result, trace_csv) = run_seed(cfg, &mode, &data, seed)?;
        write_file(&out_dir.join(format!("trace_seed{seed}.csv")), &trace_csv)?;
        per_seed.push(result);
    }
    let tests: Vec<f64> = per_seed.iter().map(|r| r.test_metric).collect();
    let (mean_test, std_test) = mean_std(&tests);
    let total_seconds = per_seed.iter().map(|r| r.seconds).sum();
    let report = RunReport {
        name: cfg.name.clone(),
        mode: cfg.mode.clone(),
        dataset: dataset_name,
        metric: metric.id().to_string(),
        budget: cfg.budget,
        per_seed,
        mean_test,
        std_test,
        total_seconds,
    };
    write_file(&out_dir.join("report.json"), &report.json())?;
    Ok(report)
}

/// Runs the experiment twice with identical seeds: once over the full space
/// ("with") and once with layer aggregators ablated ("without"); fixed
/// genotypes are projected into the ablated space for the second arm. Arms
/// land in `with/` and `without/` subdirectories plus a combined
/// `ablation.json`.
pub fn run_ablation(cfg: &ExperimentConfig, out_dir: &Path) -> Result<AblationReport, HarnessError> {
    cfg.validate()?;
    let mut with_cfg = cfg.clone();
    with_cfg.include_layer_aggregators = true;
    let mut without_cfg = cfg.clone();
    without_cfg.include_layer_aggregators = false;
    if let SearchMode::Fixed(g) = cfg.mode()? {
        without_cfg.mode = format!("fixed:{}", g.ablated().encode());
    }
    let with_layer_aggs = run_experiment(&with_cfg, &out_dir.join("with"))?;
    let without_layer_aggs = run_experiment(&without_cfg, &out_dir.join("without"))?;
    let report = AblationReport { with_layer_aggs, without_layer_aggs };
    write_file(&out_dir.join("ablation.json"), &report.json())?;
    Ok(report)
}
