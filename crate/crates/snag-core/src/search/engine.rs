//! The outer search loops: REINFORCE-driven search (with or without weight
//! sharing), the uniform random-search baseline, and final-architecture
//! derivation, all recorded as reproducible traces.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Dataset;
use crate::space::{Genotype, SearchSpaceConfig};

use super::child::{train_child, ChildConfig};
use super::controller::{ControllerState, Episode};
use super::params::ParamDict;
use super::SearchError;

/// How trace timestamps advance. Wall time measures the host clock; the
/// virtual clock counts one second per completed training epoch (at least one
/// per candidate), which makes traces bit-reproducible across machines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    Wall,
    Virtual,
}

struct Clock {
    kind: ClockKind,
    start: Instant,
    virtual_seconds: f64,
}

impl Clock {
    fn start(kind: ClockKind) -> Self {
        Clock { kind, start: Instant::now(), virtual_seconds: 0.0 }
    }

    fn charge_epochs(&mut self, epochs: usize) {
        self.virtual_seconds += epochs.max(1) as f64;
    }

    fn seconds(&self) -> f64 {
        match self.kind {
            ClockKind::Wall => self.start.elapsed().as_secs_f64(),
            ClockKind::Virtual => self.virtual_seconds,
        }
    }
}

/// Settings of one search run.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub space: SearchSpaceConfig,
    pub child: ChildConfig,
    pub controller_hidden: usize,
    pub embed_dim: usize,
    pub controller_lr: f64,
    /// EMA decay of the reward baseline.
    pub baseline_gamma: f64,
    /// Entropy bonus weight.
    pub entropy_beta: f64,
    pub timing: ClockKind,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            space: SearchSpaceConfig::default(),
            child: ChildConfig::default(),
            controller_hidden: 64,
            embed_dim: 32,
            controller_lr: 0.005,
            baseline_gamma: 0.95,
            entropy_beta: 1e-3,
            timing: ClockKind::Wall,
        }
    }
}

/// One evaluated candidate in a trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub seconds: f64,
    pub genotype: String,
    pub val_metric: f64,
    /// Reward baseline in force when the candidate was scored (0 for
    /// baseline-free searches).
    pub baseline: f64,
    /// Candidate blew up numerically and was scored 0.
    pub diverged: bool,
}

/// Ordered record of every candidate evaluation in a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SearchTrace {
    pub records: Vec<TraceRecord>,
}

impl SearchTrace {
    /// The record with the best validation metric (first on ties).
    pub fn best(&self) -> Option<&TraceRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&TraceRecord>, r| match best {
                Some(b) if b.val_metric >= r.val_metric => Some(b),
                _ => Some(r),
            })
    }

    /// CSV form: header `iter,seconds,genotype,val_metric,baseline` and one
    /// row per record. Floats print in shortest round-trip form; genotypes
    /// holding commas (depth above one) are double-quoted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,seconds,genotype,val_metric,baseline\n");
        for r in &self.records {
            let genotype = if r.genotype.contains(',') {
                format!("\"{}\"", r.genotype)
            } else {
                r.genotype.clone()
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.iter, r.seconds, genotype, r.val_metric, r.baseline
            ));
        }
        out
    }
}

/// Everything a finished search leaves behind.
pub struct SearchOutcome {
    pub trace: SearchTrace,
    pub controller: ControllerState,
    /// The shared dictionary when weight sharing was on.
    pub shared: Option<ParamDict>,
}

/// Folds a genotype (and an optional grid salt) into the run seed, so a
/// candidate's training is a pure function of what it is rather than when it
/// was sampled. FNV-1a over the encoded string.
pub fn child_seed(run_seed: u64, genotype: &Genotype, salt: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in genotype.encode().bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ run_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt
}

/// REINFORCE search: sample a candidate, train it, feed the validation
/// metric back as reward, `budget` times. `ws = true` threads one shared
/// parameter dictionary through every child (the weight-sharing variant);
/// otherwise children train from scratch.
pub fn search(
    cfg: &SearchConfig,
    data: &Dataset,
    budget: usize,
    ws: bool,
    seed: u64,
) -> Result<SearchOutcome, SearchError> {
    if budget == 0 {
        return Err(SearchError::Invalid("search budget must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut controller = ControllerState::new(
        &cfg.space,
        cfg.controller_hidden,
        cfg.embed_dim,
        cfg.controller_lr,
        cfg.baseline_gamma,
        cfg.entropy_beta,
        &mut rng,
    )?;
    let mut shared = ws.then(ParamDict::new);
    let mut clock = Clock::start(cfg.timing);
    let mut trace = SearchTrace::default();
    for iter in 1..=budget {
        let sample = controller.sample(&mut rng)?;
        let outcome = train_child(
            &sample.genotype,
            data,
            &cfg.child,
            shared.as_mut(),
            child_seed(seed, &sample.genotype, 0),
        )?;
        clock.charge_epochs(outcome.epochs_run);
        trace.records.push(TraceRecord {
            iter,
            seconds: clock.seconds(),
            genotype: sample.genotype.encode(),
            val_metric: outcome.val_metric,
            baseline: controller.baseline(),
            diverged: outcome.diverged,
        });
        controller.reinforce_update(&[Episode {
            actions: sample.actions,
            log_probs: sample.log_probs,
            entropy: sample.entropy,
            reward: outcome.val_metric,
        }])?;
    }
    Ok(SearchOutcome { trace, controller, shared })
}

/// Uniform random search over the space, each candidate trained from
/// scratch. With `dedup`, repeated genotypes are skipped; a budget at least
/// the size of the space then visits every genotype exactly once (in a
/// shuffled order), and the trace ends early once the space is exhausted.
pub fn random_search(
    cfg: &SearchConfig,
    data: &Dataset,
    budget: usize,
    dedup: bool,
    seed: u64,
) -> Result<SearchTrace, SearchError> {
    if budget == 0 {
        return Err(SearchError::Invalid("search budget must be at least 1".into()));
    }
    cfg.space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<Genotype> = if dedup {
        let size = cfg.space.space_size();
        if size <= budget as u128 {
            // Exhaustive: enumerate and shuffle.
            let mut all: Vec<Genotype> = cfg.space.enumerate(budget as u64)?.collect();
            use rand::seq::SliceRandom;
            all.shuffle(&mut rng);
            all
        } else {
            let mut seen = std::collections::HashSet::new();
            let mut picks = Vec::with_capacity(budget);
            while picks.len() < budget {
                let g = cfg.space.sample_uniform(&mut rng);
                if seen.insert(g.encode()) {
                    picks.push(g);
                }
            }
            picks
        }
    } else {
        (0..budget).map(|_| cfg.space.sample_uniform(&mut rng)).collect()
    };
    let mut clock = Clock::start(cfg.timing);
    let mut trace = SearchTrace::default();
    for (i, genotype) in candidates.iter().enumerate() {
        let outcome = train_child(genotype, data, &cfg.child, None, child_seed(seed, genotype, 0))?;
        clock.charge_epochs(outcome.epochs_run);
        trace.records.push(TraceRecord {
            iter: i + 1,
            seconds: clock.seconds(),
            genotype: genotype.encode(),
            val_metric: outcome.val_metric,
            baseline: 0.0,
            diverged: outcome.diverged,
        });
    }
    Ok(trace)
}

/// Derivation settings: how many candidates to sample from the trained
/// policy and the retraining grid.
#[derive(Debug, Clone)]
pub struct DerivationConfig {
    pub num_candidates: usize,
    pub learning_rates: Vec<f64>,
    pub hidden_dims: Vec<usize>,
}

impl Default for DerivationConfig {
    fn default() -> Self {
        DerivationConfig {
            num_candidates: 10,
            learning_rates: vec![0.01, 0.005, 0.001],
            hidden_dims: vec![32, 64],
        }
    }
}

/// One grid point's retraining result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridResult {
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub val_metric: f64,
    pub test_metric: f64,
    pub diverged: bool,
}

/// One sampled candidate's retraining results across the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateReport {
    pub genotype: String,
    pub best_val: f64,
    pub best_learning_rate: f64,
    pub best_hidden_dim: usize,
    pub grid: Vec<GridResult>,
}

/// The derivation verdict: the winning genotype and its test performance at
/// the winning grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DerivationReport {
    pub chosen_genotype: String,
    pub val_metric: f64,
    pub test_metric: f64,
    pub learning_rate: f64,
    pub hidden_dim: usize,
    pub candidates: Vec<CandidateReport>,
}

/// Samples `cfg.num_candidates` genotypes from the trained policy, retrains
/// each from scratch over the tuning grid, and picks the best validation
/// performer (first on ties). Children are seeded by genotype and grid
/// point, so repeated samples repeat their results.
pub fn derive(
    controller: &ControllerState,
    data: &Dataset,
    cfg: &DerivationConfig,
    child: &ChildConfig,
    seed: u64,
) -> Result<DerivationReport, SearchError> {
    if cfg.num_candidates == 0 || cfg.learning_rates.is_empty() || cfg.hidden_dims.is_empty() {
        return Err(SearchError::Invalid("derivation needs candidates and a non-empty grid".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<CandidateReport> = Vec::with_capacity(cfg.num_candidates);
    let mut best: Option<(usize, usize)> = None; // (candidate idx, grid idx)
    for _ in 0..cfg.num_candidates {
        let genotype = controller.sample(&mut rng)?.genotype;
        let mut grid = Vec::new();
        for &lr in &cfg.learning_rates {
            for &hidden in &cfg.hidden_dims {
                let salt = lr.to_bits() ^ (hidden as u64).rotate_left(17);
                let mut point = child.clone();
                point.learning_rate = lr;
                point.hidden_dim = hidden;
                let outcome =
                    train_child(&genotype, data, &point, None, child_seed(seed, &genotype, salt))?;
                grid.push(GridResult {
                    learning_rate: lr,
                    hidden_dim: hidden,
                    val_metric: outcome.val_metric,
                    test_metric: outcome.test_metric,
                    diverged: outcome.diverged,
                });
            }
        }
        let best_in_grid = (0..grid.len())
            .fold(0, |b, i| if grid[i].val_metric > grid[b].val_metric { i } else { b });
        let report = CandidateReport {
            genotype: genotype.encode(),
            best_val: grid[best_in_grid].val_metric,
            best_learning_rate: grid[best_in_grid].learning_rate,
            best_hidden_dim: grid[best_in_grid].hidden_dim,
            grid,
        };
        let idx = candidates.len();
        if best.map_or(true, |(c, g)| report.best_val > candidates[c].grid[g].val_metric) {
            best = Some((idx, best_in_grid));
        }
        candidates.push(report);
    }
    let (ci, gi) = best.expect("at least one candidate");
    let top = &candidates[ci];
    let point = &top.grid[gi];
    Ok(DerivationReport {
        chosen_genotype: top.genotype.clone(),
        val_metric: point.val_metric,
        test_metric: point.test_metric,
        learning_rate: point.learning_rate,
        hidden_dim: point.hidden_dim,
        candidates,
    })
}

/// Convenience: uniform draws from `space` for tests and tooling.
pub fn sample_genotypes(space: &SearchSpaceConfig, n: usize, seed: u64) -> Vec<Genotype> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| space.sample_uniform(&mut rng)).collect()
}
