//! The acceptance gate: nine end-to-end checks covering gradient integrity,
//! search-space semantics, controller convergence, desk-scale training
//! quality, search-vs-baseline direction, the layer-aggregator ablation,
//! weight-sharing efficiency, and bit-level reproducibility.
//!
//! Every check prints exactly one `criterion N (...): PASS/FAIL - ...` line
//! with its measured numbers (visible with --nocapture, or on failure), then
//! asserts. Run with `cargo test --test acceptance`.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snag_core::gnn::model::GnnModel;
use snag_core::gnn::{metrics, LayerAggregatorKind, ModelError, NodeAggregatorKind};
use snag_core::graph::sbm::sbm_generate;
use snag_core::graph::{add_self_loops, load_dataset, make_splits, Dataset, Graph, Labels};
use snag_core::search::{
    child_seed, derive, search, train_child, ChildConfig, ClockKind, ControllerState,
    DerivationConfig, Episode, SearchConfig, SearchTrace,
};
use snag_core::space::{baseline_genotype, Genotype, SearchSpaceConfig, BASELINE_NAMES};
use snag_core::tensor::check::{finite_diff_check, op_sweep};
use snag_core::tensor::tape::Tape;
use snag_core::tensor::Tensor;

use snag_harness::config::ExperimentConfig;
use snag_harness::run::run_experiment;

fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n} ({name}): {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}

/// Ring plus random chords, 3 classes, self loops added.
fn random_graph(n: usize, dim: usize, extra_edges: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (0..n).map(|v| (v, (v + 1) % n)).collect();
    for _ in 0..extra_edges {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            edges.push((a, b));
        }
    }
    let feats: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = Labels::Multiclass {
        num_classes: 3,
        ids: (0..n).map(|_| rng.gen_range(0..3)).collect(),
    };
    let g = Graph::from_edges(n, &edges, true, Tensor::matrix(n, dim, feats).unwrap(), labels).unwrap();
    add_self_loops(&g)
}

fn sbm_dataset(
    blocks: usize,
    per: usize,
    p_in: f64,
    p_out: f64,
    noise: f64,
    seed: u64,
    fractions: (f64, f64, f64),
) -> Dataset {
    let g = sbm_generate(blocks, per, p_in, p_out, noise, seed).unwrap();
    let g = make_splits(&g, fractions, seed ^ 1).unwrap();
    Dataset::Transductive(g).with_self_loops()
}

fn invalid_to_tensor(e: ModelError) -> snag_core::tensor::TensorError {
    match e {
        ModelError::Tensor(t) => t,
        other => snag_core::tensor::TensorError::InvalidArg {
            op: "model",
            msg: other.to_string(),
        },
    }
}

/// Every primitive op and every full (node aggregator x layer aggregator)
/// forward+loss pass matches central finite differences with relative error
/// below 1e-5 on 6-node toy graphs, 10 seeds, in under a minute.
#[test]
fn criterion_1_gradient_integrity() {
    let t0 = Instant::now();
    let tolerance = 1e-5;
    let mut max_err: f64 = 0.0;
    let mut failures: Vec<String> = Vec::new();

    for seed in 0..10u64 {
        for (op, report) in op_sweep(seed, tolerance).unwrap() {
            max_err = max_err.max(report.max_rel_error);
            if !report.passed {
                failures.push(format!("op {op} seed {seed}: {:.3e}", report.max_rel_error));
            }
        }
    }

    let mask = [true, true, false, true, false, true];
    for seed in 0..10u64 {
        let g = random_graph(6, 4, 4, 100 + seed);
        for node in NodeAggregatorKind::ALL {
            for layer in LayerAggregatorKind::ALL {
                let genotype = Genotype::new(vec![node, node], vec![true], Some(layer)).unwrap();
                let model =
                    GnnModel::new(&genotype, 4, 3, 3, 0.0, &mut ChaCha8Rng::seed_from_u64(31 + seed))
                        .unwrap();
                let points: Vec<Tensor> = model.parameters().into_iter().cloned().collect();
                let (g, m, mask) = (&g, &model, &mask[..]);
                let report = finite_diff_check(
                    move |tape: &mut Tape, vars| {
                        let bound = m.bind_slots(vars).map_err(invalid_to_tensor)?;
                        let mut rng = ChaCha8Rng::seed_from_u64(0);
                        let logits = m.forward(tape, &bound, g, &mut rng).map_err(invalid_to_tensor)?;
                        metrics::loss(tape, logits, g.labels(), mask).map_err(invalid_to_tensor)
                    },
                    &points,
                    tolerance,
                )
                .unwrap();
                max_err = max_err.max(report.max_rel_error);
                if !report.passed {
                    failures.push(format!("{node}+{layer} seed {seed}: {:.3e}", report.max_rel_error));
                }
            }
        }
    }

    let elapsed = t0.elapsed().as_secs_f64();
    let pass = failures.is_empty() && elapsed < 60.0;
    let detail = format!(
        "max rel err {max_err:.3e} (< {tolerance:.0e}) over all ops and 33 aggregator pairs, 10 seeds, {elapsed:.1}s (< 60s)"
    );
    verdict(1, "gradient integrity", pass, &detail);
    assert!(pass, "{detail}; failures: {failures:?}");
}

/// All named baseline genotypes are members of the enumerated default space,
/// and the built GCN-JK model equals a hand-assembled forward bit-exactly
/// given shared parameters.
#[test]
fn criterion_2_baseline_subsumption() {
    let space = SearchSpaceConfig {
        depth: 3,
        node_aggregators: NodeAggregatorKind::ALL.to_vec(),
        layer_aggregators: LayerAggregatorKind::ALL.to_vec(),
        include_layer_aggregators: true,
    };
    let listing: HashSet<String> = space.enumerate(20_000).unwrap().map(|g| g.encode()).collect();
    let mut missing = Vec::new();
    for name in BASELINE_NAMES {
        let g = baseline_genotype(name, 3).unwrap();
        if !listing.contains(&g.encode()) {
            missing.push(format!("{name} ({})", g.encode()));
        }
    }

    // GCN-JK forward, bit for bit against raw tape ops on the same tensors.
    let genotype = baseline_genotype("GCN-JK", 3).unwrap();
    let g = random_graph(10, 5, 7, 77);
    let model = GnnModel::new(&genotype, 5, 4, 3, 0.0, &mut ChaCha8Rng::seed_from_u64(123)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut tape = Tape::new(false);
    let bound = model.bind(&mut tape);
    let logits = model.forward(&mut tape, &bound, &g, &mut rng).unwrap();
    let expect = tape.value(logits).to_vec();

    let mut t = Tape::new(false);
    let coeffs: Vec<f64> = g
        .edge_centers()
        .iter()
        .zip(g.edge_neighbors().iter())
        .map(|(&v, &u)| 1.0 / ((g.degree(v) as f64) * (g.degree(u) as f64)).sqrt())
        .collect();
    let coeff = t.constant(vec![coeffs.len(), 1], coeffs).unwrap();
    let mut h = t.leaf(g.features());
    let mut outs = Vec::new();
    for l in 0..3 {
        let w = t.leaf(&model.layer_tensors(l)[0]);
        let b = t.leaf(&model.layer_tensors(l)[1]);
        let hn = t.gather_rows(h, g.edge_neighbors()).unwrap();
        let scaled = t.scale_rows(hn, coeff).unwrap();
        let agg = t.segment_sum(scaled, g.edge_centers(), g.num_nodes()).unwrap();
        let lin = t.matmul(agg, w).unwrap();
        let lin = t.add_bias(lin, b).unwrap();
        h = t.elu(lin).unwrap();
        outs.push(h);
    }
    let cat = t.concat(&outs, 1).unwrap();
    let wc = t.leaf(&model.classifier_tensors()[0]);
    let bc = t.leaf(&model.classifier_tensors()[1]);
    let lin = t.matmul(cat, wc).unwrap();
    let hand = t.add_bias(lin, bc).unwrap();
    let bit_exact = t.value(hand) == &expect[..];

    let pass = missing.is_empty() && bit_exact;
    let detail = format!(
        "{}/{} baselines inside the {}-genotype default space; GCN-JK forward bit-exact: {bit_exact}",
        BASELINE_NAMES.len() - missing.len(),
        BASELINE_NAMES.len(),
        listing.len(),
    );
    verdict(2, "baseline subsumption", pass, &detail);
    assert!(pass, "{detail}; missing: {missing:?}");
}

/// space_size equals the brute-force enumeration count (with every encoding
/// distinct) for six configurations including the 15972-point default.
#[test]
fn criterion_3_enumeration_oracle() {
    use LayerAggregatorKind::*;
    use NodeAggregatorKind::*;
    let all_nodes = NodeAggregatorKind::ALL.to_vec();
    let all_layers = LayerAggregatorKind::ALL.to_vec();
    let configs: Vec<(&str, SearchSpaceConfig)> = vec![
        ("default depth 3", SearchSpaceConfig {
            depth: 3,
            node_aggregators: all_nodes.clone(),
            layer_aggregators: all_layers.clone(),
            include_layer_aggregators: true,
        }),
        ("full depth 1", SearchSpaceConfig {
            depth: 1,
            node_aggregators: all_nodes.clone(),
            layer_aggregators: all_layers.clone(),
            include_layer_aggregators: true,
        }),
        ("full depth 2", SearchSpaceConfig {
            depth: 2,
            node_aggregators: all_nodes.clone(),
            layer_aggregators: all_layers.clone(),
            include_layer_aggregators: true,
        }),
        ("two-op depth 2", SearchSpaceConfig {
            depth: 2,
            node_aggregators: vec![Gcn, Mlp],
            layer_aggregators: all_layers.clone(),
            include_layer_aggregators: true,
        }),
        ("ablated two-op depth 3", SearchSpaceConfig {
            depth: 3,
            node_aggregators: vec![Gcn, SageMean],
            layer_aggregators: all_layers.clone(),
            include_layer_aggregators: false,
        }),
        ("concat-only depth 2", SearchSpaceConfig {
            depth: 2,
            node_aggregators: all_nodes.clone(),
            layer_aggregators: vec![Concat],
            include_layer_aggregators: true,
        }),
    ];

    let mut lines = Vec::new();
    let mut pass = true;
    for (label, space) in &configs {
        let encodings: Vec<String> = space.enumerate(20_000).unwrap().map(|g| g.encode()).collect();
        let unique: HashSet<&String> = encodings.iter().collect();
        let claimed = space.space_size();
        let ok = claimed == encodings.len() as u128 && unique.len() == encodings.len();
        pass &= ok;
        lines.push(format!("{label} {claimed}={}", encodings.len()));
    }
    pass &= configs[0].1.space_size() == 15_972;

    let detail = format!("size=count for {}", lines.join(", "));
    verdict(3, "enumeration oracle", pass, &detail);
    assert!(pass, "{detail}");
}

/// On a 24-genotype space with oracle reward 1 for a single target, the
/// controller places > 0.9 probability on the target within 500 REINFORCE
/// updates for 5/5 seeds, in under a minute.
#[test]
fn criterion_4_controller_bandit() {
    let t0 = Instant::now();
    let space = SearchSpaceConfig {
        depth: 2,
        node_aggregators: vec![NodeAggregatorKind::Gcn, NodeAggregatorKind::Mlp],
        layer_aggregators: LayerAggregatorKind::ALL.to_vec(),
        include_layer_aggregators: true,
    };
    assert_eq!(space.space_size(), 24);
    let target: Genotype = "node:mlp,gcn;skip:1;layer:max".parse().unwrap();

    let mut crossings: Vec<Option<usize>> = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = ControllerState::new(&space, 32, 16, 0.02, 0.9, 0.005, &mut rng).unwrap();
        let mut sample_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let mut crossed = None;
        for update in 1..=500 {
            let s = c.sample(&mut sample_rng).unwrap();
            let reward = if s.genotype == target { 1.0 } else { 0.0 };
            c.reinforce_update(&[Episode {
                actions: s.actions,
                log_probs: s.log_probs,
                entropy: s.entropy,
                reward,
            }])
            .unwrap();
            if c.genotype_log_prob(&target).unwrap().exp() > 0.9 {
                crossed = Some(update);
                break;
            }
        }
        crossings.push(crossed);
    }

    let elapsed = t0.elapsed().as_secs_f64();
    let pass = crossings.iter().all(|c| c.is_some()) && elapsed < 60.0;
    let detail = format!(
        "P(target) > 0.9 after {:?} updates (5/5 seeds within 500), {elapsed:.1}s (< 60s)",
        crossings.iter().map(|c| c.map_or(0, |u| u)).collect::<Vec<_>>()
    );
    verdict(4, "controller bandit", pass, &detail);
    assert!(pass, "{detail}");
}

/// A fixed 3-layer GCN reaches reference accuracy: >= 0.83 test accuracy on
/// Cora under a seeded 60/20/20 split when that dataset is present, else
/// accuracy 1.0 on a cleanly separable planted-community graph.
#[test]
fn criterion_5_fixed_gcn_reference() {
    let gcn = baseline_genotype("GCN", 3).unwrap();
    let cora = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cora");
    let (data, child, threshold, label) = if cora.join("manifest.json").is_file() {
        let (_, data) = load_dataset(&cora).unwrap();
        let data = match data {
            Dataset::Transductive(g) => {
                let g = make_splits(&g, (0.6, 0.2, 0.2), 0).unwrap();
                Dataset::Transductive(g).with_self_loops()
            }
            other => other.with_self_loops(),
        };
        let child = ChildConfig {
            hidden_dim: 64,
            dropout: 0.5,
            learning_rate: 0.01,
            max_epochs: 300,
            patience: 30,
        };
        (data, child, 0.83, "Cora test accuracy")
    } else {
        let data = sbm_dataset(3, 20, 1.0, 0.0, 0.0, 11, (0.6, 0.2, 0.2));
        let child = ChildConfig {
            hidden_dim: 16,
            dropout: 0.0,
            learning_rate: 0.01,
            max_epochs: 200,
            patience: 50,
        };
        (data, child, 1.0, "no citation data present; separable-graph test accuracy")
    };

    let out = train_child(&gcn, &data, &child, None, child_seed(0, &gcn, 0)).unwrap();
    let pass = out.test_metric >= threshold;
    let detail = format!(
        "{label} {:.4} (>= {threshold}) after {} epochs",
        out.test_metric, out.epochs_run
    );
    verdict(5, "fixed GCN reference accuracy", pass, &detail);
    assert!(pass, "{detail}");
}

/// Policy search with budget 20 on a noisy planted-community task finds a
/// candidate whose validation metric matches or beats the fixed GCN's on at
/// least 4 of 5 seeds.
#[test]
fn criterion_6_search_beats_fixed() {
    let data = sbm_dataset(3, 20, 0.4, 0.04, 2.5, 7, (0.4, 0.3, 0.3));
    let child = ChildConfig {
        hidden_dim: 12,
        dropout: 0.2,
        learning_rate: 0.01,
        max_epochs: 40,
        patience: 12,
    };
    let cfg = SearchConfig {
        space: SearchSpaceConfig {
            depth: 3,
            node_aggregators: NodeAggregatorKind::ALL.to_vec(),
            layer_aggregators: LayerAggregatorKind::ALL.to_vec(),
            include_layer_aggregators: true,
        },
        child: child.clone(),
        controller_hidden: 32,
        embed_dim: 16,
        controller_lr: 0.005,
        baseline_gamma: 0.95,
        entropy_beta: 1e-3,
        timing: ClockKind::Virtual,
    };
    let gcn = baseline_genotype("GCN", 3).unwrap();

    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 1..=5u64 {
        let fixed = train_child(&gcn, &data, &child, None, child_seed(seed, &gcn, 0)).unwrap();
        let outcome = search(&cfg, &data, 20, false, seed).unwrap();
        let best = outcome.trace.best().unwrap().val_metric;
        wins += (best >= fixed.val_metric) as u32;
        pairs.push(format!("{:.3}/{best:.3}", fixed.val_metric));
    }

    let pass = wins >= 4;
    let detail = format!("search >= fixed GCN validation on {wins}/5 seeds (fixed/best: {})", pairs.join(", "));
    verdict(6, "search beats fixed baseline", pass, &detail);
    assert!(pass, "{detail}");
}

/// On a task whose labels follow 1-hop structure, searching the space with
/// layer aggregators does at least as well on average as searching the
/// ablated space without them, over 5 seeds.
#[test]
fn criterion_7_layer_aggregator_ablation() {
    let data = sbm_dataset(3, 20, 0.5, 0.2, 1.0, 13, (0.4, 0.3, 0.3));
    let child = ChildConfig {
        hidden_dim: 12,
        dropout: 0.2,
        learning_rate: 0.01,
        max_epochs: 40,
        patience: 12,
    };
    let mut cfg = SearchConfig {
        space: SearchSpaceConfig {
            depth: 3,
            node_aggregators: vec![NodeAggregatorKind::Gcn, NodeAggregatorKind::SageMean],
            layer_aggregators: LayerAggregatorKind::ALL.to_vec(),
            include_layer_aggregators: true,
        },
        child: child.clone(),
        controller_hidden: 32,
        embed_dim: 16,
        controller_lr: 0.005,
        baseline_gamma: 0.95,
        entropy_beta: 1e-3,
        timing: ClockKind::Virtual,
    };

    let mut means = Vec::new();
    for ablated in [false, true] {
        cfg.space.include_layer_aggregators = !ablated;
        let mut tests = Vec::new();
        for seed in 1..=5u64 {
            let outcome = search(&cfg, &data, 10, false, seed).unwrap();
            let g: Genotype = outcome.trace.best().unwrap().genotype.parse().unwrap();
            let o = train_child(&g, &data, &child, None, child_seed(seed, &g, 0)).unwrap();
            tests.push(o.test_metric);
        }
        means.push(tests.iter().sum::<f64>() / tests.len() as f64);
    }

    let pass = means[0] >= means[1];
    let detail = format!(
        "mean test with layer aggregators {:.4} >= without {:.4}, 5 seeds each",
        means[0], means[1]
    );
    verdict(7, "layer-aggregator ablation direction", pass, &detail);
    assert!(pass, "{detail}");
}

/// With budget 50, sharing trained parameters across candidates makes the
/// mean per-candidate wall-clock after the first 10 candidates strictly
/// lower than training every child from scratch, while the derived metric
/// stays within 0.02.
#[test]
fn criterion_8_weight_sharing_efficiency() {
    let data = sbm_dataset(3, 40, 0.3, 0.02, 0.8, 21, (0.3, 0.5, 0.2));
    let child = ChildConfig {
        hidden_dim: 16,
        dropout: 0.0,
        learning_rate: 0.003,
        max_epochs: 80,
        patience: 10,
    };
    let cfg = SearchConfig {
        space: SearchSpaceConfig {
            depth: 2,
            node_aggregators: vec![NodeAggregatorKind::Gcn, NodeAggregatorKind::SageMean],
            layer_aggregators: LayerAggregatorKind::ALL.to_vec(),
            include_layer_aggregators: true,
        },
        child: child.clone(),
        controller_hidden: 32,
        embed_dim: 16,
        controller_lr: 0.005,
        baseline_gamma: 0.95,
        entropy_beta: 1e-3,
        timing: ClockKind::Wall,
    };

    let scratch = search(&cfg, &data, 50, false, 3).unwrap();
    let shared = search(&cfg, &data, 50, true, 3).unwrap();

    let mean_after_10 = |trace: &SearchTrace| -> f64 {
        let mut prev = 0.0;
        let deltas: Vec<f64> = trace
            .records
            .iter()
            .map(|r| {
                let d = r.seconds - prev;
                prev = r.seconds;
                d
            })
            .collect();
        deltas[10..].iter().sum::<f64>() / (deltas.len() - 10) as f64
    };
    let mean_scratch = mean_after_10(&scratch.trace);
    let mean_shared = mean_after_10(&shared.trace);

    let dcfg = DerivationConfig {
        num_candidates: 5,
        learning_rates: vec![0.003],
        hidden_dims: vec![16],
    };
    let derived_scratch = derive(&scratch.controller, &data, &dcfg, &child, 3).unwrap();
    let derived_shared = derive(&shared.controller, &data, &dcfg, &child, 3).unwrap();
    let diff = (derived_scratch.val_metric - derived_shared.val_metric).abs();

    let pass = mean_shared < mean_scratch && diff <= 0.02;
    let detail = format!(
        "per-candidate wall-clock after candidate 10: shared {:.2}ms < scratch {:.2}ms; derived val {:.4} vs {:.4} (diff {diff:.4} <= 0.02)",
        mean_shared * 1e3,
        mean_scratch * 1e3,
        derived_shared.val_metric,
        derived_scratch.val_metric,
    );
    verdict(8, "weight-sharing efficiency", pass, &detail);
    assert!(pass, "{detail}");
}

/// The same config run twice produces byte-identical traces and reports.
#[test]
fn criterion_9_bit_identical_reruns() {
    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{
            "name": "determinism-gate",
            "mode": "snag-ws",
            "budget": 3,
            "seeds": [9, 10],
            "sbm_blocks": 3,
            "sbm_nodes_per_block": 10,
            "sbm_p_in": 1.0,
            "sbm_p_out": 0.0,
            "sbm_feature_noise": 0.0,
            "depth": 2,
            "node_aggregators": ["gcn", "sage-mean"],
            "layer_aggregators": ["concat"],
            "hidden_dim": 16,
            "max_epochs": 60,
            "patience": 20,
            "controller_hidden": 16,
            "embed_dim": 8,
            "timing": "virtual",
            "derive_candidates": 2,
            "derive_learning_rates": [0.005, 0.01],
            "derive_hidden_dims": [8]
        }"#,
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_experiment(&cfg, &a).unwrap();
    run_experiment(&cfg, &b).unwrap();

    let mut identical = true;
    let mut compared = Vec::new();
    for file in ["report.json", "trace_seed9.csv", "trace_seed10.csv"] {
        let xa = std::fs::read(a.join(file)).unwrap();
        let xb = std::fs::read(b.join(file)).unwrap();
        identical &= xa == xb;
        compared.push(format!("{file} ({} bytes)", xa.len()));
    }

    let detail = format!("two runs byte-identical across {}", compared.join(", "));
    verdict(9, "bit-identical reruns", identical, &detail);
    assert!(identical, "{detail}");
}
