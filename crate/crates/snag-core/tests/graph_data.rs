//! Dataset construction, canonical format round-trips, splits, and SBM tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snag_core::graph::manifest::{load_dataset, save_canonical, Dataset, SplitRole};
use snag_core::graph::sbm::sbm_generate;
use snag_core::graph::{add_self_loops, make_splits, Graph, GraphError, Labels};
use snag_core::tensor::Tensor;

fn toy_labels(n: usize, num_classes: usize) -> Labels {
    Labels::Multiclass {
        num_classes,
        ids: (0..n).map(|v| v % num_classes).collect(),
    }
}

fn toy_graph(num_nodes: usize, edges: &[(usize, usize)]) -> Graph {
    let features = Tensor::matrix(num_nodes, 2, (0..num_nodes * 2).map(|i| i as f64 * 0.5).collect()).unwrap();
    Graph::from_edges(num_nodes, edges, true, features, toy_labels(num_nodes, 2)).unwrap()
}

#[test]
fn undirected_edges_are_stored_in_both_directions() {
    let g = toy_graph(3, &[(0, 1)]);
    assert_eq!(g.num_entries(), 2);
    assert_eq!(g.neighbors(0), &[1]);
    assert_eq!(g.neighbors(1), &[0]);
    assert_eq!(g.neighbors(2), &[] as &[usize]);
}

#[test]
fn csr_matches_brute_force_edge_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let n = rng.gen_range(2..30);
        let m = rng.gen_range(0..60);
        let edges: Vec<(usize, usize)> =
            (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
        let features = Tensor::zeros(vec![n, 1]).unwrap();
        let g = Graph::from_edges(n, &edges, true, features, toy_labels(n, 2)).unwrap();
        for v in 0..n {
            let mut expect: Vec<usize> = edges
                .iter()
                .flat_map(|&(a, b)| [(a, b), (b, a)])
                .filter(|&(a, _)| a == v)
                .map(|(_, b)| b)
                .collect();
            expect.sort_unstable();
            expect.dedup();
            assert_eq!(g.neighbors(v), expect.as_slice(), "node {v}");
        }
    }
}

#[test]
fn dangling_edge_is_rejected() {
    let features = Tensor::zeros(vec![2, 1]).unwrap();
    let err = Graph::from_edges(2, &[(0, 5)], true, features, toy_labels(2, 2)).unwrap_err();
    assert!(matches!(err, GraphError::Invalid(_)));
}

#[test]
fn self_loops_added_once_and_idempotently() {
    let g = toy_graph(5, &[]);
    let looped = add_self_loops(&g);
    assert_eq!(looped.num_entries(), 5, "one loop per node on an empty graph");
    assert!(looped.has_all_self_loops());
    assert_eq!(looped.num_nodes(), g.num_nodes());
    assert_eq!(looped.features().data(), g.features().data());

    let twice = add_self_loops(&looped);
    assert_eq!(twice.num_entries(), looped.num_entries());
    assert_eq!(twice.offsets(), looped.offsets());
    assert_eq!(twice.targets(), looped.targets());
}

#[test]
fn self_loop_count_matches_citation_scale_arithmetic() {
    // 2708 nodes, 5278 distinct undirected edges, loops absent:
    // 2 * 5278 + 2708 = 13264 directed entries after adding self-loops.
    let n = 2708;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut seen = std::collections::BTreeSet::new();
    while seen.len() < 5278 {
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u != v {
            seen.insert((u.min(v), u.max(v)));
        }
    }
    let edges: Vec<(usize, usize)> = seen.into_iter().collect();
    let features = Tensor::zeros(vec![n, 1]).unwrap();
    let g = Graph::from_edges(n, &edges, true, features, toy_labels(n, 7)).unwrap();
    assert_eq!(g.num_entries(), 2 * 5278);
    assert_eq!(add_self_loops(&g).num_entries(), 13264);
}

#[test]
fn splits_follow_floor_remainder_to_train() {
    let count = |m: &[bool]| m.iter().filter(|&&b| b).count();

    let g = toy_graph(10, &[(0, 1)]);
    let s = make_splits(&g, (0.6, 0.2, 0.2), 1).unwrap();
    assert_eq!(
        (count(&s.train_mask), count(&s.val_mask), count(&s.test_mask)),
        (6, 2, 2)
    );

    let features = Tensor::zeros(vec![2708, 1]).unwrap();
    let g = Graph::from_edges(2708, &[], true, features, toy_labels(2708, 7)).unwrap();
    let s = make_splits(&g, (0.6, 0.2, 0.2), 3).unwrap();
    assert_eq!(
        (count(&s.train_mask), count(&s.val_mask), count(&s.test_mask)),
        (1626, 541, 541)
    );

    // Disjoint and exhaustive.
    for v in 0..2708 {
        let total = usize::from(s.train_mask[v]) + usize::from(s.val_mask[v]) + usize::from(s.test_mask[v]);
        assert_eq!(total, 1);
    }
}

#[test]
fn splits_are_deterministic_per_seed() {
    let g = toy_graph(50, &[(0, 1), (2, 3)]);
    let a = make_splits(&g, (0.6, 0.2, 0.2), 9).unwrap();
    let b = make_splits(&g, (0.6, 0.2, 0.2), 9).unwrap();
    assert_eq!(a.train_mask, b.train_mask);
    assert_eq!(a.val_mask, b.val_mask);
    assert_eq!(a.test_mask, b.test_mask);
    let c = make_splits(&g, (0.6, 0.2, 0.2), 10).unwrap();
    assert_ne!(a.train_mask, c.train_mask, "different seed shuffles differently");
}

#[test]
fn bad_split_fractions_are_rejected() {
    let g = toy_graph(10, &[]);
    assert!(make_splits(&g, (0.5, 0.2, 0.2), 0).is_err());
    assert!(make_splits(&g, (1.2, -0.1, -0.1), 0).is_err());
}

#[test]
fn canonical_save_load_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Awkward floats on purpose: shortest-round-trip formatting must preserve
    // every bit through save and reload.
    let features = Tensor::matrix(6, 3, (0..18).map(|_| rng.gen::<f64>() * 1e3 - 500.0).collect()).unwrap();
    let g = Graph::from_edges(6, &[(0, 1), (1, 2), (3, 4), (5, 0)], true, features, toy_labels(6, 3)).unwrap();
    let g = make_splits(&g, (0.6, 0.2, 0.2), 2).unwrap();

    save_canonical(&Dataset::Transductive(g.clone()), "toy", dir.path()).unwrap();
    let (manifest, loaded) = load_dataset(dir.path()).unwrap();
    assert_eq!(manifest.name, "toy");
    assert!(!manifest.row_normalize, "saved arrays load without re-normalization");
    let Dataset::Transductive(l) = loaded else { panic!("expected transductive") };

    assert_eq!(l.offsets(), g.offsets());
    assert_eq!(l.targets(), g.targets());
    assert_eq!(l.features().data(), g.features().data());
    assert_eq!(l.train_mask, g.train_mask);
    assert_eq!(l.val_mask, g.val_mask);
    assert_eq!(l.test_mask, g.test_mask);
    match (l.labels(), g.labels()) {
        (Labels::Multiclass { ids: a, .. }, Labels::Multiclass { ids: b, .. }) => assert_eq!(a, b),
        _ => panic!("label kind changed"),
    }

    // Saving the reloaded dataset reproduces identical files.
    let dir2 = tempfile::tempdir().unwrap();
    save_canonical(&Dataset::Transductive(l), "toy", dir2.path()).unwrap();
    for file in ["manifest.json", "edges.txt", "features.csv", "labels.txt", "splits.txt"] {
        let a = std::fs::read(dir.path().join(file)).unwrap();
        let b = std::fs::read(dir2.path().join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between saves");
    }
}

#[test]
fn inductive_dataset_round_trips_with_roles() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4;
        let values: Vec<f64> = (0..n * 2).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let labels = Labels::Multilabel {
            num_classes: 2,
            values: values.into(),
        };
        let features = Tensor::matrix(n, 3, (0..n * 3).map(|_| rng.gen::<f64>()).collect()).unwrap();
        Graph::from_edges(n, &[(0, 1), (2, 3)], true, features, labels).unwrap()
    };
    let ds = Dataset::Inductive {
        train: vec![mk(1), mk(2)],
        val: vec![mk(3)],
        test: vec![mk(4)],
    };
    save_canonical(&ds, "multi", dir.path()).unwrap();
    let (manifest, loaded) = load_dataset(dir.path()).unwrap();
    assert_eq!(manifest.graphs.len(), 4);
    assert_eq!(manifest.graphs[0].role, SplitRole::Train);
    let Dataset::Inductive { train, val, test } = loaded else { panic!("expected inductive") };
    assert_eq!((train.len(), val.len(), test.len()), (2, 1, 1));
    assert!(train[0].train_mask.iter().all(|&b| b), "inductive graphs supervise every node");
    let Dataset::Inductive { train: orig, .. } = ds else { unreachable!() };
    assert_eq!(train[1].features().data(), orig[1].features().data());
}

#[test]
fn loader_reports_line_numbers_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, content: &str| std::fs::write(dir.path().join(name), content).unwrap();
    write(
        "manifest.json",
        r#"{"name":"bad","task":"transductive","num_nodes":2,"num_features":1,"num_classes":2,
           "edges":"edges.txt","features":"features.csv","labels":"labels.txt"}"#,
    );
    write("edges.txt", "0 1\n0 not_a_node\n");
    write("features.csv", "1.0\n2.0\n");
    write("labels.txt", "0\n1\n");
    let err = load_dataset(dir.path()).unwrap_err();
    match err {
        GraphError::Parse { line, .. } => assert_eq!(line, 2),
        other => panic!("expected parse error with line, got {other}"),
    }

    write("edges.txt", "0 1\n");
    write("labels.txt", "0\n7\n");
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("out of range"), "{err}");

    write("labels.txt", "0\n");
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("expected 2"), "{err}");
}

#[test]
fn unknown_manifest_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("manifest.json"),
        r#"{"name":"x","task":"transductive","num_nodes":1,"num_features":1,"num_classes":1,"bogus":true}"#,
    )
    .unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
}

#[test]
fn missing_file_error_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("manifest.json"),
        r#"{"name":"x","task":"transductive","num_nodes":1,"num_features":1,"num_classes":1,
           "edges":"edges.txt","features":"nope.csv","labels":"labels.txt"}"#,
    )
    .unwrap();
    std::fs::write(dir.path().join("edges.txt"), "").unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("nope.csv"), "{err}");
}

#[test]
fn features_are_row_normalized_when_manifest_asks() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, content: &str| std::fs::write(dir.path().join(name), content).unwrap();
    write(
        "manifest.json",
        r#"{"name":"norm","task":"transductive","num_nodes":2,"num_features":2,"num_classes":2,
           "row_normalize":true,"edges":"edges.txt","features":"features.csv","labels":"labels.txt"}"#,
    );
    write("edges.txt", "0 1\n");
    write("features.csv", "2.0,6.0\n0.0,0.0\n");
    write("labels.txt", "0\n1\n");
    let (_, ds) = load_dataset(dir.path()).unwrap();
    let Dataset::Transductive(g) = ds else { panic!() };
    assert_eq!(g.features().data(), &[0.25, 0.75, 0.0, 0.0]);
}

#[test]
fn degenerate_sbm_is_two_disjoint_triangles() {
    let g = sbm_generate(2, 3, 1.0, 0.0, 0.0, 17).unwrap();
    assert_eq!(g.num_nodes(), 6);
    for v in 0..6 {
        let block: Vec<usize> = (0..6).filter(|&u| u != v && u / 3 == v / 3).collect();
        assert_eq!(g.neighbors(v), block.as_slice(), "node {v} connects exactly within its block");
    }
    let Labels::Multiclass { ids, .. } = g.labels() else { panic!() };
    assert_eq!(ids, &[0, 0, 0, 1, 1, 1]);
}

#[test]
fn zero_noise_features_are_exact_one_hot() {
    let g = sbm_generate(3, 2, 0.9, 0.1, 0.0, 4).unwrap();
    for v in 0..6 {
        let row = &g.features().data()[v * 3..(v + 1) * 3];
        let expect: Vec<f64> = (0..3).map(|b| if b == v / 2 { 1.0 } else { 0.0 }).collect();
        assert_eq!(row, expect.as_slice());
    }
}

#[test]
fn inter_block_edge_count_matches_expectation_within_three_sigma() {
    // 2 blocks of 25: 625 cross pairs at p_out = 0.3.
    let (n1, n2, p) = (25.0, 25.0, 0.3);
    let trials = 20;
    let mut total = 0usize;
    for seed in 0..trials {
        let g = sbm_generate(2, 25, 0.9, p, 0.0, seed).unwrap();
        let cross = (0..50)
            .flat_map(|v| g.neighbors(v).iter().map(move |&u| (v, u)))
            .filter(|&(v, u)| v < u && v / 25 != u / 25)
            .count();
        total += cross;
    }
    let mean = total as f64 / trials as f64;
    let expected = n1 * n2 * p;
    let sigma = (n1 * n2 * p * (1.0 - p)).sqrt() / (trials as f64).sqrt();
    assert!(
        (mean - expected).abs() <= 3.0 * sigma,
        "mean {mean} vs expected {expected} (3 sigma of the mean = {})",
        3.0 * sigma
    );
}

#[test]
fn sbm_rejects_invalid_probabilities() {
    assert!(sbm_generate(2, 3, 0.5, 0.6, 0.0, 0).is_err(), "p_out > p_in");
    assert!(sbm_generate(2, 3, 0.5, 0.5, 0.0, 0).is_err(), "p_out == p_in");
    assert!(sbm_generate(2, 3, 1.5, 0.0, 0.0, 0).is_err(), "p_in > 1");
    assert!(sbm_generate(2, 3, 0.5, -0.1, 0.0, 0).is_err(), "negative p_out");
    assert!(sbm_generate(0, 3, 0.5, 0.1, 0.0, 0).is_err(), "zero blocks");
}

#[test]
fn sbm_is_deterministic_per_seed() {
    let a = sbm_generate(3, 10, 0.6, 0.05, 0.7, 123).unwrap();
    let b = sbm_generate(3, 10, 0.6, 0.05, 0.7, 123).unwrap();
    assert_eq!(a.targets(), b.targets());
    assert_eq!(a.features().data(), b.features().data());
    let c = sbm_generate(3, 10, 0.6, 0.05, 0.7, 124).unwrap();
    assert!(a.targets() != c.targets() || a.features().data() != c.features().data());
}
