//! Search-space counting, grammar, sampling, and baseline-embedding tests.

use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snag_core::gnn::{LayerAggregatorKind, NodeAggregatorKind};
use snag_core::space::{baseline_genotype, Genotype, SearchSpaceConfig, SpaceError, BASELINE_NAMES};

fn small_space() -> SearchSpaceConfig {
    SearchSpaceConfig {
        depth: 2,
        node_aggregators: vec![NodeAggregatorKind::Gcn, NodeAggregatorKind::SageMean],
        layer_aggregators: LayerAggregatorKind::ALL.to_vec(),
        include_layer_aggregators: true,
    }
}

#[test]
fn space_size_matches_closed_form() {
    assert_eq!(small_space().space_size(), 24, "2^2 * 2^1 * 3");
    assert_eq!(SearchSpaceConfig::default().space_size(), 15972, "11^3 * 4 * 3");
    let singleton = SearchSpaceConfig {
        depth: 1,
        node_aggregators: vec![NodeAggregatorKind::Gcn],
        layer_aggregators: vec![LayerAggregatorKind::Max],
        include_layer_aggregators: true,
    };
    assert_eq!(singleton.space_size(), 1);
}

#[test]
fn enumeration_count_matches_space_size_across_configs() {
    let mut configs = vec![
        small_space(),
        SearchSpaceConfig::default(),
        SearchSpaceConfig {
            depth: 1,
            node_aggregators: vec![NodeAggregatorKind::Gcn],
            layer_aggregators: vec![LayerAggregatorKind::Max],
            include_layer_aggregators: true,
        },
        SearchSpaceConfig {
            depth: 4,
            node_aggregators: vec![NodeAggregatorKind::Mlp, NodeAggregatorKind::Gat, NodeAggregatorKind::Gcn],
            layer_aggregators: vec![LayerAggregatorKind::Concat, LayerAggregatorKind::Lstm],
            include_layer_aggregators: true,
        },
    ];
    // Ablated: skip and layer factors collapse to 1.
    let mut ablated = SearchSpaceConfig::default();
    ablated.include_layer_aggregators = false;
    assert_eq!(ablated.space_size(), 11u128.pow(3));
    configs.push(ablated);

    for cfg in configs {
        let genotypes: Vec<Genotype> = cfg.enumerate(100_000).unwrap().collect();
        assert_eq!(genotypes.len() as u128, cfg.space_size(), "cfg {cfg:?}");
        let distinct: HashSet<String> = genotypes.iter().map(Genotype::encode).collect();
        assert_eq!(distinct.len(), genotypes.len(), "encode is injective over the space");
        for g in &genotypes {
            assert!(cfg.contains(g));
        }
    }
}

#[test]
fn first_enumerated_genotype_is_all_first_choices() {
    let cfg = SearchSpaceConfig::default();
    let first = cfg.enumerate(100_000).unwrap().next().unwrap();
    assert_eq!(first.node_aggs(), &[NodeAggregatorKind::Gcn; 3]);
    assert_eq!(first.skips(), &[false, false]);
    assert_eq!(first.layer_agg(), Some(LayerAggregatorKind::Concat));
}

#[test]
fn enumeration_cap_is_enforced_with_the_size() {
    let err = SearchSpaceConfig::default().enumerate(1000).unwrap_err();
    match err {
        SpaceError::CapExceeded { size, cap } => {
            assert_eq!(size, 15972);
            assert_eq!(cap, 1000);
        }
        other => panic!("expected CapExceeded, got {other}"),
    }
}

#[test]
fn encode_matches_grammar_example() {
    let g = Genotype::new(
        vec![NodeAggregatorKind::Gcn, NodeAggregatorKind::Gat, NodeAggregatorKind::SageMean],
        vec![true, false],
        Some(LayerAggregatorKind::Concat),
    )
    .unwrap();
    assert_eq!(g.encode(), "node:gcn,gat,sage-mean;skip:10;layer:concat");
    assert_eq!(Genotype::decode(&g.encode()).unwrap(), g);
}

#[test]
fn depth_one_genotype_has_empty_skip_clause() {
    let g = Genotype::decode("node:gcn;skip:;layer:max").unwrap();
    assert_eq!(g.depth(), 1);
    assert_eq!(g.skips(), &[] as &[bool]);
    assert_eq!(g.layer_agg(), Some(LayerAggregatorKind::Max));
    assert_eq!(g.encode(), "node:gcn;skip:;layer:max");
}

#[test]
fn ablated_genotype_omits_layer_clause() {
    let g = Genotype::new(
        vec![NodeAggregatorKind::Gat, NodeAggregatorKind::Mlp],
        vec![false],
        None,
    )
    .unwrap();
    assert_eq!(g.encode(), "node:gat,mlp;skip:0");
    assert_eq!(Genotype::decode("node:gat,mlp;skip:0").unwrap(), g);
    // Non-zero skips make no sense without a layer aggregator.
    assert!(Genotype::decode("node:gat,mlp;skip:1").is_err());
    assert!(Genotype::new(vec![NodeAggregatorKind::Gat, NodeAggregatorKind::Mlp], vec![true], None).is_err());
}

#[test]
fn decode_reports_byte_positions() {
    let cases: [(&str, usize); 6] = [
        ("nodes:gcn;skip:;layer:max", 0),
        ("node:gcn,bogus;skip:0;layer:max", 9),
        ("node:gcn,gat;skip:2;layer:max", 18),
        ("node:gcn,gat;skip:0;layer:median", 26),
        ("node:gcn,gat;skip:0;layer:max;extra", 29),
        ("node:gcn,gat;skip:011;layer:max", 18),
    ];
    for (input, expected_pos) in cases {
        match Genotype::decode(input) {
            Err(SpaceError::Parse { position, msg }) => {
                assert_eq!(position, expected_pos, "input {input:?}: {msg}");
            }
            other => panic!("input {input:?}: expected parse error, got {other:?}"),
        }
    }
}

#[test]
fn selected_layers_always_include_the_last() {
    let g = Genotype::decode("node:gcn,gat,mlp;skip:10;layer:max").unwrap();
    assert_eq!(g.selected_layers(), vec![0, 2]);
    let g = Genotype::decode("node:gcn,gat,mlp;skip:00;layer:max").unwrap();
    assert_eq!(g.selected_layers(), vec![2]);
    let g = Genotype::decode("node:gcn;skip:;layer:max").unwrap();
    assert_eq!(g.selected_layers(), vec![0]);
}

#[test]
fn baselines_map_to_documented_genotypes() {
    let gcn = baseline_genotype("GCN", 3).unwrap();
    assert_eq!(gcn.encode(), "node:gcn,gcn,gcn;skip:00;layer:concat");
    let gat_jk = baseline_genotype("GAT-JK", 3).unwrap();
    assert_eq!(gat_jk.encode(), "node:gat,gat,gat;skip:11;layer:concat");
    let gin = baseline_genotype("GIN", 3).unwrap();
    assert_eq!(gin.encode(), "node:sage-sum,sage-sum,sage-sum;skip:00;layer:concat");
    let sage = baseline_genotype("GraphSAGE", 2).unwrap();
    assert_eq!(sage.encode(), "node:sage-mean,sage-mean;skip:0;layer:concat");
    assert!(matches!(
        baseline_genotype("SAGE", 3),
        Err(SpaceError::UnknownBaseline(_))
    ));
}

#[test]
fn every_baseline_is_a_member_of_the_default_space() {
    let cfg = SearchSpaceConfig::default();
    let all: HashSet<String> = cfg.enumerate(100_000).unwrap().map(|g| g.encode()).collect();
    for name in BASELINE_NAMES {
        let g = baseline_genotype(name, 3).unwrap();
        assert!(cfg.contains(&g), "{name} not contained");
        assert!(all.contains(&g.encode()), "{name} missing from enumeration");
    }
}

#[test]
fn uniform_sampling_is_unbiased_within_four_sigma() {
    let cfg = small_space();
    let total = 20_000usize;
    let cells = cfg.space_size() as f64;
    let mut counts: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..total {
        *counts.entry(cfg.sample_uniform(&mut rng).encode()).or_default() += 1;
    }
    assert_eq!(counts.len() as u128, cfg.space_size(), "every genotype gets sampled");
    let expected = total as f64 / cells;
    let sigma = (total as f64 * (1.0 / cells) * (1.0 - 1.0 / cells)).sqrt();
    for (g, count) in counts {
        assert!(
            (count as f64 - expected).abs() <= 4.0 * sigma,
            "{g}: count {count}, expected {expected} (sigma {sigma})"
        );
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = SearchSpaceConfig::default();
    cfg.depth = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = SearchSpaceConfig::default();
    cfg.node_aggregators.clear();
    assert!(cfg.validate().is_err());
    let mut cfg = SearchSpaceConfig::default();
    cfg.node_aggregators.push(NodeAggregatorKind::Gcn);
    assert!(cfg.validate().is_err(), "duplicates break uniform sampling");
}

proptest! {
    /// decode(encode(g)) == g over uniform draws from the default space and
    /// from the ablated space.
    #[test]
    fn encode_decode_round_trips(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = SearchSpaceConfig::default();
        if seed % 3 == 0 {
            cfg.include_layer_aggregators = false;
        }
        let g = cfg.sample_uniform(&mut rng);
        let round = Genotype::decode(&g.encode()).unwrap();
        prop_assert_eq!(round, g);
    }
}
