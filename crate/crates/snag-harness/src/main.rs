use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use snag_core::gnn::{LayerAggregatorKind, NodeAggregatorKind};
use snag_core::space::SearchSpaceConfig;
use snag_harness::{
    convert, enumerate_listing, run_ablation, run_experiment, ConvertSpec, ExperimentConfig,
    HarnessError,
};

#[derive(Parser)]
#[command(name = "snag", version, about = "Architecture search for graph networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment over its seeds and write a report.
    Run(RunArgs),
    /// Run the same experiment with and without layer aggregators.
    Ablate(RunArgs),
    /// Convert an edge-list dataset to the canonical directory layout.
    Convert(ConvertArgs),
    /// List every genotype in a search space.
    Enumerate(EnumerateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the config's seed list.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Replace the config's candidate budget.
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Edge list, one `u v` pair per line.
    #[arg(long)]
    edges: PathBuf,
    /// Node features, one comma-separated row per node.
    #[arg(long)]
    features: PathBuf,
    /// Node labels: class ids, or comma-separated 0/1 rows for multilabel.
    #[arg(long)]
    labels: PathBuf,
    /// Optional split file: train/val/test/none per node.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Dataset name recorded in the manifest.
    #[arg(long, default_value = "converted")]
    name: String,
    /// Keep edges directed instead of symmetrizing.
    #[arg(long)]
    directed: bool,
    /// Scale each feature row to sum to one.
    #[arg(long)]
    row_normalize: bool,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Take the space from an experiment config instead of flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of layers.
    #[arg(long)]
    depth: Option<usize>,
    /// Node aggregator ids (default: all).
    #[arg(long, value_delimiter = ',')]
    node_aggregators: Option<Vec<String>>,
    /// Layer aggregator ids (default: all).
    #[arg(long, value_delimiter = ',')]
    layer_aggregators: Option<Vec<String>>,
    /// Drop skip connections and layer aggregators from the space.
    #[arg(long)]
    ablated: bool,
    /// Refuse to list spaces larger than this.
    #[arg(long, default_value_t = 1_000_000)]
    cap: u64,
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) -> Result<(), HarnessError> {
    if let Some(seeds) = &args.seed {
        cfg.seeds = seeds.clone();
    }
    if let Some(budget) = args.budget {
        cfg.budget = budget;
    }
    if args.seed.is_some() || args.budget.is_some() {
        cfg.validate()?;
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    apply_overrides(&mut cfg, args)?;
    let out_dir = cfg.resolve_out_dir(args.out.as_deref())?;
    let report = run_experiment(&cfg, &out_dir)?;
    println!("wrote {}", out_dir.join("report.json").display());
    println!(
        "{} on {}: test {} {:.4} +/- {:.4} over {} seed(s)",
        report.mode,
        report.dataset,
        report.metric,
        report.mean_test,
        report.std_test,
        report.per_seed.len()
    );
    Ok(())
}

fn cmd_ablate(args: &RunArgs) -> Result<(), HarnessError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    apply_overrides(&mut cfg, args)?;
    let out_dir = cfg.resolve_out_dir(args.out.as_deref())?;
    let report = run_ablation(&cfg, &out_dir)?;
    println!("wrote {}", out_dir.join("ablation.json").display());
    println!(
        "with layer aggregators:    test {:.4} +/- {:.4}",
        report.with_layer_aggs.mean_test, report.with_layer_aggs.std_test
    );
    println!(
        "without layer aggregators: test {:.4} +/- {:.4}",
        report.without_layer_aggs.mean_test, report.without_layer_aggs.std_test
    );
    Ok(())
}

fn cmd_convert(args: ConvertArgs) -> Result<(), HarnessError> {
    let spec = ConvertSpec {
        edges: args.edges,
        features: args.features,
        labels: args.labels,
        splits: args.splits,
        name: args.name,
        directed: args.directed,
        row_normalize: args.row_normalize,
    };
    let summary = convert(&spec, &args.out)?;
    println!(
        "wrote {}: {} nodes, {} entries, {} features, {} classes",
        summary.out_dir.display(),
        summary.num_nodes,
        summary.num_entries,
        summary.num_features,
        summary.num_classes
    );
    Ok(())
}

fn cmd_enumerate(args: &EnumerateArgs) -> Result<(), HarnessError> {
    let mut space = match &args.config {
        Some(path) => ExperimentConfig::load(path)?.space()?,
        None => SearchSpaceConfig {
            depth: 3,
            node_aggregators: NodeAggregatorKind::ALL.to_vec(),
            layer_aggregators: LayerAggregatorKind::ALL.to_vec(),
            include_layer_aggregators: true,
        },
    };
    if let Some(depth) = args.depth {
        space.depth = depth;
    }
    if let Some(ids) = &args.node_aggregators {
        space.node_aggregators = ids
            .iter()
            .map(|id| {
                NodeAggregatorKind::from_id(id)
                    .ok_or_else(|| HarnessError::Config(format!("unknown node aggregator {id:?}")))
            })
            .collect::<Result<_, _>>()?;
    }
    if let Some(ids) = &args.layer_aggregators {
        space.layer_aggregators = ids
            .iter()
            .map(|id| {
                LayerAggregatorKind::from_id(id)
                    .ok_or_else(|| HarnessError::Config(format!("unknown layer aggregator {id:?}")))
            })
            .collect::<Result<_, _>>()?;
    }
    if args.ablated {
        space.include_layer_aggregators = false;
    }
    space
        .validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    print!("{}", enumerate_listing(&space, args.cap)?);
    Ok(())
}

fn real_main() -> Result<(), HarnessError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Convert(args) => cmd_convert(args),
        Command::Enumerate(args) => cmd_enumerate(&args),
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
