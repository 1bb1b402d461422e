//! `snri` command line: ingest datasets, train, evaluate, run ablation
//! variants, density breakdowns, and path-importance reports.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use snri_core::eval::{ablation_table, evaluate, EvalOptions, EvalReport};
use snri_core::kg::{load_dataset, stats, write_graph_cache, DatasetSplit};
use snri_core::model::{AblationFlags, Model};
use snri_core::synthetic::{write_synthetic_dataset, SyntheticConfig};
use snri_core::train::{load_model, train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "snri",
    version,
    about = "Inductive knowledge-graph link prediction over enclosing subgraphs and neighboring relations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset, print split statistics, write binary graph caches
    Ingest(CommonArgs),
    /// Train a model; writes checkpoint.bin, config.json, metrics.jsonl
    Train(CommonArgs),
    /// Evaluate a checkpoint on the inductive test split
    Eval(EvalArgs),
    /// Train and evaluate the component-removal variants, emit a comparison table
    Ablate(CommonArgs),
    /// Hits@10 bucketed by subgraph node count
    Density(DensityArgs),
    /// Neighboring-relational-path importance tables
    Paths(PathsArgs),
    /// Generate the planted-rule synthetic dataset into the data dir
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Dataset id: directory name under the data dir (e.g. wn18rr_v1)
    #[arg(long)]
    dataset: Option<String>,
    /// Root directory holding dataset folders (default: $SNRI_DATA_DIR or ./data)
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// TOML config file; command-line flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Subgraph extraction hops
    #[arg(long)]
    hops: Option<usize>,
    /// Weight of the mutual-information loss term
    #[arg(long, value_name = "LAMBDA")]
    lambda: Option<f64>,
    /// Ranking-loss margin
    #[arg(long)]
    margin: Option<f64>,
    /// Comma-separated component removals: no_nrf,no_nrp,no_mi
    #[arg(long)]
    flags: Option<String>,
    /// Worker threads for extraction and evaluation (0 = all cores)
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory for artifacts
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Fold valid.txt into the training graph for message passing
    #[arg(long)]
    merge_valid: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained checkpoint (default: <out-dir>/checkpoint.bin)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Candidate negatives per positive for Hits@10
    #[arg(long, default_value_t = 50)]
    candidates: usize,
}

#[derive(Args)]
struct DensityArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Bucket boundaries on subgraph node count, as "LO,HI"
    #[arg(long, default_value = "3,10")]
    bounds: String,
}

#[derive(Args)]
struct PathsArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Restrict to these relation names (comma separated; all when empty)
    #[arg(long)]
    relations: Option<String>,
    /// Paths reported per relation
    #[arg(long, default_value_t = 2)]
    top_n: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// Root directory to write the dataset folders into
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Dataset name (creates <name> and <name>_ind)
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long, default_value_t = 1000)]
    entities: usize,
    #[arg(long, default_value_t = 300)]
    test_entities: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Ingest(args) => ingest(&args),
        Command::Train(args) => do_train(&args),
        Command::Eval(args) => {
            let (report, out_dir) = run_eval(&args, false, &[], 2)?;
            print!("{}", report.text_table());
            write_report(&out_dir, &report)?;
            Ok(())
        }
        Command::Ablate(args) => ablate(&args),
        Command::Density(args) => density(&args),
        Command::Paths(args) => paths(&args),
        Command::Synth(args) => synth(&args),
    }
}

fn data_dir(explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .or_else(|| std::env::var_os("SNRI_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

/// Well-known directory spellings per dataset id.
fn dataset_candidates(id: &str) -> Vec<String> {
    let mut cands = vec![id.to_string()];
    let known: &[(&str, &str)] = &[
        ("wn18rr_v1", "WN18RR_v1"),
        ("wn18rr_v2", "WN18RR_v2"),
        ("wn18rr_v3", "WN18RR_v3"),
        ("wn18rr_v4", "WN18RR_v4"),
        ("fb15k237_v1", "fb237_v1"),
        ("fb15k237_v2", "fb237_v2"),
        ("fb15k237_v3", "fb237_v3"),
        ("fb15k237_v4", "fb237_v4"),
    ];
    for (alias, dir) in known {
        if id.eq_ignore_ascii_case(alias) {
            cands.push(dir.to_string());
        }
    }
    cands
}

fn load_split(args: &CommonArgs, fallback_dataset: Option<&str>) -> Result<(DatasetSplit, String)> {
    let id = args
        .dataset
        .clone()
        .or_else(|| fallback_dataset.map(str::to_string))
        .ok_or_else(|| anyhow!("no dataset given; pass --dataset"))?;
    let root = data_dir(&args.data_dir);
    let name = dataset_candidates(&id)
        .into_iter()
        .find(|c| root.join(c).join("train.txt").is_file())
        .ok_or_else(|| {
            anyhow!(
                "dataset `{id}` not found under {} (expected <dir>/train.txt and <dir>_ind/)",
                root.display()
            )
        })?;
    let split = load_dataset(&root, &name, args.merge_valid)
        .with_context(|| format!("loading dataset `{name}`"))?;
    Ok((split, name))
}

fn build_config(args: &CommonArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(hops) = args.hops {
        config.model.hops = hops;
    }
    if let Some(lambda) = args.lambda {
        config.mi_weight = lambda;
    }
    if let Some(margin) = args.margin {
        config.margin = margin;
    }
    if let Some(flags) = &args.flags {
        config.ablation = AblationFlags::parse_list(flags)?;
    }
    if args.merge_valid {
        config.merge_valid = true;
    }
    config.dataset = args.dataset.clone();
    config.data_dir = Some(data_dir(&args.data_dir));
    Ok(config)
}

fn setup_workers(workers: usize) {
    if workers > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            log::warn!("could not size the worker pool: {e}");
        }
    }
}

fn ingest(args: &CommonArgs) -> Result<()> {
    let (split, name) = load_split(args, None)?;
    let (tr, tn, tt) = stats(&split.train_graph);
    let (er, en, et) = stats(&split.test_graph);
    println!("dataset: {name}");
    println!("{:<12} {:>6} {:>8} {:>8}", "split", "#R", "#N", "#T");
    println!("{:<12} {:>6} {:>8} {:>8}", "train", tr, tn, tt);
    println!("{:<12} {:>6} {:>8} {:>8}", "test", er, en, et);
    println!(
        "{:<12} {:>6} {:>8} {:>8}",
        "valid-pos",
        "-",
        "-",
        split.valid_triples.len()
    );
    println!(
        "{:<12} {:>6} {:>8} {:>8}",
        "test-pos",
        "-",
        "-",
        split.test_triples.len()
    );
    fs::create_dir_all(&args.out_dir)?;
    let train_cache = args.out_dir.join(format!("{name}_train_graph.bin"));
    let test_cache = args.out_dir.join(format!("{name}_test_graph.bin"));
    write_graph_cache(&train_cache, &split.train_graph)?;
    write_graph_cache(&test_cache, &split.test_graph)?;
    println!(
        "graph caches: {} / {}",
        train_cache.display(),
        test_cache.display()
    );
    Ok(())
}

fn do_train(args: &CommonArgs) -> Result<()> {
    setup_workers(args.workers);
    let config = build_config(args)?;
    let (split, name) = load_split(args, config.dataset.as_deref())?;
    fs::create_dir_all(&args.out_dir)?;
    let outcome = train(&config, &split, Some(&args.out_dir))?;
    println!(
        "trained `{name}` for {} epochs; best epoch {} (valid AUC-PR {:.4})",
        config.epochs, outcome.best_epoch, outcome.best_valid_auc
    );
    println!(
        "checkpoint: {}",
        args.out_dir.join("checkpoint.bin").display()
    );
    Ok(())
}

fn load_checkpoint_model(args: &EvalArgs) -> Result<(Model, TrainConfig)> {
    let path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| args.common.out_dir.join("checkpoint.bin"));
    if !path.is_file() {
        bail!(
            "checkpoint not found at {} (train first, or pass --checkpoint)",
            path.display()
        );
    }
    let (model, config, _) = load_model(&path)?;
    Ok((model, config))
}

fn run_eval(
    args: &EvalArgs,
    collect_paths: bool,
    path_relations: &[String],
    top_n: usize,
) -> Result<(EvalReport, PathBuf)> {
    setup_workers(args.common.workers);
    let (model, train_config) = load_checkpoint_model(args)?;
    let (split, _) = load_split(&args.common, train_config.dataset.as_deref())?;
    let mut flags = train_config.ablation;
    if let Some(f) = &args.common.flags {
        flags = AblationFlags::parse_list(f)?;
    }
    let opts = EvalOptions {
        num_candidates: args.candidates,
        seed: args.common.seed.unwrap_or(train_config.seed),
        collect_paths,
        path_relations: path_relations.to_vec(),
        paths_top_n: top_n,
        ..Default::default()
    };
    let report = evaluate(
        &model,
        flags,
        &split.test_graph,
        &split.test_triples,
        &split.rel_names,
        &split.test_entity_names,
        &opts,
    )?;
    Ok((report, args.common.out_dir.clone()))
}

fn write_report(out_dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("eval_report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    fs::write(out_dir.join("eval_report.txt"), report.text_table())?;
    fs::write(out_dir.join("ranks.csv"), report.ranks_csv())?;
    println!(
        "wrote eval_report.json, eval_report.txt, ranks.csv under {}",
        out_dir.display()
    );
    Ok(())
}

fn ablate(args: &CommonArgs) -> Result<()> {
    setup_workers(args.workers);
    let base = build_config(args)?;
    let (split, name) = load_split(args, base.dataset.as_deref())?;

    // full model plus the requested removals (all three by default)
    let mut variants = vec![AblationFlags::default()];
    match &args.flags {
        Some(list) => variants.push(AblationFlags::parse_list(list)?),
        None => variants.extend([
            AblationFlags { no_nrf: true, ..Default::default() },
            AblationFlags { no_nrp: true, ..Default::default() },
            AblationFlags { no_mi: true, ..Default::default() },
        ]),
    }

    let mut rows = Vec::new();
    for flags in variants {
        let label = flags.label();
        log::info!("ablation variant `{label}` on `{name}`");
        let mut config = base.clone();
        config.ablation = flags;
        let variant_dir = args.out_dir.join("ablation").join(&label);
        fs::create_dir_all(&variant_dir)?;
        let outcome = train(&config, &split, Some(&variant_dir))?;
        let report = evaluate(
            &outcome.model,
            flags,
            &split.test_graph,
            &split.test_triples,
            &split.rel_names,
            &split.test_entity_names,
            &EvalOptions {
                seed: config.seed,
                ..Default::default()
            },
        )?;
        rows.push((label, report.auc_pr, report.hits_at_10));
    }
    let table = ablation_table(&rows);
    print!("{table}");
    fs::create_dir_all(&args.out_dir)?;
    fs::write(args.out_dir.join("ablation_table.txt"), table)?;
    Ok(())
}

fn density(args: &DensityArgs) -> Result<()> {
    let bounds = parse_bounds(&args.bounds)?;
    let (mut report, out_dir) = run_eval(&args.eval, false, &[], 2)?;
    let records: Vec<(usize, bool)> = report
        .per_triple
        .iter()
        .map(|t| (t.subgraph_nodes, t.hit))
        .collect();
    report.bucket_bounds = bounds;
    report.buckets = snri_core::eval::density_buckets(&records, bounds);
    let mut table = format!("density buckets (bounds {bounds:?}):\n");
    table.push_str(&format!(
        "{:<14} {:>8} {:>8} {:>10}\n",
        "bucket", "count", "hits", "hits@10"
    ));
    for b in &report.buckets {
        table.push_str(&format!(
            "{:<14} {:>8} {:>8} {:>10}\n",
            b.label,
            b.count,
            b.hits,
            b.rate.map_or("     -".into(), |r| format!("{r:.4}"))
        ));
    }
    print!("{table}");
    fs::create_dir_all(&out_dir)?;
    fs::write(out_dir.join("density_table.txt"), table)?;
    Ok(())
}

fn parse_bounds(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        bail!("--bounds expects \"LO,HI\", got `{s}`");
    }
    let lo = parts[0].trim().parse().context("parsing bucket bound")?;
    let hi = parts[1].trim().parse().context("parsing bucket bound")?;
    if lo >= hi {
        bail!("bucket bounds must be increasing, got {lo} >= {hi}");
    }
    Ok((lo, hi))
}

fn paths(args: &PathsArgs) -> Result<()> {
    let relations: Vec<String> = args
        .relations
        .as_deref()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let (report, out_dir) = run_eval(&args.eval, true, &relations, args.top_n)?;
    let mut text = String::from("path importance (mean attention mass):\n");
    for table in &report.path_tables {
        for (i, row) in table.rows.iter().enumerate() {
            let rel = if i == 0 { table.relation.as_str() } else { "" };
            text.push_str(&format!(
                "{:<24} {:<48} {:>6.3}\n",
                rel, row.path, row.weight
            ));
        }
    }
    print!("{text}");
    fs::create_dir_all(&out_dir)?;
    fs::write(
        out_dir.join("path_tables.json"),
        serde_json::to_string_pretty(&report.path_tables)?,
    )?;
    fs::write(out_dir.join("path_tables.txt"), text)?;
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let root = data_dir(&args.data_dir);
    let cfg = SyntheticConfig {
        train_entities: args.entities,
        test_entities: args.test_entities,
        ..Default::default()
    };
    write_synthetic_dataset(&root, &args.name, &cfg, args.seed)?;
    println!(
        "wrote {} and {}_ind under {}",
        args.name,
        args.name,
        root.display()
    );
    Ok(())
}
