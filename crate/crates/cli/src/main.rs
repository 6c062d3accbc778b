use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dflsim::data::{load_idx, synth_blobs, zipf_allocate, LabeledDataset};
use dflsim::graph::{gen_barabasi_albert, gen_erdos_renyi};
use dflsim::json::to_sorted_string_pretty;
use dflsim::metrics::{summarize, RoundRecord};
use dflsim::{Experiment, SimConfig};
use serde_json::{json, Value};

/// Deterministic simulator for decentralized federated learning.
#[derive(Debug, Parser)]
#[command(name = "dflsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured strategy and replica; write rounds.csv,
    /// summary.json and manifest.json.
    Run(RunArgs),
    /// Generate a topology and write it as JSON.
    GenGraph(GenGraphArgs),
    /// Partition a dataset across nodes and write the allocation as JSON.
    Allocate(AllocateArgs),
    /// Rebuild summary.json from an existing rounds.csv.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// A config, or a summary.json / manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Replace `run.master_seed`.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GraphArg {
    Er,
    Ba,
}

#[derive(Debug, Args)]
struct GenGraphArgs {
    #[arg(long, value_enum)]
    kind: GraphArg,
    #[arg(long)]
    n: usize,
    /// Edge probability (er).
    #[arg(long)]
    p: Option<f64>,
    /// Edges per new node (ba).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AllocateArgs {
    /// IDX image file; requires --idx-labels.
    #[arg(long, requires = "idx_labels", conflicts_with = "synthetic")]
    idx_images: Option<PathBuf>,
    #[arg(long)]
    idx_labels: Option<PathBuf>,
    /// Samples per class of a synthetic blob dataset.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0.1)]
    spread: f64,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1.26)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    min_per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    rounds: PathBuf,
    /// Config, summary or manifest to embed in the output.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference accuracy for characteristic times, instead of the
    /// Centralized rows.
    #[arg(long)]
    centralized_accuracy: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::GenGraph(a) => cmd_gen_graph(&a).map(|()| ExitCode::SUCCESS),
        Command::Allocate(a) => cmd_allocate(&a).map(|()| ExitCode::SUCCESS),
        Command::Eval(a) => cmd_eval(&a).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Read a config, unwrapping the `config` member of a summary or manifest.
fn read_config(path: &Path) -> Result<SimConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let text = match value.get("config") {
        Some(inner) => inner.to_string(),
        None => text,
    };
    Ok(SimConfig::from_json(&text)?)
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn records_csv(records: &[RoundRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record([
            "replica",
            "round",
            "node",
            "strategy",
            "accuracy",
            "test_ce_loss",
            "comm_floats_sent",
            "gini",
        ])?;
    }
    Ok(w.into_inner()?)
}

fn summary_json(records: &[RoundRecord], config: Option<&SimConfig>, centralized: Option<f64>) -> Result<String> {
    let mut value = serde_json::to_value(summarize(records, centralized))?;
    if let Some(cfg) = config {
        value["config"] = serde_json::to_value(cfg)?;
    }
    Ok(to_sorted_string_pretty(&value))
}

fn cmd_run(a: &RunArgs) -> Result<ExitCode> {
    let mut config = read_config(&a.config)?;
    if let Some(seed) = a.seed_override {
        config.run.master_seed = seed;
    }
    // fail before any work if the data is missing
    let exp = Experiment::new(config.clone())?;
    let n = exp.topology(0)?.node_count();
    let ginis: Vec<f64> = (0..config.run.replicas)
        .map(|r| exp.allocation(r, exp.topology(r)?.node_count()).map(|al| al.gini()))
        .collect::<Result<_, _>>()?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let log = exp.run_all_with(a.threads)?;

    let rounds = a.out_dir.join("rounds.csv");
    let summary = a.out_dir.join("summary.json");
    let manifest = a.out_dir.join("manifest.json");
    write(&rounds, &records_csv(&log.records)?)?;
    write(&summary, summary_json(&log.records, Some(&config), None)?.as_bytes())?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let doc = json!({
        "config": config,
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": created,
        "nodes": n,
        "gini": ginis,
        "records": log.records.len(),
        "failures": log.failures,
        "outputs": {"rounds": "rounds.csv", "summary": "summary.json"},
    });
    write(&manifest, to_sorted_string_pretty(&doc).as_bytes())?;

    println!("{} records written to {}", log.records.len(), a.out_dir.display());
    if log.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &log.failures {
            eprintln!("failed: {} replica {}: {}", f.strategy.tag(), f.replica, f.message);
        }
        Ok(ExitCode::from(2))
    }
}

fn cmd_gen_graph(a: &GenGraphArgs) -> Result<()> {
    let topo = match a.kind {
        GraphArg::Er => {
            let Some(p) = a.p else { bail!("--p is required for --kind er") };
            gen_erdos_renyi(a.n, p, a.seed)?
        }
        GraphArg::Ba => {
            let Some(m) = a.m else { bail!("--m is required for --kind ba") };
            gen_barabasi_albert(a.n, m, a.seed)?
        }
    };
    let (dmin, dmax) = topo.degree_range();
    println!("nodes: {}", topo.node_count());
    println!("edges: {}", topo.edge_count());
    println!("connected: {}", topo.is_connected());
    println!("degree: min {dmin}, max {dmax}");
    if let Some(out) = &a.out {
        write(out, topo.to_json().as_bytes())?;
    }
    Ok(())
}

fn allocate_dataset(a: &AllocateArgs) -> Result<LabeledDataset> {
    match (&a.idx_images, &a.idx_labels, a.synthetic) {
        (Some(images), Some(labels), None) => Ok(load_idx(images, labels)?),
        (None, None, Some(per_class)) => Ok(synth_blobs(per_class, a.classes, a.dim, a.spread, a.data_seed)),
        _ => bail!("give either --idx-images with --idx-labels, or --synthetic"),
    }
}

fn cmd_allocate(a: &AllocateArgs) -> Result<()> {
    let ds = allocate_dataset(a)?;
    let alloc = zipf_allocate(&ds, a.n, a.alpha, a.min_per_class, a.seed)?;
    for (node, size) in alloc.node_sizes().iter().enumerate() {
        println!("node {node}: {size}");
    }
    println!("gini: {:.4}", alloc.gini());
    if let Some(out) = &a.out {
        write(out, alloc.to_json().as_bytes())?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&a.rounds).with_context(|| format!("reading {}", a.rounds.display()))?;
    let records: Vec<RoundRecord> = reader.deserialize().collect::<Result<_, _>>()?;
    let config = a.config.as_deref().map(read_config).transpose()?;
    write(&a.out, summary_json(&records, config.as_ref(), a.centralized_accuracy)?.as_bytes())?;
    println!("{} records summarized into {}", records.len(), a.out.display());
    Ok(())
}
