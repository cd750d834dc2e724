use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use coldstart::config::Config;
use coldstart::io::atomic_write_str;
use coldstart::pipeline::Run;
use coldstart::toy;

/// Multi-strategy pre-training for cold-start recommendation.
///
/// Any config key can also be overridden as `--key value`
/// (e.g. `--pretrain-epochs 5`).
#[derive(Parser, Debug)]
#[command(name = "coldstart", version)]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for every random stream
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated subset of Rg,Cg,Rp,Cp.
    #[arg(long, global = true)]
    tasks: Option<String>,
    /// random, importance or dynamic.
    #[arg(long, global = true)]
    sampler: Option<String>,
    /// delete, substitute or both.
    #[arg(long, global = true)]
    aug: Option<String>,
    /// Cutoff for Recall@K and NDCG@K
    #[arg(long = "k-eval", global = true)]
    k_eval: Option<usize>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse the dataset and assign dense ids.
    Ingest,
    /// Warm/cold, intrinsic and chronological splits.
    Split,
    /// Train ground-truth embeddings.
    Groundtruth,
    /// Train the enabled pretext tasks.
    Pretrain,
    /// Fuse the task encoders and fine-tune on cold users.
    Finetune,
    /// Intrinsic and ranking metrics.
    Eval,
    /// Per-epoch sampling time of every sampler.
    Bench,
    /// Every stage from ingest to report.
    Run,
    /// Single-task and leave-one-out variants (needs groundtruth).
    Ablation,
    /// Collect artifacts into report.txt.
    Report,
    /// Write the synthetic toy dataset.
    MakeToy {
        #[arg(default_value = "toy.tsv")]
        path: PathBuf,
    },
}

/// Pulls `--key value` pairs naming config keys out of `args`.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let keys: Vec<&str> = Config::keys().collect();
    let clap_owned = ["config", "seed", "tasks", "sampler", "aug", "k_eval", "out"];
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if let Some(name) = a.strip_prefix("--") {
            let (name, inline) = match name.split_once('=') {
                Some((n, v)) => (n.to_string(), Some(v.to_string())),
                None => (name.to_string(), None),
            };
            let key = name.replace('-', "_");
            if keys.contains(&key.as_str()) && !clap_owned.contains(&key.as_str()) {
                if let Some(v) = inline.or_else(|| it.next()) {
                    overrides.push((key, v));
                    continue;
                }
            }
        }
        rest.push(a);
    }
    (rest, overrides)
}

fn run() -> anyhow::Result<()> {
    let (args, mut overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    if let Cmd::MakeToy { path } = &cli.cmd {
        let its = toy::generate(&toy::ToySpec::default());
        atomic_write_str(path, &toy::to_tsv(&its))?;
        return Ok(());
    }
    for (k, v) in [
        ("seed", cli.seed.map(|s| s.to_string())),
        ("tasks", cli.tasks.clone()),
        ("sampler", cli.sampler.clone()),
        ("aug", cli.aug.clone()),
        ("k_eval", cli.k_eval.map(|k| k.to_string())),
    ] {
        if let Some(v) = v {
            overrides.push((k.to_string(), v));
        }
    }
    let cfg = Config::load(cli.config.as_deref(), &overrides).context("loading config")?;
    let run = Run::new(cfg, &cli.out)?;
    match cli.cmd {
        Cmd::Ingest => run.ingest()?,
        Cmd::Split => run.split()?,
        Cmd::Groundtruth => run.ground_truth()?,
        Cmd::Pretrain => run.pretrain()?,
        Cmd::Finetune => run.finetune()?,
        Cmd::Eval => print!("{}", run.eval()?.to_tsv()),
        Cmd::Bench => print!("{}", run.bench()?),
        Cmd::Run => print!("{}", run.run_all()?.to_tsv()),
        Cmd::Ablation => {
            run.ablation()?;
            print!("{}", std::fs::read_to_string(run.path(coldstart::pipeline::ABLATION))?);
        }
        Cmd::Report => print!("{}", run.report()?),
        Cmd::MakeToy { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let level = std::env::var("COLDSTART_LOG").unwrap_or_else(|_| "warn".into());
    env_logger::Builder::new().parse_filters(&level).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
