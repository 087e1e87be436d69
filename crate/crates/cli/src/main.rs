//! `flnids`: run training, privacy and evasion experiments from TOML configs.
//!
//! Every run writes its reports to an output directory and exits with 0
//! only when all invariant checks recorded during the run passed. `report`
//! re-reads a finished run directory and applies the same rule.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use flnids::experiment::{export, run_evasion, run_privacy, run_train, ExperimentConfig, ExperimentReport, Summary};

#[derive(Parser)]
#[command(
    name = "flnids",
    version,
    about = "Federated NIDS gradient-leakage and evasion experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Federated training under each configured defense.
    Train(RunArgs),
    /// Reconstruction attacks against single-row updates.
    Privacy(RunArgs),
    /// White-box and black-box evasion on recovered traffic.
    Evade(RunArgs),
    /// Print the summary of a finished run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Replaces the config's seed list; repeat for several seeds.
    #[arg(long = "seed", value_name = "INT")]
    seeds: Vec<u64>,
    /// Defaults to the config's `out_dir`, then `runs/<name>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Apply the config's `[full]` overrides.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding `summary.json`.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Accepted for symmetry with the run commands; unused.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if args.full {
        cfg = cfg.at_full_scale();
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds.clone();
    }
    // Validate before any compute, reporting every problem at once.
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| Path::new("runs").join(&cfg.name))
}

fn print_summary(s: &Summary) {
    println!("run: {} ({})", s.name, s.kind.as_str());
    for a in &s.accuracy {
        println!(
            "  accuracy  {:<20} mean {:.4}  sd {:.4}  runs {}",
            a.defense, a.mean, a.sd, a.runs
        );
    }
    for p in &s.privacy {
        println!(
            "  privacy   {:<20} seed {:<4} score {:.4}  label acc {:.3}  failed {}",
            p.defense, p.seed, p.mean_score, p.label_accuracy, p.failed
        );
    }
    for (seed, e) in &s.evasion {
        let budget = format!("{}={}", e.budget_name, e.budget);
        println!(
            "  evasion   {:<20} seed {:<4} {:<10} {:<9} {:<16} ER {:.3}",
            e.defense, seed, e.victim, e.attack, budget, e.evasion_rate
        );
    }
    for b in &s.blackbox {
        println!(
            "  blackbox  {:<20} seed {:<4} {:<10} classifier ER {:.3}  anomaly ER {:.3}",
            b.defense, b.seed, b.status, b.classifier_er, b.anomaly_er
        );
    }
    let failed: Vec<_> = s.checks.iter().filter(|c| !c.passed).collect();
    println!("checks: {} run, {} failed", s.checks.len(), failed.len());
    for c in failed {
        println!("  FAILED {}: {}", c.name, c.detail);
    }
}

fn run(args: &RunArgs, go: fn(&ExperimentConfig) -> flnids::Result<ExperimentReport>) -> Result<bool> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg);
    let report = go(&cfg)?;
    for t in &report.timings {
        log::info!("{}: {:.2}s", t.phase, t.seconds);
    }
    let files = export(&report, &dir).with_context(|| format!("writing {}", dir.display()))?;
    log::info!("wrote {} report files to {}", files.len(), dir.display());
    print_summary(&report.summary());
    Ok(report.all_checks_passed())
}

fn report(args: &ReportArgs) -> Result<bool> {
    let path = args.out.join("summary.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let summary: Summary = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if summary.all_checks_passed != summary.checks.iter().all(|c| c.passed) {
        bail!("{}: all_checks_passed disagrees with the check list", path.display());
    }
    print_summary(&summary);
    Ok(summary.all_checks_passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Train(a) => run(a, run_train),
        Command::Privacy(a) => run(a, run_privacy),
        Command::Evade(a) => run(a, run_evasion),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more invariant checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
