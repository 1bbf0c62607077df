//! `flea-sim` — command-line front end for the federated-learning simulator.
//!
//! Subcommands:
//!
//! - `run`        run the configured experiment over all seeds
//! - `partition`  write the per-seed client manifests without training
//! - `probe`      attack a saved checkpoint with the privacy probes
//! - `report`     tabulate finished runs into comparison tables and curves
//!
//! `run` exits non-zero if any seed fails, so scripted sweeps notice.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use flea_core::config::{parse_config, Overrides, RunConfig};
use flea_core::datagen::{add_context_marker, partition, PartitionManifest};
use flea_core::experiment::{report, run_experiment};
use flea_core::federation::{RoundState, Strategy};
use flea_core::metrics::mean_dcor;
use flea_core::probe::{context_attack, reconstruction_attack, AttackerConfig};

#[derive(Parser)]
#[command(
    name = "flea-sim",
    version,
    about = "Deterministic single-process simulator for feature-sharing federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment over all seeds and write artifacts.
    Run(RunArgs),
    /// Partition the dataset and write per-seed client manifests only.
    Partition(PartitionArgs),
    /// Attack a saved checkpoint with the reconstruction and context probes.
    Probe(ProbeArgs),
    /// Tabulate finished runs into comparison tables, curves, and a λ2 sweep.
    Report(ReportArgs),
}

/// Options shared by the config-driven subcommands. Flags override the
/// config file; omitted values keep the file's (or the built-in) defaults.
#[derive(Args)]
struct CommonOpts {
    /// JSON config file; omitted fields keep their defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Aggregation strategy: flea, fedavg, fedprox, fedmix, or feddata.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Number of federation rounds.
    #[arg(long)]
    rounds: Option<usize>,
    /// Weight of the activation-obfuscation loss term.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Fraction of each client's data extracted into the feature buffer.
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory (overrides the config file and FLEA_SIM_OUT).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for the per-round client fan-out.
    #[arg(long)]
    threads: Option<usize>,
}

impl CommonOpts {
    fn load(&self) -> Result<RunConfig> {
        let overrides = Overrides {
            seed: self.seed,
            strategy: self.strategy,
            rounds: self.rounds,
            lambda2: self.lambda2,
            alpha: self.alpha,
            out: self.out.clone(),
            threads: self.threads,
        };
        Ok(parse_config(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: CommonOpts,
    /// Checkpoint directory written by `run` (e.g. runs/seed_0/checkpoint_final).
    #[arg(long, value_name = "DIR")]
    checkpoint: PathBuf,
    /// Attacker training-set sizes to sweep.
    #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
    sizes: Vec<usize>,
    /// Seed for the attacker's own randomness.
    #[arg(long, default_value_t = 0)]
    probe_seed: u64,
    /// Attacker optimization epochs (default: the attacker's built-in budget).
    #[arg(long)]
    epochs: Option<usize>,
    /// Offset added to marked rows for the context probe.
    #[arg(long, default_value_t = 2.0)]
    marker_value: f64,
    /// Number of leading input columns the marker touches.
    #[arg(long, default_value_t = 3)]
    marker_width: usize,
    /// Fraction of rows marked for the context probe.
    #[arg(long, default_value_t = 0.5)]
    marker_fraction: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory for the report files.
    #[arg(long, value_name = "DIR", default_value = "report")]
    out: PathBuf,
    /// Finished run directories (each containing summary.json).
    #[arg(required = true, value_name = "RUN_DIR")]
    runs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Partition(args) => cmd_partition(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let cfg = args.common.load()?;
    let summary = run_experiment(&cfg)?;
    for o in &summary.outcomes {
        match &o.error {
            None => println!(
                "seed {}: accuracy {:.4} (best {:.4})",
                o.seed,
                o.final_accuracy.unwrap_or(f64::NAN),
                o.best_accuracy.unwrap_or(f64::NAN)
            ),
            Some(e) => println!("seed {}: failed: {e}", o.seed),
        }
    }
    let ok = summary.outcomes.iter().filter(|o| o.succeeded()).count();
    if let (Some(mean), Some(std)) = (summary.mean_accuracy, summary.std_accuracy) {
        println!(
            "{} on {}: final accuracy {:.4} ± {:.4} over {ok} seed(s)",
            summary.strategy, summary.setting, mean, std
        );
    }
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(if summary.all_succeeded() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_partition(args: PartitionArgs) -> Result<ExitCode> {
    let cfg = args.common.load()?;
    let (train, _) = cfg.dataset.build()?;
    for &seed in &cfg.seeds {
        let spec = cfg.partition.spec(seed);
        let clients = partition(&train, &spec)
            .with_context(|| format!("partitioning failed for seed {seed}"))?;
        let dir = cfg.out_dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("partition.json");
        PartitionManifest::new(spec, clients).save(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_probe(args: ProbeArgs) -> Result<ExitCode> {
    let cfg = args.common.load()?;
    let state = RoundState::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let (train, _) = cfg.dataset.build()?;
    let out = args.common.out.clone().unwrap_or_else(|| args.checkpoint.clone());
    std::fs::create_dir_all(&out)?;

    let mut attacker = AttackerConfig::default();
    if let Some(epochs) = args.epochs {
        attacker.epochs = epochs;
    }
    let dcor = mean_dcor(&state.model, &train, cfg.metric_batch, args.probe_seed)?;
    println!(
        "probing model after {} round(s): λ2 {} · mean distance correlation {dcor:.4}",
        state.round.saturating_sub(1),
        cfg.weights.lambda2
    );

    let activations = state.model.forward_front(&train.inputs)?;
    let recon = reconstruction_attack(
        &activations,
        &train.inputs,
        &args.sizes,
        &attacker,
        args.probe_seed,
        cfg.weights.lambda2,
        dcor,
    )?;
    recon.save_json(&out.join("reconstruction.json"))?;
    println!("reconstruction probe (per-dimension mse; lower = more leakage):");
    for (size, mse) in recon.train_sizes.iter().zip(&recon.curve) {
        println!("  {size:>6} pairs: {mse:.4}");
    }

    let marker = vec![args.marker_value; args.marker_width];
    let marked =
        add_context_marker(&train, &marker, args.marker_fraction, args.probe_seed)?;
    let flags = marked.context_flags.clone().expect("marker sets flags");
    let features = state.model.forward_front(&marked.inputs)?;
    let context = context_attack(
        &features,
        &flags,
        &args.sizes,
        &attacker,
        args.probe_seed,
        cfg.weights.lambda2,
        dcor,
    )?;
    context.save_json(&out.join("context.json"))?;
    println!("context probe (detection accuracy; 0.5 = chance):");
    for (size, acc) in context.train_sizes.iter().zip(&context.curve) {
        println!("  {size:>6} samples: {acc:.4}");
    }
    println!("reports in {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let files = report(&args.runs, &args.out)?;
    print!("{}", std::fs::read_to_string(&files.table_txt)?);
    println!("report files in {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}
