//! Experiment orchestration: run every configured seed end to end (build
//! data, partition, federate for T rounds), write per-seed artifacts plus a
//! cross-seed summary, and render comparison reports over finished runs.
//!
//! Layout of a run directory:
//!
//! ```text
//! out_dir/
//!   config.json            effective config, every default echoed
//!   seed_<s>/
//!     partition.json       client index assignment manifest
//!     metrics.csv          one row per round (same content as the JSONL)
//!     metrics.jsonl
//!     checkpoint_round_<t>/  (only with checkpoint_every > 0)
//!     checkpoint_final/
//!   summary.csv            per-seed rows plus mean/std rows
//!   summary.json
//! ```
//!
//! A failing seed is recorded as a failure outcome and the remaining seeds
//! still run; the summary then aggregates over the seeds that finished.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datagen::{partition, Dataset, PartitionManifest};
use crate::error::{Error, Result};
use crate::federation::{run_round, RoundContext, RoundState};
use crate::metrics::{load_jsonl, MetricsSink};
use crate::nn::ModelParams;
use crate::rng::{derive_rng, tag};

/// What one seed produced (or the error that stopped it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub rounds_completed: usize,
    pub final_accuracy: Option<f64>,
    pub best_accuracy: Option<f64>,
    pub final_mean_dcor: Option<f64>,
    pub error: Option<String>,
}

impl SeedOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Cross-seed aggregate written as `summary.json`; the means and sample
/// standard deviations cover the seeds that succeeded (None if none did).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub strategy: String,
    pub setting: String,
    pub lambda2: f64,
    pub rounds: usize,
    pub outcomes: Vec<SeedOutcome>,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub mean_best_accuracy: Option<f64>,
    pub std_best_accuracy: Option<f64>,
    pub mean_final_dcor: Option<f64>,
}

impl ExperimentSummary {
    pub fn all_succeeded(&self) -> bool {
        self.outcomes.iter().all(SeedOutcome::succeeded)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Mean and sample standard deviation (n−1 denominator; 0 for a single value).
fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

fn run_one_seed(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    seed: u64,
    seed_dir: &Path,
) -> Result<SeedOutcome> {
    std::fs::create_dir_all(seed_dir)?;
    let spec = cfg.partition.spec(seed);
    let clients = partition(train, &spec)?;
    PartitionManifest::new(spec, clients.clone()).save(&seed_dir.join("partition.json"))?;

    let mut init_rng = derive_rng(seed, &[tag::MODEL_INIT]);
    let model = ModelParams::init(
        train.dims(),
        &cfg.model.hidden,
        train.num_classes,
        cfg.model.split_index,
        &mut init_rng,
    )?;
    let settings = cfg.settings(seed);
    let ctx = RoundContext { dataset: train, test, clients: &clients, settings: &settings };
    let mut state = RoundState::new(model, clients.len());
    state.init_pool(&ctx)?;

    let mut sink =
        MetricsSink::create(&seed_dir.join("metrics.csv"), &seed_dir.join("metrics.jsonl"))?;
    let mut last = None;
    for round in 1..=cfg.rounds {
        let record = run_round(&mut state, &ctx)?;
        sink.write(&record)?;
        if cfg.checkpoint_every > 0 && round % cfg.checkpoint_every == 0 && round != cfg.rounds
        {
            state.save(&seed_dir.join(format!("checkpoint_round_{round}")))?;
        }
        last = Some(record);
    }
    state.save(&seed_dir.join("checkpoint_final"))?;
    let last = last.expect("rounds ≥ 1 validated");
    Ok(SeedOutcome {
        seed,
        rounds_completed: cfg.rounds,
        final_accuracy: Some(last.accuracy),
        best_accuracy: Some(last.best_accuracy),
        final_mean_dcor: Some(last.mean_dcor),
        error: None,
    })
}

fn write_summary_csv(summary: &ExperimentSummary, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "label",
        "status",
        "final_accuracy",
        "best_accuracy",
        "final_mean_dcor",
        "error",
    ])?;
    let fmt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    for o in &summary.outcomes {
        w.write_record([
            format!("seed_{}", o.seed),
            if o.succeeded() { "ok".into() } else { "failed".into() },
            fmt(o.final_accuracy),
            fmt(o.best_accuracy),
            fmt(o.final_mean_dcor),
            o.error.clone().unwrap_or_default(),
        ])?;
    }
    w.write_record([
        "mean".to_string(),
        "aggregate".to_string(),
        fmt(summary.mean_accuracy),
        fmt(summary.mean_best_accuracy),
        fmt(summary.mean_final_dcor),
        String::new(),
    ])?;
    w.write_record([
        "std".to_string(),
        "aggregate".to_string(),
        fmt(summary.std_accuracy),
        fmt(summary.std_best_accuracy),
        String::new(),
        String::new(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Run the full experiment: every seed sequentially, artifacts under
/// `cfg.out_dir`, summary written last. Per-seed failures are recorded, not
/// fatal; hard errors (unwritable output, bad dataset) abort the experiment.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    cfg.save(&cfg.out_dir.join("config.json"))?;
    let (train, test) = cfg.dataset.build()?;

    let mut outcomes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let seed_dir = cfg.out_dir.join(format!("seed_{seed}"));
        let outcome = match run_one_seed(cfg, &train, &test, seed, &seed_dir) {
            Ok(outcome) => outcome,
            Err(e) => SeedOutcome {
                seed,
                rounds_completed: 0,
                final_accuracy: None,
                best_accuracy: None,
                final_mean_dcor: None,
                error: Some(e.to_string()),
            },
        };
        outcomes.push(outcome);
    }

    let finals: Vec<f64> = outcomes.iter().filter_map(|o| o.final_accuracy).collect();
    let bests: Vec<f64> = outcomes.iter().filter_map(|o| o.best_accuracy).collect();
    let dcors: Vec<f64> = outcomes.iter().filter_map(|o| o.final_mean_dcor).collect();
    let acc = mean_std(&finals);
    let best = mean_std(&bests);
    let summary = ExperimentSummary {
        strategy: cfg.strategy.name().to_string(),
        setting: cfg.setting_key(),
        lambda2: cfg.weights.lambda2,
        rounds: cfg.rounds,
        outcomes,
        mean_accuracy: acc.map(|(m, _)| m),
        std_accuracy: acc.map(|(_, s)| s),
        mean_best_accuracy: best.map(|(m, _)| m),
        std_best_accuracy: best.map(|(_, s)| s),
        mean_final_dcor: mean_std(&dcors).map(|(m, _)| m),
    };
    summary.save(&cfg.out_dir.join("summary.json"))?;
    write_summary_csv(&summary, &cfg.out_dir.join("summary.csv"))?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Reports over finished runs
// ---------------------------------------------------------------------------

/// Files produced by [`report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table_csv: PathBuf,
    pub table_txt: PathBuf,
    pub curves_csv: PathBuf,
    pub sweep_csv: PathBuf,
}

struct TableRow {
    run: String,
    setting: String,
    strategy: String,
    lambda2: String,
    seeds_ok: String,
    seeds_failed: String,
    mean_accuracy: String,
    std_accuracy: String,
    mean_best: String,
    std_best: String,
    status: String,
}

const TABLE_HEADER: [&str; 11] = [
    "run",
    "setting",
    "strategy",
    "lambda2",
    "seeds_ok",
    "seeds_failed",
    "mean_accuracy",
    "std_accuracy",
    "mean_best",
    "std_best",
    "status",
];

impl TableRow {
    fn fields(&self) -> [&str; 11] {
        [
            &self.run,
            &self.setting,
            &self.strategy,
            &self.lambda2,
            &self.seeds_ok,
            &self.seeds_failed,
            &self.mean_accuracy,
            &self.std_accuracy,
            &self.mean_best,
            &self.std_best,
            &self.status,
        ]
    }
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Build a comparison report over run directories: a strategy × setting
/// accuracy table (CSV and aligned text), per-round accuracy curves, and a
/// λ2 / measured-correlation / accuracy sweep file. Directories without a
/// summary are listed as absent rather than failing the report.
pub fn report(run_dirs: &[PathBuf], out: &Path) -> Result<ReportFiles> {
    if run_dirs.is_empty() {
        return Err(Error::Config("report: no run directories given".into()));
    }
    std::fs::create_dir_all(out)?;
    let fmt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();

    let mut rows = Vec::new();
    let mut summaries: Vec<(String, ExperimentSummary, PathBuf)> = Vec::new();
    for dir in run_dirs {
        let label = run_label(dir);
        match ExperimentSummary::load(&dir.join("summary.json")) {
            Ok(summary) => {
                rows.push(TableRow {
                    run: label.clone(),
                    setting: summary.setting.clone(),
                    strategy: summary.strategy.clone(),
                    lambda2: format!("{}", summary.lambda2),
                    seeds_ok: summary
                        .outcomes
                        .iter()
                        .filter(|o| o.succeeded())
                        .count()
                        .to_string(),
                    seeds_failed: summary
                        .outcomes
                        .iter()
                        .filter(|o| !o.succeeded())
                        .count()
                        .to_string(),
                    mean_accuracy: fmt(summary.mean_accuracy),
                    std_accuracy: fmt(summary.std_accuracy),
                    mean_best: fmt(summary.mean_best_accuracy),
                    std_best: fmt(summary.std_best_accuracy),
                    status: "ok".into(),
                });
                summaries.push((label, summary, dir.clone()));
            }
            Err(_) => rows.push(TableRow {
                run: label,
                setting: String::new(),
                strategy: String::new(),
                lambda2: String::new(),
                seeds_ok: String::new(),
                seeds_failed: String::new(),
                mean_accuracy: String::new(),
                std_accuracy: String::new(),
                mean_best: String::new(),
                std_best: String::new(),
                status: "absent".into(),
            }),
        }
    }
    rows.sort_by(|a, b| {
        (&a.setting, &a.strategy, &a.run).cmp(&(&b.setting, &b.strategy, &b.run))
    });

    let table_csv = out.join("table.csv");
    let mut w = csv::Writer::from_path(&table_csv)?;
    w.write_record(TABLE_HEADER)?;
    for row in &rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;

    let table_txt = out.join("table.txt");
    let mut widths: Vec<usize> = TABLE_HEADER.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, f) in widths.iter_mut().zip(row.fields()) {
            *w = (*w).max(f.len());
        }
    }
    let mut text = String::new();
    let render = |fields: &[&str], widths: &[usize]| -> String {
        fields
            .iter()
            .zip(widths)
            .map(|(f, w)| format!("{f:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    text.push_str(&render(&TABLE_HEADER, &widths));
    text.push('\n');
    for row in &rows {
        text.push_str(&render(&row.fields(), &widths));
        text.push('\n');
    }
    std::fs::write(&table_txt, text)?;

    let curves_csv = out.join("curves.csv");
    let mut w = csv::Writer::from_path(&curves_csv)?;
    w.write_record(["run", "strategy", "seed", "round", "accuracy"])?;
    for (label, summary, dir) in &summaries {
        for outcome in summary.outcomes.iter().filter(|o| o.succeeded()) {
            let path = dir.join(format!("seed_{}", outcome.seed)).join("metrics.jsonl");
            for record in load_jsonl(&path)? {
                w.write_record([
                    label.clone(),
                    summary.strategy.clone(),
                    outcome.seed.to_string(),
                    record.round.to_string(),
                    format!("{}", record.accuracy),
                ])?;
            }
        }
    }
    w.flush()?;

    let sweep_csv = out.join("lambda2_sweep.csv");
    let mut w = csv::Writer::from_path(&sweep_csv)?;
    w.write_record(["run", "lambda2", "mean_final_dcor", "mean_accuracy", "std_accuracy"])?;
    for (label, summary, _) in &summaries {
        w.write_record([
            label.clone(),
            format!("{}", summary.lambda2),
            fmt(summary.mean_final_dcor),
            fmt(summary.mean_accuracy),
            fmt(summary.std_accuracy),
        ])?;
    }
    w.flush()?;

    Ok(ReportFiles { table_csv, table_txt, curves_csv, sweep_csv })
}
