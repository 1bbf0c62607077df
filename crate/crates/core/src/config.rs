//! Run configuration: a JSON-backed manifest covering every knob of an
//! experiment. Unset fields take the documented defaults (the protocol's
//! reference hyper-parameters), unknown keys are rejected with the list of
//! valid ones, and explicit CLI overrides win over file values. The effective
//! config is echoed verbatim into each run directory so no default stays
//! hidden.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{load_csv, Dataset, PartitionMode, PartitionSpec};
use crate::error::{Error, Result};
use crate::federation::{RunSettings, Strategy};
use crate::flea::{LossWeights, MixupParams};
use crate::nn::AdamConfig;
use crate::rng::{mix, tag};

/// Environment variable naming the default output root (used when neither
/// the config file nor `--out` sets one).
pub const OUT_ROOT_ENV: &str = "FLEA_SIM_OUT";

/// Where the data comes from: the built-in Gaussian-mixture generator or a
/// pair of CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetCfg {
    Generated {
        classes: usize,
        dims: usize,
        per_class: usize,
        spread: f64,
        test_per_class: usize,
        /// Seed for the data itself; kept apart from the run seeds so every
        /// seed of a run trains on the same dataset.
        data_seed: u64,
    },
    Csv {
        train_path: PathBuf,
        test_path: PathBuf,
        label_column: String,
    },
}

impl Default for DatasetCfg {
    fn default() -> Self {
        DatasetCfg::Generated {
            classes: 4,
            dims: 8,
            per_class: 250,
            spread: 0.5,
            test_per_class: 50,
            data_seed: 1,
        }
    }
}

impl DatasetCfg {
    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetCfg::Generated { classes, dims, per_class, spread, test_per_class, .. } => {
                if *classes < 2 {
                    return Err(Error::Config("dataset.classes must be ≥ 2".into()));
                }
                if *dims < 2 {
                    return Err(Error::Config("dataset.dims must be ≥ 2".into()));
                }
                if *per_class == 0 || *test_per_class == 0 {
                    return Err(Error::Config(
                        "dataset.per_class and test_per_class must be ≥ 1".into(),
                    ));
                }
                if !(*spread >= 0.0) {
                    return Err(Error::Config(format!(
                        "dataset.spread must be ≥ 0, got {spread}"
                    )));
                }
                Ok(())
            }
            DatasetCfg::Csv { train_path, test_path, .. } => {
                if train_path.as_os_str().is_empty() || test_path.as_os_str().is_empty() {
                    return Err(Error::Config("dataset paths must be non-empty".into()));
                }
                Ok(())
            }
        }
    }

    /// Materialize (train, test) datasets.
    pub fn build(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetCfg::Generated {
                classes,
                dims,
                per_class,
                spread,
                test_per_class,
                data_seed,
            } => {
                let train = crate::datagen::gen_gaussian_mixture(
                    *classes, *dims, *per_class, *spread, *data_seed,
                )?;
                let test = crate::datagen::gen_gaussian_mixture(
                    *classes,
                    *dims,
                    *test_per_class,
                    *spread,
                    mix(*data_seed, &[tag::DATASET_TEST]),
                )?;
                Ok((train, test))
            }
            DatasetCfg::Csv { train_path, test_path, label_column } => {
                let train = load_csv(train_path, label_column)?;
                let test = load_csv(test_path, label_column)?;
                if test.num_classes != train.num_classes || test.dims() != train.dims() {
                    return Err(Error::Config(format!(
                        "test CSV shape ({} classes, {} dims) disagrees with train ({}, {})",
                        test.num_classes,
                        test.dims(),
                        train.num_classes,
                        train.dims()
                    )));
                }
                Ok((train, test))
            }
        }
    }
}

/// Label-distribution skew and scarcity knobs; the per-seed partition seed
/// is filled in by the experiment driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionCfg {
    pub mode: PartitionMode,
    pub num_clients: usize,
    pub mean_size: usize,
}

impl Default for PartitionCfg {
    fn default() -> Self {
        PartitionCfg { mode: PartitionMode::Dir(0.5), num_clients: 20, mean_size: 40 }
    }
}

impl PartitionCfg {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("partition.num_clients must be ≥ 1".into()));
        }
        if self.mean_size == 0 {
            return Err(Error::Config("partition.mean_size must be ≥ 1".into()));
        }
        match self.mode {
            PartitionMode::Qua(q) if q == 0 => {
                Err(Error::Config("partition mode qua needs q ≥ 1".into()))
            }
            PartitionMode::Dir(mu) if !(mu > 0.0) => {
                Err(Error::Config(format!("partition mode dir needs μ > 0, got {mu}")))
            }
            _ => Ok(()),
        }
    }

    pub fn spec(&self, seed: u64) -> PartitionSpec {
        PartitionSpec {
            mode: self.mode,
            num_clients: self.num_clients,
            mean_size: self.mean_size,
            seed,
        }
    }
}

/// Network architecture: hidden widths plus the front/back split index l.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelCfg {
    pub hidden: Vec<usize>,
    pub split_index: usize,
}

impl Default for ModelCfg {
    fn default() -> Self {
        ModelCfg { hidden: vec![32, 16], split_index: 1 }
    }
}

impl ModelCfg {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("model.hidden needs non-zero widths".into()));
        }
        let layers = self.hidden.len() + 1;
        if self.split_index < 1 || self.split_index > layers - 1 {
            return Err(Error::Config(format!(
                "model.split_index {} outside [1, {}]",
                self.split_index,
                layers - 1
            )));
        }
        Ok(())
    }
}

/// The full experiment manifest. Defaults are the protocol's reference
/// values: a=2, λ1=1, λ2=3, α=0.1, client fraction 0.1, batch 32, E=5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetCfg,
    pub partition: PartitionCfg,
    pub model: ModelCfg,
    pub strategy: Strategy,
    pub rounds: usize,
    pub fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mixup: MixupParams,
    pub weights: LossWeights,
    pub alpha: f64,
    pub prox_rho: f64,
    pub adam: AdamConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub metric_batch: usize,
    pub threads: usize,
    pub record_timing: bool,
    /// Extra checkpoint every N rounds (0 = final checkpoint only).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetCfg::default(),
            partition: PartitionCfg::default(),
            model: ModelCfg::default(),
            strategy: Strategy::Flea,
            rounds: 30,
            fraction: 0.1,
            epochs: 5,
            batch_size: 32,
            mixup: MixupParams::default(),
            weights: LossWeights::default(),
            alpha: 0.1,
            prox_rho: 0.1,
            adam: AdamConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: PathBuf::from("runs"),
            metric_batch: 64,
            threads: 1,
            record_timing: false,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.partition.validate()?;
        self.model.validate()?;
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be ≥ 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::Config("out_dir must be non-empty".into()));
        }
        // The remaining ranges are shared with the round engine.
        self.settings(0).validate()
    }

    /// Round-engine view of this config for one seed.
    pub fn settings(&self, run_seed: u64) -> RunSettings {
        RunSettings {
            strategy: self.strategy,
            run_seed,
            fraction: self.fraction,
            epochs: self.epochs,
            batch_size: self.batch_size,
            mixup: self.mixup,
            weights: self.weights,
            adam: self.adam,
            alpha: self.alpha,
            prox_rho: self.prox_rho,
            metric_batch: self.metric_batch,
            threads: self.threads,
            record_timing: self.record_timing,
        }
    }

    /// Compact partition/scarcity descriptor used as the report table key,
    /// e.g. `qua2_k20_s40`.
    pub fn setting_key(&self) -> String {
        let mode = match self.partition.mode {
            PartitionMode::Iid => "iid".to_string(),
            PartitionMode::Qua(q) => format!("qua{q}"),
            PartitionMode::Dir(mu) => format!("dir{mu}"),
        };
        format!("{mode}_k{}_s{}", self.partition.num_clients, self.partition.mean_size)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_json(&text)
    }

    /// Parse config JSON; an empty (or whitespace-only) document yields the
    /// full default config.
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(RunConfig::default());
        }
        let cfg: RunConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }
}

/// Explicit command-line overrides; `None` keeps the file/default value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub strategy: Option<Strategy>,
    pub rounds: Option<usize>,
    pub lambda2: Option<f64>,
    pub alpha: Option<f64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(strategy) = self.strategy {
            cfg.strategy = strategy;
        }
        if let Some(rounds) = self.rounds {
            cfg.rounds = rounds;
        }
        if let Some(lambda2) = self.lambda2 {
            cfg.weights.lambda2 = lambda2;
        }
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        if let Some(ref out) = self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
    }
}

/// Load (or default) a config, apply overrides, resolve the output root, and
/// validate. Precedence for the output directory: `--out` flag, then the
/// config file, then the `FLEA_SIM_OUT` environment variable, then `runs`.
pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out_was_default = cfg.out_dir == RunConfig::default().out_dir;
    overrides.apply(&mut cfg);
    if overrides.out.is_none() && out_was_default {
        if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
            if !root.is_empty() {
                cfg.out_dir = PathBuf::from(root);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
