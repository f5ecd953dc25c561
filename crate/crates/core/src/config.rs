//! Experiment plan files.
//!
//! A plan is a TOML document that names a dataset, fixes the protocol
//! constants shared by every cell, and lists the (strategy, augmentation)
//! cells to run. Parsing produces one validated
//! [`ExperimentConfig`](crate::engine::ExperimentConfig) per cell;
//! malformed documents surface as [`Error::Config`] with the offending
//! line or field in the message.
//!
//! ```toml
//! seed = 42
//! runs = 5
//!
//! [dataset]
//! kind = "blobs"
//! n_train = 1500
//! n_test = 500
//! input_dim = 16
//! classes = 4
//! spread = 0.1
//!
//! [protocol]
//! rounds = 10
//! n_sub = 500
//! n_query = 20
//! n_adv = 3
//! hidden_dim = 32
//!
//! [[cells]]
//! strategy = "random"
//! augmentation = "none"
//!
//! [[cells]]
//! strategy = "fvaal"
//! augmentation = "fv_adv"
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::attacks::AttackParams;
use crate::data::{self, Dataset};
use crate::engine::{AugmentationMode, ExperimentConfig, StrategyKind, TimingMode};
use crate::verifier::HarvestParams;
use crate::{Error, Result};

/// Which dataset a plan runs on.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Big-endian IDX image/label file pairs (optionally gzipped).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
    /// CIFAR-10 binary batches.
    Cifar10 {
        train_batches: Vec<PathBuf>,
        test_batches: Vec<PathBuf>,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
    /// Seeded Gaussian blobs, split into disjoint train/test parts.
    Blobs {
        n_train: usize,
        n_test: usize,
        input_dim: usize,
        classes: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        data_seed: u64,
    },
}

fn default_spread() -> f64 {
    0.1
}

/// One named cell with its fully resolved configuration.
#[derive(Clone, Debug)]
pub struct PlanCell {
    /// `{strategy}_{augmentation}`, used for output file names.
    pub name: String,
    pub config: ExperimentConfig,
}

/// A parsed, validated experiment plan.
#[derive(Clone, Debug)]
pub struct Plan {
    pub dataset: DatasetSpec,
    pub cells: Vec<PlanCell>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanFile {
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_runs")]
    runs: usize,
    #[serde(default)]
    timing: TimingMode,
    dataset: DatasetSpec,
    #[serde(default)]
    protocol: ProtocolSection,
    #[serde(default)]
    train: TrainSection,
    #[serde(default)]
    attack: AttackSection,
    #[serde(default)]
    harvest: HarvestSection,
    #[serde(default)]
    augment: AugmentSection,
    cells: Vec<CellSpec>,
}

fn default_seed() -> u64 {
    42
}

fn default_runs() -> usize {
    5
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ProtocolSection {
    /// Initial labeled batch; defaults to `n_query`.
    n_init: Option<usize>,
    rounds: usize,
    n_sub: usize,
    n_query: usize,
    n_adv: usize,
    hidden_dim: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            n_init: None,
            rounds: 10,
            n_sub: 500,
            n_query: 20,
            n_adv: 3,
            hidden_dim: 32,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TrainSection {
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = crate::nn::TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AttackSection {
    tolerance: f64,
    deepfool_max_iter: usize,
    deepfool_overshoot: f64,
}

impl Default for AttackSection {
    fn default() -> Self {
        let a = AttackParams::<f64>::default();
        Self {
            tolerance: a.tolerance,
            deepfool_max_iter: a.deepfool_max_iter,
            deepfool_overshoot: a.deepfool_overshoot,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct HarvestSection {
    time_limit_secs: f64,
    eps_increment: f64,
    eps_max: f64,
    exclusion_radius: f64,
}

impl Default for HarvestSection {
    fn default() -> Self {
        let h = HarvestParams::<f64>::default();
        Self {
            time_limit_secs: h.time_limit.as_secs_f64(),
            eps_increment: h.eps_increment,
            eps_max: h.eps_max,
            exclusion_radius: h.exclusion_radius,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AugmentSection {
    fgsm_eps_low: f64,
    fgsm_eps_high: f64,
    fixed_query_eps: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            fgsm_eps_low: 0.05,
            fgsm_eps_high: 0.1,
            fixed_query_eps: 0.01,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellSpec {
    strategy: StrategyKind,
    augmentation: AugmentationMode,
}

/// Parses a plan document and validates every cell.
pub fn parse_plan(text: &str) -> Result<Plan> {
    let file: PlanFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    if file.cells.is_empty() {
        return Err(Error::Config("plan declares no cells".to_string()));
    }
    if !(file.harvest.time_limit_secs.is_finite()
        && file.harvest.time_limit_secs > 0.0
        && file.harvest.time_limit_secs <= 1e9)
    {
        return Err(Error::Config(format!(
            "harvest.time_limit_secs must be a positive number of seconds, got {}",
            file.harvest.time_limit_secs
        )));
    }
    let mut cells = Vec::with_capacity(file.cells.len());
    let mut names = BTreeSet::new();
    for spec in &file.cells {
        let name = format!("{}_{}", spec.strategy.as_str(), spec.augmentation.as_str());
        if !names.insert(name.clone()) {
            return Err(Error::Config(format!("duplicate cell `{name}`")));
        }
        let mut config = ExperimentConfig::new(spec.strategy, spec.augmentation);
        config.n_init = file.protocol.n_init.unwrap_or(file.protocol.n_query);
        config.rounds = file.protocol.rounds;
        config.n_sub = file.protocol.n_sub;
        config.n_query = file.protocol.n_query;
        config.n_adv = file.protocol.n_adv;
        config.hidden_dim = file.protocol.hidden_dim;
        config.train.epochs = file.train.epochs;
        config.train.batch_size = file.train.batch_size;
        config.train.learning_rate = file.train.learning_rate;
        config.attack = AttackParams {
            tolerance: file.attack.tolerance,
            deepfool_max_iter: file.attack.deepfool_max_iter,
            deepfool_overshoot: file.attack.deepfool_overshoot,
        };
        config.harvest = HarvestParams {
            k: file.protocol.n_adv,
            time_limit: Duration::from_secs_f64(file.harvest.time_limit_secs),
            eps_increment: file.harvest.eps_increment,
            eps_max: file.harvest.eps_max,
            exclusion_radius: file.harvest.exclusion_radius,
        };
        config.fgsm_eps_range = (file.augment.fgsm_eps_low, file.augment.fgsm_eps_high);
        config.fixed_query_eps = file.augment.fixed_query_eps;
        config.seed = file.seed;
        config.runs = file.runs;
        config.timing = file.timing;
        config
            .validate()
            .map_err(|e| Error::Config(format!("cell `{name}`: {e}")))?;
        cells.push(PlanCell { name, config });
    }
    Ok(Plan {
        dataset: file.dataset,
        cells,
    })
}

/// Reads and parses a plan file.
pub fn load_plan(path: &Path) -> Result<Plan> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read plan `{}`: {e}", path.display())))?;
    parse_plan(&text)
}

fn resolve(path: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}

/// Loads the plan's dataset as a (train pool, test set) pair.
///
/// Relative file paths resolve against `root` when one is given (the CLI
/// passes the `FVAAL_DATA_DIR` environment variable). Train and test are
/// harmonized to a common class count.
pub fn load_datasets(
    spec: &DatasetSpec,
    root: Option<&Path>,
) -> Result<(Dataset<f64>, Dataset<f64>)> {
    let (mut train, mut test) = match spec {
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            train_limit,
            test_limit,
        } => {
            let mut train = data::load_idx::<f64>(
                &resolve(train_images, root),
                &resolve(train_labels, root),
            )?;
            let mut test =
                data::load_idx::<f64>(&resolve(test_images, root), &resolve(test_labels, root))?;
            if let Some(n) = train_limit {
                train.truncate(*n);
            }
            if let Some(n) = test_limit {
                test.truncate(*n);
            }
            (train, test)
        }
        DatasetSpec::Cifar10 {
            train_batches,
            test_batches,
            train_limit,
            test_limit,
        } => {
            let train_paths: Vec<PathBuf> =
                train_batches.iter().map(|p| resolve(p, root)).collect();
            let test_paths: Vec<PathBuf> = test_batches.iter().map(|p| resolve(p, root)).collect();
            let mut train = data::load_cifar10::<f64>(&train_paths)?;
            let mut test = data::load_cifar10::<f64>(&test_paths)?;
            if let Some(n) = train_limit {
                train.truncate(*n);
            }
            if let Some(n) = test_limit {
                test.truncate(*n);
            }
            (train, test)
        }
        DatasetSpec::Blobs {
            n_train,
            n_test,
            input_dim,
            classes,
            spread,
            data_seed,
        } => {
            let all = data::synthetic_blobs::<f64>(
                *data_seed,
                n_train
                    .checked_add(*n_test)
                    .ok_or_else(|| Error::Config("blob sizes overflow".to_string()))?,
                *input_dim,
                *classes,
                *spread,
            )?;
            all.split_at(*n_train)
        }
    };
    let classes = train.num_classes.max(test.num_classes);
    train.num_classes = classes;
    test.num_classes = classes;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(
            "dataset resolved to an empty train or test split".to_string(),
        ));
    }
    Ok((train, test))
}
