//! Run configuration: one JSON file drives generation, training and
//! analysis; command-line flags override individual fields.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hessian_anatomy::data::{gen_gaussian_mixture, load_csv, load_idx, LabeledDataset};
use hessian_anatomy::error::{Error, Result};
use hessian_anatomy::model::Activation;
use hessian_anatomy::seed::derive_seed;
use hessian_anatomy::train::{geometric_snapshot_epochs, TrainConfig};

/// Where the dataset comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Generate {
        classes: usize,
        dim: usize,
        per_class: usize,
        separation: f64,
        noise_scale: f64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit_per_class: Option<usize>,
    },
}

/// Classifier shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Hidden layer widths; at least one.
    pub hidden: Vec<usize>,
    /// "relu" or "tanh".
    pub activation: String,
}

/// Optimization settings; the seed comes from the run seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Completed-epoch numbers to snapshot; defaults to a geometric grid
    /// plus the final epoch.
    #[serde(default)]
    pub snapshot_epochs: Option<Vec<usize>>,
}

fn default_probes() -> usize {
    10
}

fn default_steps() -> usize {
    100
}

fn default_grid_points() -> usize {
    1024
}

fn default_export() -> bool {
    true
}

fn default_topk_max_iter() -> usize {
    80
}

fn default_topk_tol() -> f64 {
    1e-9
}

/// Spectral analysis settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisSpec {
    /// How many top eigenvalues of `G` to extract; defaults to `C`, capped
    /// at `4C` and at `P`.
    #[serde(default)]
    pub topk: Option<usize>,
    #[serde(default = "default_probes")]
    pub slq_probes: usize,
    #[serde(default = "default_steps")]
    pub slq_steps: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Kernel width; defaults to the grid span divided by 200.
    #[serde(default)]
    pub smoothing_sigma: Option<f64>,
    #[serde(default = "default_export")]
    pub export_deltas: bool,
    #[serde(default = "default_topk_max_iter")]
    pub topk_max_iter: usize,
    #[serde(default = "default_topk_tol")]
    pub topk_tol: f64,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            topk: None,
            slq_probes: default_probes(),
            slq_steps: default_steps(),
            grid_points: default_grid_points(),
            smoothing_sigma: None,
            export_deltas: default_export(),
            topk_max_iter: default_topk_max_iter(),
            topk_tol: default_topk_tol(),
        }
    }
}

/// Everything one reproducible run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub train: TrainSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    pub out: PathBuf,
    pub seed: u64,
    /// Opt-in per-column feature standardization.
    #[serde(default)]
    pub standardize: bool,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.hidden.is_empty() {
            return Err(Error::Config("model needs at least one hidden layer".into()));
        }
        Activation::from_name(&self.model.activation)?;
        if self.analysis.slq_probes == 0 || self.analysis.slq_steps == 0 {
            return Err(Error::Config("SLQ needs probes >= 1 and steps >= 1".into()));
        }
        if self.analysis.grid_points < 2 {
            return Err(Error::Config("density grid needs at least 2 points".into()));
        }
        self.train_config().validate()
    }

    pub fn activation(&self) -> Activation {
        Activation::from_name(&self.model.activation).expect("validated")
    }

    /// Resolve the dataset: generators run in memory (deterministic for the
    /// run seed), file specs load from disk.
    pub fn load_dataset(&self) -> Result<LabeledDataset> {
        let ds = match &self.dataset {
            DatasetSpec::Generate { classes, dim, per_class, separation, noise_scale } => {
                gen_gaussian_mixture(
                    *classes,
                    *dim,
                    *per_class,
                    *separation,
                    *noise_scale,
                    derive_seed(self.seed, "data.gen"),
                )?
            }
            DatasetSpec::Csv { path, has_header } => load_csv(path, *has_header)?,
            DatasetSpec::Idx { images, labels, limit_per_class } => {
                load_idx(images, labels, *limit_per_class)?
            }
        };
        Ok(if self.standardize { ds.standardized() } else { ds })
    }

    /// Full layer-size list for a dataset with `dim` inputs and `classes`
    /// outputs.
    pub fn layer_sizes(&self, dim: usize, classes: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.model.hidden.len() + 2);
        sizes.push(dim);
        sizes.extend_from_slice(&self.model.hidden);
        sizes.push(classes);
        sizes
    }

    /// Snapshot epochs: explicit list (sorted, deduplicated) or the
    /// geometric default.
    pub fn snapshot_epochs(&self) -> Vec<usize> {
        match &self.train.snapshot_epochs {
            Some(list) => {
                let mut v = list.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
            None => geometric_snapshot_epochs(self.train.epochs),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            initial_lr: self.train.initial_lr,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            snapshot_epochs: self.snapshot_epochs(),
            seed: derive_seed(self.seed, "train.shuffle"),
        }
    }
}
