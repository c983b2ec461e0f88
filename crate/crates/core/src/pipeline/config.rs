//! Run configuration and hyperparameter grids.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{Task, BIN_OS, DEFAULT_BINARIZE_DAYS, DM, HPV, OS};
use crate::error::{Error, Result};
use crate::preprocess::RankingConfig;
use crate::resample::AdasynConfig;

/// The four prediction targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    Hpv,
    BinOs,
    Os,
    Dm,
}

impl TaskName {
    /// Endpoint column the models are fitted to.
    pub fn endpoint(self) -> &'static str {
        match self {
            TaskName::Hpv => HPV,
            TaskName::BinOs => BIN_OS,
            TaskName::Os => OS,
            TaskName::Dm => DM,
        }
    }

    pub fn task(self) -> Task {
        match self {
            TaskName::Hpv | TaskName::BinOs => Task::Classification,
            TaskName::Os | TaskName::Dm => Task::Survival,
        }
    }

    /// Time-to-event endpoint used for Kaplan-Meier curves, if any.
    pub fn km_endpoint(self) -> Option<&'static str> {
        match self {
            TaskName::Hpv => None,
            TaskName::BinOs | TaskName::Os => Some(OS),
            TaskName::Dm => Some(DM),
        }
    }

    /// Survival endpoint that is binarized to produce this one.
    pub fn binarized_from(self) -> Option<&'static str> {
        match self {
            TaskName::BinOs => Some(OS),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Lpnl,
    Phgn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Lpnl => "lpnl",
            ModelKind::Phgn => "phgn",
        }
    }
}

/// Value lists per hyperparameter. Only the lists relevant to the model
/// are expanded; the others contribute their first value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub n_features: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub epochs: Vec<usize>,
    pub k_neighbors: Vec<usize>,
    pub hidden_width: Vec<usize>,
    pub latent_dim: Vec<usize>,
    pub alpha: Vec<f64>,
    pub l1_ratio: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            n_features: vec![8],
            learning_rate: vec![1e-3],
            weight_decay: vec![1e-4],
            epochs: vec![300],
            k_neighbors: vec![5],
            hidden_width: vec![32],
            latent_dim: vec![16],
            alpha: vec![0.01],
            l1_ratio: vec![0.5],
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub n_features: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub k_neighbors: usize,
    pub hidden_width: usize,
    pub latent_dim: usize,
    pub alpha: f64,
    pub l1_ratio: f64,
}

fn first<T: Copy>(v: &[T], name: &str) -> Result<T> {
    v.first().copied().ok_or_else(|| Error::invalid(format!("grid list {name} is empty")))
}

impl Grid {
    /// Cartesian product in a fixed key order; the last key varies fastest.
    pub fn expand(&self, model: ModelKind) -> Result<Vec<Hyperparameters>> {
        let base = Hyperparameters {
            n_features: first(&self.n_features, "n_features")?,
            learning_rate: first(&self.learning_rate, "learning_rate")?,
            weight_decay: first(&self.weight_decay, "weight_decay")?,
            epochs: first(&self.epochs, "epochs")?,
            k_neighbors: first(&self.k_neighbors, "k_neighbors")?,
            hidden_width: first(&self.hidden_width, "hidden_width")?,
            latent_dim: first(&self.latent_dim, "latent_dim")?,
            alpha: first(&self.alpha, "alpha")?,
            l1_ratio: first(&self.l1_ratio, "l1_ratio")?,
        };
        type Setter = Box<dyn Fn(&mut Hyperparameters, usize)>;
        let mut axes: Vec<(usize, Setter)> = Vec::new();
        let nf = self.n_features.clone();
        axes.push((nf.len(), Box::new(move |h, i| h.n_features = nf[i])));
        match model {
            ModelKind::Linear => {
                let a = self.alpha.clone();
                axes.push((a.len(), Box::new(move |h, i| h.alpha = a[i])));
                let l = self.l1_ratio.clone();
                axes.push((l.len(), Box::new(move |h, i| h.l1_ratio = l[i])));
            }
            ModelKind::Lpnl | ModelKind::Phgn => {
                let v = self.learning_rate.clone();
                axes.push((v.len(), Box::new(move |h, i| h.learning_rate = v[i])));
                let v = self.weight_decay.clone();
                axes.push((v.len(), Box::new(move |h, i| h.weight_decay = v[i])));
                let v = self.epochs.clone();
                axes.push((v.len(), Box::new(move |h, i| h.epochs = v[i])));
                if model == ModelKind::Phgn {
                    let v = self.k_neighbors.clone();
                    axes.push((v.len(), Box::new(move |h, i| h.k_neighbors = v[i])));
                }
                let v = self.hidden_width.clone();
                axes.push((v.len(), Box::new(move |h, i| h.hidden_width = v[i])));
                let v = self.latent_dim.clone();
                axes.push((v.len(), Box::new(move |h, i| h.latent_dim = v[i])));
            }
        }
        let total: usize = axes.iter().map(|(n, _)| n).product();
        let mut out = Vec::with_capacity(total);
        for mut flat in 0..total {
            let mut h = base.clone();
            for (len, set) in axes.iter().rev() {
                set(&mut h, flat % len);
                flat /= len;
            }
            out.push(h);
        }
        Ok(out)
    }
}

/// How "the best five models" are picked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// The five fold models of the single best configuration.
    FoldModels,
    /// The best fold model of each of the five best configurations.
    TopConfigs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub mode: SelectionMode,
    pub n_folds: usize,
    pub n_models: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            mode: SelectionMode::FoldModels,
            n_folds: 5,
            n_models: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub cluster_threshold: f64,
    pub ranking: RankingConfig,
    pub adasyn: AdasynConfig,
    /// Days at which time-to-event endpoints are binarized.
    pub binarize_days: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            cluster_threshold: 0.9,
            ranking: RankingConfig::default(),
            adasyn: AdasynConfig::default(),
            binarize_days: DEFAULT_BINARIZE_DAYS,
        }
    }
}

/// Which patients form the graph of a graph model at inference.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Only the patients being predicted.
    #[default]
    TestOnly,
    /// The predicted patients plus the fold's training patients.
    WithTrainingContext,
}

/// Settings of network training that are not tuned by the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub patience: usize,
    pub dropout_rate: f64,
    pub l2_lambda: f64,
    pub temperature: f64,
    pub soft_threshold_init: f64,
    /// Mini-batch size of LPNL classification training.
    pub lpnl_batch_size: usize,
    pub inference: InferenceMode,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            patience: 30,
            dropout_rate: 0.1,
            l2_lambda: 0.0,
            temperature: 1.0,
            soft_threshold_init: 1.0,
            lpnl_batch_size: 128,
            inference: InferenceMode::TestOnly,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub features: Option<PathBuf>,
    pub endpoints: Option<PathBuf>,
    pub test_features: Option<PathBuf>,
    pub test_endpoints: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub data: DataConfig,
    pub task: TaskName,
    pub model: ModelKind,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub preprocessing: PreprocessConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn new(task: TaskName, model: ModelKind) -> Self {
        Self {
            data: DataConfig::default(),
            task,
            model,
            grid: Grid::default(),
            selection: SelectionConfig::default(),
            preprocessing: PreprocessConfig::default(),
            training: TrainingConfig::default(),
            output: OutputConfig::default(),
            seed: 0,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let configs = self.grid.expand(self.model)?;
        if configs.iter().any(|h| h.n_features == 0) {
            return Err(Error::invalid("n_features must be positive"));
        }
        if self.selection.n_folds < 2 {
            return Err(Error::invalid("n_folds must be at least 2"));
        }
        if self.selection.n_models == 0 {
            return Err(Error::invalid("n_models must be positive"));
        }
        if self.selection.mode == SelectionMode::FoldModels && self.selection.n_models != self.selection.n_folds {
            return Err(Error::invalid(format!(
                "fold_models selection takes one model per fold: n_models ({}) must equal n_folds ({})",
                self.selection.n_models, self.selection.n_folds
            )));
        }
        if !(self.preprocessing.cluster_threshold > 0.0 && self.preprocessing.cluster_threshold < 1.0) {
            return Err(Error::invalid("cluster_threshold must lie in (0, 1)"));
        }
        if self.training.lpnl_batch_size == 0 {
            return Err(Error::invalid("lpnl_batch_size must be positive"));
        }
        Ok(())
    }
}
