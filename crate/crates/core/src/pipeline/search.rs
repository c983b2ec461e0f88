//! Cross-validated grid search and model selection.

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Hyperparameters, InferenceMode, ModelKind, PreprocessConfig, RunConfig, SelectionMode, TaskName};
use crate::cohort::{binarize_survival, Cohort, Task};
use crate::error::{Error, Result};
use crate::graphnets::{train_network, Architecture, GraphNetwork, NetworkConfig, Target, TrainConfig};
use crate::linmod::{
    fit_cox_elasticnet, fit_logistic_elasticnet, predict_cox_risk, predict_logistic, ElasticNetConfig,
    LinearModelFit,
};
use crate::preprocess::{
    apply_standardizer, bootstrap_rank_features, cluster_features, fit_standardizer, spearman_matrix,
    ClusterAssignment, FeatureRanking, StandardizationParams,
};
use crate::resample::{adasyn_oversample, stratified_kfold};
use crate::rng::stream_id;
use crate::survstats::{auc, concordance_index, validation_risk_threshold};

// Stream tags for derived seeds.
const FOLDS: u64 = 0;
const RANKING: u64 = 1;
const ADASYN: u64 = 2;
const INIT: u64 = 3;
const TRAIN: u64 = 4;

/// Restrict a raw cohort to the patients usable for `task`, deriving the
/// binary endpoint first when the task needs one.
pub fn prepare_cohort(cohort: &Cohort, task: TaskName, binarize_days: f64) -> Result<Cohort> {
    let base = match task.binarized_from() {
        Some(source) => binarize_survival(&cohort.with_endpoint(source), source, binarize_days)?.cohort,
        None => cohort.clone(),
    };
    let out = base.with_endpoint(task.endpoint());
    if out.is_empty() {
        return Err(Error::MissingData(format!("no patient has endpoint {}", task.endpoint())));
    }
    if out.len() < cohort.len() {
        log::info!("{} of {} patients usable for {}", out.len(), cohort.len(), task.endpoint());
    }
    Ok(out)
}

/// Outcome of `task` as a training target.
pub fn target_of(cohort: &Cohort, task: TaskName) -> Result<Target> {
    Ok(match task.task() {
        Task::Classification => Target::Binary(cohort.labels(task.endpoint())?),
        Task::Survival => {
            let (times, events) = cohort.survival(task.endpoint())?;
            Target::Survival { times, events }
        }
    })
}

/// AUC for labels, c-index for survival targets.
pub fn score_predictions(predictions: &[f64], target: &Target) -> Result<f64> {
    match target {
        Target::Binary(y) => auc(predictions, y),
        Target::Survival { times, events } => concordance_index(predictions, times, events),
    }
}

/// Preprocessing state fitted on one training portion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPreprocessing {
    pub standardizer: StandardizationParams,
    pub clusters: ClusterAssignment,
    pub ranking: FeatureRanking,
}

impl FoldPreprocessing {
    /// Standardize, cluster and rank on `train` only.
    pub fn fit(train: &Cohort, task: TaskName, cfg: &PreprocessConfig, seed: u64) -> Result<Self> {
        let standardizer = fit_standardizer(train)?;
        let std_train = apply_standardizer(&standardizer, train)?;
        let corr = spearman_matrix(&std_train)?;
        let clusters = cluster_features(&corr, cfg.cluster_threshold)?;
        let reduced = clusters.apply(&std_train)?;
        let ranking = bootstrap_rank_features(&reduced, task.endpoint(), task.task(), &cfg.ranking, seed)?;
        if ranking.is_empty() {
            return Err(Error::MissingData("no feature received a ranking score".into()));
        }
        Ok(Self {
            standardizer,
            clusters,
            ranking,
        })
    }

    /// Feature matrix of `cohort` restricted to `features`, standardized
    /// with the stored parameters. Extra columns of `cohort` are ignored.
    pub fn transform(&self, cohort: &Cohort, features: &[String]) -> Result<Array2<f64>> {
        let own = cohort.select_features(&self.standardizer.feature_names)?;
        let std = apply_standardizer(&self.standardizer, &own)?;
        Ok(std.select_features(features)?.feature_matrix())
    }
}

/// A fitted model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainedModel {
    Linear {
        task: Task,
        fit: LinearModelFit,
    },
    Graph {
        network: GraphNetwork,
        /// Training rows added as extra graph nodes at inference.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        context: Option<Array2<f64>>,
    },
}

impl TrainedModel {
    /// Predictions (probabilities or risks) over the rows of `x` alone.
    fn predict_isolated(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Linear { task: Task::Classification, fit } => predict_logistic(fit, x),
            TrainedModel::Linear { task: Task::Survival, fit } => predict_cox_risk(fit, x),
            TrainedModel::Graph { network, .. } => network.predict(x),
        }
    }

    /// Predictions for new patients. Graph models build their graph over
    /// these patients, plus the stored training rows when present.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Graph {
                network,
                context: Some(ctx),
            } => {
                let all = concatenate(Axis(0), &[ctx.view(), x.view()])
                    .map_err(|e| Error::shape(format!("context rows: {e}")))?;
                let p = network.predict(&all)?;
                Ok(p[ctx.nrows()..].to_vec())
            }
            _ => self.predict_isolated(x),
        }
    }
}

/// Scores of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigResult {
    pub index: usize,
    pub hyperparameters: Hyperparameters,
    pub train_scores: Vec<f64>,
    pub validation_scores: Vec<f64>,
    /// Mean over folds of (train + validation) / 2; absent when disqualified.
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ConfigResult {
    pub fn mean_validation(&self) -> Option<f64> {
        if self.validation_scores.is_empty() {
            return None;
        }
        Some(self.validation_scores.iter().sum::<f64>() / self.validation_scores.len() as f64)
    }
}

/// One member of the selected ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChosenModel {
    pub config_index: usize,
    pub fold: usize,
    pub hyperparameters: Hyperparameters,
    pub preprocessing: FoldPreprocessing,
    /// Input features of the model, in column order.
    pub features: Vec<String>,
    pub validation_score: f64,
    pub model: TrainedModel,
}

impl ChosenModel {
    pub fn predict(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        let x = self.preprocessing.transform(cohort, &self.features)?;
        self.model.predict(&x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub task: TaskName,
    pub model: ModelKind,
    pub mode: SelectionMode,
    pub binarize_days: f64,
    /// Patient ids of each validation fold.
    pub folds: Vec<Vec<String>>,
    /// All configurations, best first; disqualified ones last.
    pub configs: Vec<ConfigResult>,
    pub chosen: Vec<ChosenModel>,
    /// Survival tasks: mean over the chosen models of the median
    /// validation risk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risk_threshold: Option<f64>,
}

impl SelectionResult {
    pub fn best(&self) -> &ConfigResult {
        &self.configs[0]
    }
}

struct FoldRun {
    train_score: f64,
    validation_score: f64,
    validation_predictions: Vec<f64>,
    features: Vec<String>,
    model: TrainedModel,
}

fn network_config(cfg: &RunConfig, h: &Hyperparameters) -> NetworkConfig {
    NetworkConfig {
        latent_dim: h.latent_dim,
        hidden_dims: vec![h.hidden_width; 2],
        k_neighbors: h.k_neighbors,
        soft_threshold_init: cfg.training.soft_threshold_init,
        temperature: cfg.training.temperature,
        head: cfg.task.task(),
        dropout_rate: cfg.training.dropout_rate,
    }
}

fn train_config(cfg: &RunConfig, h: &Hyperparameters) -> TrainConfig {
    let batched = cfg.model == ModelKind::Lpnl && cfg.task.task() == Task::Classification;
    TrainConfig {
        learning_rate: h.learning_rate,
        weight_decay: h.weight_decay,
        epochs: h.epochs,
        patience: cfg.training.patience,
        batch_size: batched.then_some(cfg.training.lpnl_batch_size),
        l2_lambda: cfg.training.l2_lambda,
    }
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    cfg: &RunConfig,
    h: &Hyperparameters,
    config_index: usize,
    fold: usize,
    prep: &FoldPreprocessing,
    train: &Cohort,
    validation: &Cohort,
) -> Result<FoldRun> {
    let available = prep.ranking.len();
    if h.n_features > available {
        return Err(Error::invalid(format!(
            "n_features {} exceeds the {available} ranked features",
            h.n_features
        )));
    }
    let features = prep.ranking.top(h.n_features)?;
    let x_train = prep.transform(train, &features)?;
    let x_val = prep.transform(validation, &features)?;
    let y_train = target_of(train, cfg.task)?;
    let y_val = target_of(validation, cfg.task)?;
    let tag = [cfg.seed, 0, config_index as u64, fold as u64];
    let seed = |stream: u64| {
        let mut t = tag;
        t[1] = stream;
        stream_id(&t)
    };

    let (x_fit, y_fit) = match &y_train {
        Target::Binary(y) => {
            let over = adasyn_oversample(&x_train, y, &cfg.preprocessing.adasyn, seed(ADASYN))?;
            (over.x, Target::Binary(over.y))
        }
        t => (x_train.clone(), t.clone()),
    };

    let model = match cfg.model {
        ModelKind::Linear => {
            let en = ElasticNetConfig::new(h.alpha, h.l1_ratio);
            let fit = match &y_fit {
                Target::Binary(y) => fit_logistic_elasticnet(&x_fit, y, &en)?,
                Target::Survival { times, events } => fit_cox_elasticnet(&x_fit, times, events, &en)?,
            };
            TrainedModel::Linear {
                task: cfg.task.task(),
                fit,
            }
        }
        ModelKind::Lpnl | ModelKind::Phgn => {
            let arch = if cfg.model == ModelKind::Phgn {
                Architecture::Phgn
            } else {
                Architecture::Lpnl
            };
            let net = GraphNetwork::new(arch, network_config(cfg, h), features.len(), seed(INIT))?;
            let out = train_network(
                net,
                &x_fit,
                &y_fit,
                Some((&x_val, &y_val)),
                &train_config(cfg, h),
                seed(TRAIN),
            )?;
            let context = (cfg.training.inference == InferenceMode::WithTrainingContext).then(|| x_train.clone());
            TrainedModel::Graph {
                network: out.network,
                context,
            }
        }
    };

    let train_pred = model.predict_isolated(&x_train)?;
    let val_pred = model.predict(&x_val)?;
    if train_pred.iter().chain(&val_pred).any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite predictions".into()));
    }
    Ok(FoldRun {
        train_score: score_predictions(&train_pred, &y_train)?,
        validation_score: score_predictions(&val_pred, &y_val)?,
        validation_predictions: val_pred,
        features,
        model,
    })
}

/// Tune the grid of `cfg` by stratified k-fold cross-validation on
/// `cohort` and select the ensemble.
pub fn run_cv_search(cohort: &Cohort, cfg: &RunConfig) -> Result<SelectionResult> {
    cfg.validate()?;
    let grid = cfg.grid.expand(cfg.model)?;
    let cohort = prepare_cohort(cohort, cfg.task, cfg.preprocessing.binarize_days)?;
    let k = cfg.selection.n_folds;
    let split = stratified_kfold(&cohort, cfg.task.endpoint(), k, stream_id(&[cfg.seed, FOLDS]))?;
    let portions: Vec<(Cohort, Cohort)> = (0..k)
        .map(|f| {
            let (tr, va) = split.train_validation(f);
            (cohort.subset(&tr), cohort.subset(&va))
        })
        .collect();

    let preps: Vec<FoldPreprocessing> = portions
        .par_iter()
        .enumerate()
        .map(|(f, (train, _))| {
            FoldPreprocessing::fit(train, cfg.task, &cfg.preprocessing, stream_id(&[cfg.seed, RANKING, f as u64]))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|c| (0..k).map(move |f| (c, f))).collect();
    log::info!("grid search: {} configurations x {k} folds", grid.len());
    let fold_runs: Vec<Result<FoldRun>> = jobs
        .par_iter()
        .map(|&(c, f)| {
            let (train, val) = &portions[f];
            let r = run_fold(cfg, &grid[c], c, f, &preps[f], train, val);
            if let Err(e) = &r {
                log::warn!("configuration {c}, fold {f}: {e}");
            }
            r
        })
        .collect();

    let mut runs: Vec<Vec<Option<FoldRun>>> = Vec::with_capacity(grid.len());
    let mut configs = Vec::with_capacity(grid.len());
    let mut it = fold_runs.into_iter();
    for (c, h) in grid.iter().enumerate() {
        let mut folds = Vec::with_capacity(k);
        let mut failure = None;
        for (f, r) in it.by_ref().take(k).enumerate() {
            match r {
                Ok(run) => folds.push(Some(run)),
                Err(e) => {
                    failure.get_or_insert_with(|| format!("fold {f}: {e}"));
                    folds.push(None);
                }
            }
        }
        let train_scores: Vec<f64> = folds.iter().flatten().map(|r| r.train_score).collect();
        let validation_scores: Vec<f64> = folds.iter().flatten().map(|r| r.validation_score).collect();
        let score = failure.is_none().then(|| {
            let s: f64 = train_scores.iter().zip(&validation_scores).map(|(t, v)| 0.5 * (t + v)).sum();
            s / k as f64
        });
        configs.push(ConfigResult {
            index: c,
            hyperparameters: h.clone(),
            train_scores,
            validation_scores,
            score,
            failure,
        });
        runs.push(folds);
    }

    configs.sort_by(|a, b| match (a.score, b.score) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.index.cmp(&b.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.index.cmp(&b.index),
    });
    let qualified: Vec<usize> = configs.iter().filter(|c| c.score.is_some()).map(|c| c.index).collect();
    if qualified.is_empty() {
        let reasons: Vec<String> = configs
            .iter()
            .map(|c| format!("config {}: {}", c.index, c.failure.as_deref().unwrap_or("?")))
            .collect();
        return Err(Error::Training(format!(
            "no configuration trained successfully ({})",
            reasons.join("; ")
        )));
    }

    let n_models = cfg.selection.n_models;
    let picks: Vec<(usize, usize)> = match cfg.selection.mode {
        SelectionMode::FoldModels => (0..k).map(|f| (qualified[0], f)).collect(),
        SelectionMode::TopConfigs => {
            if qualified.len() < n_models {
                return Err(Error::Training(format!(
                    "top_configs selection needs {n_models} qualified configurations, found {}",
                    qualified.len()
                )));
            }
            qualified[..n_models]
                .iter()
                .map(|&c| {
                    let val = &configs.iter().find(|r| r.index == c).expect("config present").validation_scores;
                    // best validation fold, lowest index on ties
                    let f = (0..k).fold(0, |b, f| if val[f] > val[b] { f } else { b });
                    (c, f)
                })
                .collect()
        }
    };

    let mut chosen = Vec::with_capacity(picks.len());
    let mut val_risks = Vec::with_capacity(picks.len());
    for (c, f) in picks {
        let run = runs[c][f].take().expect("qualified run present");
        val_risks.push(run.validation_predictions);
        chosen.push(ChosenModel {
            config_index: c,
            fold: f,
            hyperparameters: grid[c].clone(),
            preprocessing: preps[f].clone(),
            features: run.features,
            validation_score: run.validation_score,
            model: run.model,
        });
    }
    let risk_threshold = match cfg.task.task() {
        Task::Survival => Some(validation_risk_threshold(&val_risks)?),
        Task::Classification => None,
    };
    Ok(SelectionResult {
        task: cfg.task,
        model: cfg.model,
        mode: cfg.selection.mode,
        binarize_days: cfg.preprocessing.binarize_days,
        folds: split.folds().iter().map(|idx| idx.iter().map(|&i| cohort.patients()[i].id.clone()).collect()).collect(),
        configs,
        chosen,
        risk_threshold,
    })
}
