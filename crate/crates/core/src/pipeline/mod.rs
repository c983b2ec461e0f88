//! Orchestration: cross-validated grid search, selection of the ensemble,
//! test-time inference and reports, plus the on-disk artifacts that connect
//! the stages.

mod config;
mod report;
mod search;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{
    DataConfig, Grid, Hyperparameters, InferenceMode, ModelKind, OutputConfig, PreprocessConfig, RunConfig,
    SelectionConfig, SelectionMode, TaskName, TrainingConfig,
};
pub use report::{
    combo_ensemble, ensemble_predictions, evaluate, predict_test, ModelReport, StratificationReport, TestReport,
    CLASSIFICATION_THRESHOLD, COMBO, SIGNIFICANCE,
};
pub use search::{
    prepare_cohort, run_cv_search, score_predictions, target_of, ChosenModel, ConfigResult, FoldPreprocessing,
    SelectionResult, TrainedModel,
};

use crate::error::{Error, Result};

pub const SELECTION_FILE: &str = "selection.json";
pub const TEST_REPORT_FILE: &str = "test_report.json";

/// File holding the parameters of the `i`-th chosen model.
pub fn params_file(i: usize) -> String {
    format!("params_fold{i}.json")
}

#[derive(Serialize, Deserialize)]
struct ChosenEntry {
    config_index: usize,
    fold: usize,
    hyperparameters: Hyperparameters,
    preprocessing: FoldPreprocessing,
    features: Vec<String>,
    validation_score: f64,
    params_file: String,
}

#[derive(Serialize, Deserialize)]
struct SelectionFile {
    task: TaskName,
    model: ModelKind,
    mode: SelectionMode,
    binarize_days: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    risk_threshold: Option<f64>,
    folds: Vec<Vec<String>>,
    configs: Vec<ConfigResult>,
    chosen: Vec<ChosenEntry>,
}

fn write(path: &Path, contents: String) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl SelectionResult {
    /// Write `selection.json` and one `params_fold{i}.json` per chosen model.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut chosen = Vec::with_capacity(self.chosen.len());
        for (i, m) in self.chosen.iter().enumerate() {
            let name = params_file(i);
            let path = dir.join(&name);
            write(&path, serde_json::to_string(&m.model)?)?;
            written.push(path);
            chosen.push(ChosenEntry {
                config_index: m.config_index,
                fold: m.fold,
                hyperparameters: m.hyperparameters.clone(),
                preprocessing: m.preprocessing.clone(),
                features: m.features.clone(),
                validation_score: m.validation_score,
                params_file: name,
            });
        }
        let file = SelectionFile {
            task: self.task,
            model: self.model,
            mode: self.mode,
            binarize_days: self.binarize_days,
            risk_threshold: self.risk_threshold,
            folds: self.folds.clone(),
            configs: self.configs.clone(),
            chosen,
        };
        let path = dir.join(SELECTION_FILE);
        write(&path, serde_json::to_string_pretty(&file)?)?;
        written.insert(0, path);
        Ok(written)
    }

    /// Read a selection written by [`SelectionResult::save`]. `path` is the
    /// `selection.json` file or the directory holding it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file_path = if path.is_dir() { path.join(SELECTION_FILE) } else { path.to_path_buf() };
        let dir = file_path.parent().unwrap_or(Path::new("."));
        let file: SelectionFile = serde_json::from_str(&read(&file_path)?)?;
        let chosen = file
            .chosen
            .into_iter()
            .map(|c| {
                let model: TrainedModel = serde_json::from_str(&read(&dir.join(&c.params_file))?)?;
                Ok(ChosenModel {
                    config_index: c.config_index,
                    fold: c.fold,
                    hyperparameters: c.hyperparameters,
                    preprocessing: c.preprocessing,
                    features: c.features,
                    validation_score: c.validation_score,
                    model,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            task: file.task,
            model: file.model,
            mode: file.mode,
            binarize_days: file.binarize_days,
            folds: file.folds,
            configs: file.configs,
            chosen,
            risk_threshold: file.risk_threshold,
        })
    }
}
