//! Test-time inference, Combo ensembling and evaluation reports.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TaskName;
use super::search::{prepare_cohort, SelectionResult};
use crate::cohort::{Cohort, Task};
use crate::error::{Error, Result};
use crate::survstats::{
    classification_metrics, concordance_index, km_estimate, logrank_test, stratify_by_risk, KmCurve,
    LogRankResult, MetricsReport,
};

/// Probability threshold for class labels and binary-task risk groups.
pub const CLASSIFICATION_THRESHOLD: f64 = 0.5;
/// Log-rank significance level.
pub const SIGNIFICANCE: f64 = 0.05;

/// Label of the averaged classification ensemble.
pub const COMBO: &str = "combo";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationReport {
    /// Time-to-event endpoint of the curves.
    pub endpoint: String,
    /// Patients at or above this prediction form the high-risk group.
    pub threshold: f64,
    pub low_ids: Vec<String>,
    pub high_ids: Vec<String>,
    pub km_low: KmCurve,
    pub km_high: KmCurve,
    pub logrank: LogRankResult,
    pub significant: bool,
}

/// Evaluation of one model (or of the Combo ensemble) on the test cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    /// Mean prediction of the ensemble members, one per test patient.
    pub predictions: Vec<f64>,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratification: Option<StratificationReport>,
    /// Why the risk stratification was skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratification_skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub task: TaskName,
    /// Test patients in prediction order.
    pub ids: Vec<String>,
    pub models: Vec<ModelReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combo: Option<ModelReport>,
}

/// Elementwise mean of several prediction vectors.
pub fn combo_ensemble(predictions: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = predictions
        .first()
        .ok_or_else(|| Error::invalid("no predictions to ensemble"))?;
    let n = first.len();
    if let Some(p) = predictions.iter().find(|p| p.len() != n) {
        return Err(Error::shape(format!("prediction vectors of length {n} and {}", p.len())));
    }
    let m = predictions.len() as f64;
    Ok((0..n).map(|i| predictions.iter().map(|p| p[i]).sum::<f64>() / m).collect())
}

fn metrics_for(task: TaskName, cohort: &Cohort, predictions: &[f64]) -> Result<MetricsReport> {
    match task.task() {
        Task::Classification => {
            let y = cohort.labels(task.endpoint())?;
            classification_metrics(predictions, &y, CLASSIFICATION_THRESHOLD)
        }
        Task::Survival => {
            let (t, e) = cohort.survival(task.endpoint())?;
            Ok(MetricsReport {
                c_index: Some(concordance_index(predictions, &t, &e)?),
                ..MetricsReport::default()
            })
        }
    }
}

fn stratify(
    task: TaskName,
    cohort: &Cohort,
    predictions: &[f64],
    threshold: f64,
) -> Result<std::result::Result<StratificationReport, String>> {
    let Some(endpoint) = task.km_endpoint() else {
        return Ok(Err(format!("endpoint {} has no event times", task.endpoint())));
    };
    let (t, e) = cohort.survival(endpoint)?;
    let groups = stratify_by_risk(predictions, threshold);
    if groups.is_degenerate() {
        return Ok(Err(format!(
            "threshold {threshold} leaves an empty group ({} low, {} high)",
            groups.low.len(),
            groups.high.len()
        )));
    }
    let pick = |idx: &[usize]| -> (Vec<f64>, Vec<bool>, Vec<String>) {
        (
            idx.iter().map(|&i| t[i]).collect(),
            idx.iter().map(|&i| e[i]).collect(),
            idx.iter().map(|&i| cohort.patients()[i].id.clone()).collect(),
        )
    };
    let (tl, el, low_ids) = pick(&groups.low);
    let (th, eh, high_ids) = pick(&groups.high);
    let logrank = logrank_test(&tl, &el, &th, &eh)?;
    Ok(Ok(StratificationReport {
        endpoint: endpoint.to_string(),
        threshold,
        low_ids,
        high_ids,
        km_low: km_estimate(&tl, &el)?,
        km_high: km_estimate(&th, &eh)?,
        significant: logrank.p_value < SIGNIFICANCE,
        logrank,
    }))
}

fn model_report(
    label: &str,
    task: TaskName,
    cohort: &Cohort,
    predictions: Vec<f64>,
    threshold: f64,
) -> Result<ModelReport> {
    let metrics = metrics_for(task, cohort, &predictions)?;
    let (stratification, stratification_skipped) = match stratify(task, cohort, &predictions, threshold)? {
        Ok(s) => (Some(s), None),
        Err(why) => {
            log::warn!("{label}: risk stratification skipped: {why}");
            (None, Some(why))
        }
    };
    Ok(ModelReport {
        label: label.to_string(),
        predictions,
        metrics,
        stratification,
        stratification_skipped,
    })
}

/// Mean prediction of the chosen models on the prepared test cohort.
pub fn ensemble_predictions(selection: &SelectionResult, test: &Cohort) -> Result<Vec<f64>> {
    let per_model = selection
        .chosen
        .iter()
        .map(|m| m.predict(test))
        .collect::<Result<Vec<_>>>()?;
    combo_ensemble(&per_model)
}

/// Evaluate one selection on a raw test cohort.
pub fn predict_test(selection: &SelectionResult, test: &Cohort) -> Result<TestReport> {
    evaluate(std::slice::from_ref(selection), test)
}

/// Evaluate several selections of the same task on a raw test cohort. For
/// classification tasks with more than one model the averaged Combo
/// ensemble is reported as well.
pub fn evaluate(selections: &[SelectionResult], test: &Cohort) -> Result<TestReport> {
    let first = selections
        .first()
        .ok_or_else(|| Error::invalid("no selection to evaluate"))?;
    let task = first.task;
    for s in selections {
        if s.task != task {
            return Err(Error::invalid(format!(
                "selections mix tasks {:?} and {:?}",
                task, s.task
            )));
        }
        if s.binarize_days != first.binarize_days {
            return Err(Error::invalid("selections use different binarization thresholds"));
        }
        if s.chosen.is_empty() {
            return Err(Error::invalid("selection has no chosen models"));
        }
    }
    let mut labels: Vec<&str> = selections.iter().map(|s| s.model.name()).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("each model kind may be evaluated once per report"));
    }

    let cohort = prepare_cohort(test, task, first.binarize_days)?;
    let mut models = Vec::with_capacity(selections.len());
    for s in selections {
        let predictions = ensemble_predictions(s, &cohort)?;
        let threshold = match task.task() {
            Task::Classification => CLASSIFICATION_THRESHOLD,
            Task::Survival => s
                .risk_threshold
                .ok_or_else(|| Error::invalid("survival selection lacks a risk threshold"))?,
        };
        models.push(model_report(s.model.name(), task, &cohort, predictions, threshold)?);
    }
    let combo = if task.task() == Task::Classification && models.len() > 1 {
        let preds: Vec<Vec<f64>> = models.iter().map(|m| m.predictions.clone()).collect();
        Some(model_report(COMBO, task, &cohort, combo_ensemble(&preds)?, CLASSIFICATION_THRESHOLD)?)
    } else {
        None
    };
    Ok(TestReport {
        task,
        ids: cohort.ids(),
        models,
        combo,
    })
}

impl TestReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Write `test_report.json` and the KM curves into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(super::TEST_REPORT_FILE);
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))?;
        let mut written = vec![path];
        written.extend(self.export_km(dir)?);
        Ok(written)
    }

    /// Write `km_<label>_<low|high>.csv` for every stratified model.
    pub fn export_km(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for m in self.models.iter().chain(&self.combo) {
            if let Some(s) = &m.stratification {
                for (group, curve) in [("low", &s.km_low), ("high", &s.km_high)] {
                    let path = dir.join(format!("km_{}_{group}.csv", m.label));
                    curve.save_csv(&path)?;
                    written.push(path);
                }
            }
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survstats::auc;

    #[test]
    fn combo_examples() {
        let c = combo_ensemble(&[vec![0.2, 0.8], vec![0.4, 0.6]]).unwrap();
        assert!((c[0] - 0.3).abs() < 1e-15 && (c[1] - 0.7).abs() < 1e-15);
        assert_eq!(combo_ensemble(&[vec![0.1, 0.9, 0.5]]).unwrap(), vec![0.1, 0.9, 0.5]);
        assert!(combo_ensemble(&[vec![0.1], vec![0.1, 0.2]]).is_err());
        assert!(combo_ensemble(&[]).is_err());
    }

    #[test]
    fn identical_members_average_to_themselves() {
        let p = vec![0.13, 0.77, 0.5, 0.02];
        assert_eq!(combo_ensemble(&vec![p.clone(); 5]).unwrap(), p);
    }

    #[test]
    fn metric_of_mean_differs_from_mean_of_metrics() {
        let y = [0u8, 0, 1, 1];
        let a = vec![0.1, 0.6, 0.5, 0.9];
        let b = vec![0.6, 0.1, 0.9, 0.2];
        let mean_of_aucs = 0.5 * (auc(&a, &y).unwrap() + auc(&b, &y).unwrap());
        let auc_of_mean = auc(&combo_ensemble(&[a, b]).unwrap(), &y).unwrap();
        assert_eq!(mean_of_aucs, 0.75);
        assert_eq!(auc_of_mean, 1.0);
    }
}
