//! Stratified k-fold splits, bootstrap resampling and ADASYN oversampling.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Outcome, PatientRecord};
use crate::error::{Error, Result};
use crate::rng;

/// Per-patient fold index in `0..k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub k: usize,
    pub assignment: Vec<usize>,
}

impl FoldSplit {
    /// Patient indices of each fold, ascending.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &f) in self.assignment.iter().enumerate() {
            out[f].push(i);
        }
        out
    }

    /// `(training, validation)` indices for `fold`.
    pub fn train_validation(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (val, train): (Vec<usize>, Vec<usize>) = (0..self.assignment.len()).partition(|&i| self.assignment[i] == fold);
        (train, val)
    }
}

/// Stratum key per patient: the class label for binary endpoints, the
/// event flag for time-to-event endpoints.
fn strata(cohort: &Cohort, endpoint: &str) -> Result<Vec<u8>> {
    cohort
        .patients()
        .iter()
        .map(|p| match p.outcomes.get(endpoint) {
            Some(Outcome::Binary(b)) => Ok(b.label()),
            Some(Outcome::Survival(s)) => Ok(u8::from(s.event)),
            None => Err(Error::MissingData(format!("patient {} has no outcome {endpoint}", p.id))),
        })
        .collect()
}

/// Shuffle each stratum, then deal the concatenated strata round-robin into
/// `k` folds. Fold sizes differ by at most one overall and per stratum.
pub fn stratified_kfold(cohort: &Cohort, endpoint: &str, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    let keys = strata(cohort, endpoint)?;
    let mut rng = rng::substream(seed, 0);
    let mut order = Vec::with_capacity(keys.len());
    for key in [0u8, 1] {
        let mut members: Vec<usize> = (0..keys.len()).filter(|&i| keys[i] == key).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::invalid(format!(
                "stratum {key} of {endpoint} has {} patients, fewer than k = {k}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        order.extend(members);
    }
    let mut assignment = vec![0; keys.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldSplit { k, assignment })
}

/// `n` indices drawn with replacement.
pub fn bootstrap_indices(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Resample patients with replacement. Repeated draws of one patient get
/// ids `<id>#2`, `<id>#3`, ... so ids stay unique.
pub fn bootstrap_sample(cohort: &Cohort, seed: u64) -> Result<Cohort> {
    if cohort.is_empty() {
        return Err(Error::invalid("cannot bootstrap an empty cohort"));
    }
    let mut rng = rng::substream(seed, 0);
    let idx = bootstrap_indices(cohort.len(), &mut rng);
    let mut copies: HashMap<usize, usize> = HashMap::new();
    let patients: Vec<PatientRecord> = idx
        .iter()
        .map(|&i| {
            let c = copies.entry(i).or_insert(0);
            *c += 1;
            let mut p = cohort.patients()[i].clone();
            if *c > 1 {
                p.id = format!("{}#{}", p.id, c);
            }
            p
        })
        .collect();
    Cohort::new(patients, cohort.feature_names().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdasynConfig {
    pub k_neighbors: usize,
    pub beta: f64,
}

impl Default for AdasynConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            beta: 1.0,
        }
    }
}

/// Provenance of one synthetic row: `x_seed + λ·(x_neighbor − x_seed)`, with
/// indices into the input matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub seed_index: usize,
    pub neighbor_index: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oversampled {
    /// Input rows followed by the synthetic rows.
    pub x: Array2<f64>,
    pub y: Vec<u8>,
    /// One record per appended row, in order.
    pub synthetic: Vec<SyntheticRecord>,
    pub minority_label: u8,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` rows of `candidates` closest to row `i` (excluding
/// `i`), ties going to the lower index.
fn nearest(x: &Array2<f64>, i: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| (sq_dist(x.row(i), x.row(j)), j))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

/// ADASYN: generate `(n_maj − n_min)·β` synthetic minority rows, allotted to
/// minority points in proportion to the majority share of their k nearest
/// neighbors. Each synthetic row interpolates a minority point towards one
/// of its k nearest minority neighbors with λ drawn from the open unit
/// interval.
pub fn adasyn_oversample(x: &Array2<f64>, y: &[u8], cfg: &AdasynConfig, seed: u64) -> Result<Oversampled> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::shape(format!("{n} rows vs {} labels", y.len())));
    }
    if cfg.k_neighbors == 0 {
        return Err(Error::invalid("ADASYN k_neighbors must be positive"));
    }
    if !(cfg.beta >= 0.0) || !cfg.beta.is_finite() {
        return Err(Error::invalid(format!("ADASYN beta must be >= 0, got {}", cfg.beta)));
    }
    let n_pos = y.iter().filter(|&&l| l == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("ADASYN needs both classes"));
    }
    let minority_label = u8::from(n_pos < n_neg);
    let (n_min, n_maj) = (n_pos.min(n_neg), n_pos.max(n_neg));
    let unchanged = Oversampled {
        x: x.clone(),
        y: y.to_vec(),
        synthetic: Vec::new(),
        minority_label,
    };
    let g_total = ((n_maj - n_min) as f64 * cfg.beta).round() as usize;
    if g_total == 0 {
        return Ok(unchanged);
    }
    let k = cfg.k_neighbors;
    if n_min <= k {
        return Err(Error::invalid(format!(
            "ADASYN needs more than k = {k} minority samples, got {n_min}"
        )));
    }
    if k >= n {
        return Err(Error::invalid(format!("ADASYN k = {k} must be below n = {n}")));
    }

    let all: Vec<usize> = (0..n).collect();
    let minority: Vec<usize> = all.iter().copied().filter(|&i| y[i] == minority_label).collect();
    let ratios: Vec<f64> = minority
        .iter()
        .map(|&i| {
            let nn = nearest(x, i, &all, k);
            nn.iter().filter(|&&j| y[j] != minority_label).count() as f64 / k as f64
        })
        .collect();
    let total: f64 = ratios.iter().sum();
    let weights: Vec<f64> = if total > 0.0 {
        ratios.iter().map(|r| r / total).collect()
    } else {
        log::debug!("ADASYN: no minority point has majority neighbors; using uniform allocation");
        vec![1.0 / n_min as f64; n_min]
    };

    let mut rng = rng::substream(seed, 0);
    let mut rows: Vec<f64> = x.iter().copied().collect();
    let mut labels = y.to_vec();
    let mut synthetic = Vec::new();
    for (&i, w) in minority.iter().zip(&weights) {
        let g = (w * g_total as f64).round() as usize;
        if g == 0 {
            continue;
        }
        let nn = nearest(x, i, &minority, k);
        for _ in 0..g {
            let j = nn[rng.random_range(0..nn.len())];
            let lambda = loop {
                let l: f64 = rng.random();
                if l > 0.0 {
                    break l;
                }
            };
            rows.extend(x.row(i).iter().zip(x.row(j).iter()).map(|(a, b)| a + lambda * (b - a)));
            labels.push(minority_label);
            synthetic.push(SyntheticRecord {
                seed_index: i,
                neighbor_index: j,
                lambda,
            });
        }
    }
    let x_out = Array2::from_shape_vec((labels.len(), x.ncols()), rows)
        .map_err(|e| Error::shape(e.to_string()))?;
    Ok(Oversampled {
        x: x_out,
        y: labels,
        synthetic,
        minority_label,
    })
}
