//! Feature preprocessing: standardization, Spearman-correlation clustering
//! with representative selection, and bootstrap feature ranking.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::cohort::{Cohort, Task};
use crate::error::{Error, Result};
use crate::linmod::{fit_cox_elasticnet, ElasticNetConfig};
use crate::rng;
use crate::survstats::average_ranks;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Features that were constant in the fitting cohort (scale set to 1).
    #[serde(default)]
    pub constant: Vec<String>,
}

impl StandardizationParams {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        if p.mean.len() != p.feature_names.len() || p.scale.len() != p.feature_names.len() {
            return Err(Error::shape("standardization vectors disagree with feature names"));
        }
        if p.scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("standardization scale must be positive"));
        }
        Ok(p)
    }
}

/// Column means and population standard deviations.
pub fn fit_standardizer(cohort: &Cohort) -> Result<StandardizationParams> {
    let n = cohort.len();
    if n < 2 {
        return Err(Error::invalid(format!("standardization needs at least 2 patients, got {n}")));
    }
    let mut mean = Vec::with_capacity(cohort.n_features());
    let mut scale = Vec::with_capacity(cohort.n_features());
    let mut constant = Vec::new();
    for (j, name) in cohort.feature_names().iter().enumerate() {
        let col = cohort.column(j);
        let m = col.iter().sum::<f64>() / n as f64;
        // exact check so that e.g. three copies of 0.1 do not yield a tiny σ
        if col.iter().all(|&v| v == col[0]) {
            log::debug!("feature {name} is constant; scale set to 1");
            constant.push(name.clone());
            mean.push(col[0]);
            scale.push(1.0);
            continue;
        }
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        mean.push(m);
        scale.push(var.sqrt());
    }
    Ok(StandardizationParams {
        feature_names: cohort.feature_names().to_vec(),
        mean,
        scale,
        constant,
    })
}

pub fn apply_standardizer(params: &StandardizationParams, cohort: &Cohort) -> Result<Cohort> {
    if params.feature_names.as_slice() != cohort.feature_names() {
        return Err(Error::shape(format!(
            "standardizer fitted on {} features does not match cohort features ({})",
            params.feature_names.len(),
            cohort.n_features()
        )));
    }
    let mut x = cohort.feature_matrix();
    for (j, mut col) in x.columns_mut().into_iter().enumerate() {
        let (m, s) = (params.mean[j], params.scale[j]);
        col.mapv_inplace(|v| (v - m) / s);
    }
    cohort.with_feature_matrix(&x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub feature_names: Vec<String>,
    pub values: Array2<f64>,
    /// Constant features; their correlation with every other feature is 0.
    #[serde(default)]
    pub constant: Vec<String>,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Pairwise Spearman rank correlation (Pearson on average ranks).
pub fn spearman_matrix(cohort: &Cohort) -> Result<CorrelationMatrix> {
    let n = cohort.len();
    if n < 3 {
        return Err(Error::invalid(format!("Spearman correlation needs at least 3 patients, got {n}")));
    }
    let p = cohort.n_features();
    let ranks: Vec<Vec<f64>> = (0..p).map(|j| average_ranks(&cohort.column(j))).collect();
    let is_const: Vec<bool> = ranks.iter().map(|r| r.iter().all(|&v| v == r[0])).collect();
    let mut values = Array2::<f64>::eye(p);
    for i in 0..p {
        for j in (i + 1)..p {
            let rho = if is_const[i] || is_const[j] {
                0.0
            } else {
                pearson(&ranks[i], &ranks[j])
            };
            values[[i, j]] = rho;
            values[[j, i]] = rho;
        }
    }
    let constant = cohort
        .feature_names()
        .iter()
        .zip(&is_const)
        .filter(|(_, c)| **c)
        .map(|(n, _)| n.clone())
        .collect::<Vec<_>>();
    if !constant.is_empty() {
        log::warn!("constant features get zero correlation: {constant:?}");
    }
    Ok(CorrelationMatrix {
        feature_names: cohort.feature_names().to_vec(),
        values,
        constant,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Disjoint groups covering every feature; members in input order.
    pub clusters: Vec<Vec<String>>,
    /// One member per cluster, parallel to `clusters`.
    pub representatives: Vec<String>,
}

impl ClusterAssignment {
    /// Reduce a cohort to the representative features.
    pub fn apply(&self, cohort: &Cohort) -> Result<Cohort> {
        cohort.select_features(&self.representatives)
    }
}

/// Complete-linkage agglomerative clustering on `1 − |ρ|`, cut so that every
/// within-cluster pair has `|ρ| > threshold`.
pub fn cluster_features(corr: &CorrelationMatrix, threshold: f64) -> Result<ClusterAssignment> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("cluster threshold must lie in (0, 1), got {threshold}")));
    }
    let p = corr.feature_names.len();
    if corr.values.dim() != (p, p) {
        return Err(Error::shape(format!(
            "correlation matrix is {:?} for {p} features",
            corr.values.dim()
        )));
    }
    let abs = corr.values.mapv(f64::abs);
    for i in 0..p {
        if corr.values[[i, i]] != 1.0 {
            return Err(Error::invalid("correlation matrix must have a unit diagonal"));
        }
        for j in 0..i {
            if corr.values[[i, j]] != corr.values[[j, i]] {
                return Err(Error::invalid("correlation matrix must be symmetric"));
            }
        }
    }

    // Work in similarity |ρ| directly: complete linkage on 1 − |ρ| is
    // single-minimum linkage on |ρ|, and comparing |ρ| against the
    // threshold avoids rounding in 1 − x.
    let mut members: Vec<Option<Vec<usize>>> = (0..p).map(|i| Some(vec![i])).collect();
    let mut sim = abs.clone();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..p {
            if members[a].is_none() {
                continue;
            }
            for b in (a + 1)..p {
                if members[b].is_none() {
                    continue;
                }
                let s = sim[[a, b]];
                if s > threshold && best.is_none_or(|(_, _, bs)| s > bs) {
                    best = Some((a, b, s));
                }
            }
        }
        let Some((a, b, _)) = best else { break };
        let mut merged = members[a].take().unwrap_or_default();
        merged.extend(members[b].take().unwrap_or_default());
        merged.sort_unstable();
        members[a] = Some(merged);
        for k in 0..p {
            if k != a && members[k].is_some() {
                let s = sim[[a, k]].min(sim[[b, k]]);
                sim[[a, k]] = s;
                sim[[k, a]] = s;
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = members.into_iter().flatten().collect();
    groups.sort_by_key(|g| g[0]);
    let names = &corr.feature_names;
    let mut clusters = Vec::with_capacity(groups.len());
    let mut representatives = Vec::with_capacity(groups.len());
    for g in &groups {
        let rep = g
            .iter()
            .map(|&i| (i, g.iter().filter(|&&j| j != i).map(|&j| abs[[i, j]]).sum::<f64>()))
            .max_by(|(i, si), (j, sj)| si.total_cmp(sj).then_with(|| names[*j].cmp(&names[*i])))
            .map(|(i, _)| i)
            .unwrap_or(g[0]);
        clusters.push(g.iter().map(|&i| names[i].clone()).collect());
        representatives.push(names[rep].clone());
    }
    Ok(ClusterAssignment {
        clusters,
        representatives,
    })
}

/// Default neighbor count of the mutual-information estimator.
pub const MI_NEIGHBORS: usize = 3;

/// Distance from `sorted[pos]` to its k-th nearest other point.
fn kth_neighbor_distance(sorted: &[f64], pos: usize, k: usize) -> f64 {
    let x = sorted[pos];
    let (mut lo, mut hi) = (pos, pos + 1);
    let mut d = 0.0;
    for _ in 0..k {
        let dl = if lo > 0 { x - sorted[lo - 1] } else { f64::INFINITY };
        let dr = if hi < sorted.len() { sorted[hi] - x } else { f64::INFINITY };
        if dl <= dr {
            d = dl;
            lo -= 1;
        } else {
            d = dr;
            hi += 1;
        }
    }
    d
}

/// Points of `sorted` strictly closer than `r` to `x` (or equal to `x`
/// when `r` is 0), counting `x` itself.
fn count_within(sorted: &[f64], x: f64, r: f64) -> usize {
    let inside = |v: f64| {
        let d = (v - x).abs();
        d < r || d == 0.0
    };
    let start = sorted.partition_point(|&v| v < x);
    let mut count = 0;
    let mut i = start;
    while i < sorted.len() && inside(sorted[i]) {
        count += 1;
        i += 1;
    }
    let mut i = start;
    while i > 0 && inside(sorted[i - 1]) {
        count += 1;
        i -= 1;
    }
    count
}

/// Nearest-neighbor estimate of the mutual information (in nats) between a
/// continuous feature and a discrete label, after Ross (2014). Clamped at 0.
///
/// Labels that occur only once are ignored, as in the reference estimator.
/// A single usable class or a constant feature yields 0.
pub fn mutual_information_score(feature: &[f64], labels: &[u8], k_neighbors: usize) -> Result<f64> {
    if feature.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} feature values vs {} labels",
            feature.len(),
            labels.len()
        )));
    }
    if k_neighbors == 0 {
        return Err(Error::invalid("k_neighbors must be positive"));
    }
    if feature.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature for mutual information".into()));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        if l > 1 {
            return Err(Error::invalid(format!("binary label must be 0 or 1, got {l}")));
        }
        by_class[l as usize].push(i);
    }
    let used: Vec<&Vec<usize>> = by_class.iter().filter(|c| c.len() > 1).collect();
    if used.len() < 2 {
        log::debug!("mutual information with a single usable class is 0");
        return Ok(0.0);
    }
    if feature.iter().all(|&v| v == feature[0]) {
        return Ok(0.0);
    }

    let mut all: Vec<f64> = used.iter().flat_map(|c| c.iter().map(|&i| feature[i])).collect();
    all.sort_by(f64::total_cmp);
    let n = all.len();
    let (mut sum_k, mut sum_count, mut sum_m) = (0.0, 0.0, 0.0);
    for class in &used {
        let count = class.len();
        let k = k_neighbors.min(count - 1);
        let mut vals: Vec<f64> = class.iter().map(|&i| feature[i]).collect();
        vals.sort_by(f64::total_cmp);
        for pos in 0..count {
            let r = kth_neighbor_distance(&vals, pos, k);
            let m = count_within(&all, vals[pos], r);
            sum_k += digamma(k as f64);
            sum_count += digamma(count as f64);
            sum_m += digamma(m as f64);
        }
    }
    let nf = n as f64;
    let mi = digamma(nf) + sum_k / nf - sum_count / nf - sum_m / nf;
    Ok(mi.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub n_bootstrap: usize,
    pub mi_neighbors: usize,
    /// Penalty of the per-bootstrap Cox fits.
    pub cox: ElasticNetConfig,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            n_bootstrap: 100,
            mi_neighbors: MI_NEIGHBORS,
            cox: ElasticNetConfig::new(0.1, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub score: f64,
}

/// Features ordered by cumulative bootstrap score, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub features: Vec<RankedFeature>,
}

impl FeatureRanking {
    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.score).collect()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// The first `n` feature names.
    pub fn top(&self, n: usize) -> Result<Vec<String>> {
        if n == 0 || n > self.features.len() {
            return Err(Error::invalid(format!(
                "requested {n} features, ranking retains {}",
                self.features.len()
            )));
        }
        Ok(self.features[..n].iter().map(|f| f.name.clone()).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn bootstrap_scores(
    x: &Array2<f64>,
    target: &Target,
    rows: &[usize],
    cfg: &RankingConfig,
) -> Result<Vec<f64>> {
    let p = x.ncols();
    let xb = x.select(ndarray::Axis(0), rows);
    let raw = match target {
        Target::Labels(y) => {
            let yb: Vec<u8> = rows.iter().map(|&i| y[i]).collect();
            (0..p)
                .map(|j| mutual_information_score(&xb.column(j).to_vec(), &yb, cfg.mi_neighbors))
                .collect::<Result<Vec<_>>>()?
        }
        Target::Survival(t, e) => {
            let tb: Vec<f64> = rows.iter().map(|&i| t[i]).collect();
            let eb: Vec<bool> = rows.iter().map(|&i| e[i]).collect();
            match fit_cox_elasticnet(&xb, &tb, &eb, &cfg.cox) {
                Ok(fit) => fit.coefficients.iter().map(|c| c.abs()).collect(),
                Err(Error::NoEvents) => vec![0.0; p],
                Err(e) => return Err(e),
            }
        }
    };
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        return Ok(raw.iter().map(|s| s / total).collect());
    }
    // Uniform vote over features that vary within this sample; a feature
    // constant everywhere must never pick up score.
    let varies: Vec<bool> = (0..p)
        .map(|j| {
            let c = xb.column(j);
            c.iter().any(|&v| v != c[0])
        })
        .collect();
    let m = varies.iter().filter(|&&v| v).count();
    Ok(varies
        .iter()
        .map(|&v| if v { 1.0 / m as f64 } else { 0.0 })
        .collect())
}

enum Target {
    Labels(Vec<u8>),
    Survival(Vec<f64>, Vec<bool>),
}

/// Rank features by their cumulative normalized score over bootstrap
/// samples: mutual information for classification, absolute Cox
/// elastic-net coefficients for survival. Features that never score are
/// dropped.
pub fn bootstrap_rank_features(
    cohort: &Cohort,
    endpoint: &str,
    task: Task,
    cfg: &RankingConfig,
    seed: u64,
) -> Result<FeatureRanking> {
    if cfg.n_bootstrap == 0 {
        return Err(Error::invalid("n_bootstrap must be positive"));
    }
    if cohort.is_empty() {
        return Err(Error::invalid("cannot rank features of an empty cohort"));
    }
    let mismatch = |_| Error::invalid(format!("endpoint {endpoint} does not match task {task:?}"));
    let target = match task {
        Task::Classification => Target::Labels(cohort.labels(endpoint).map_err(mismatch)?),
        Task::Survival => {
            let (t, e) = cohort.survival(endpoint).map_err(mismatch)?;
            Target::Survival(t, e)
        }
    };
    let x = cohort.feature_matrix();
    let n = cohort.len();
    let per_sample = (0..cfg.n_bootstrap)
        .into_par_iter()
        .map(|b| {
            let mut r = rng::substream(seed, b as u64);
            let rows: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            bootstrap_scores(&x, &target, &rows, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cumulative = vec![0.0; cohort.n_features()];
    for scores in &per_sample {
        for (c, s) in cumulative.iter_mut().zip(scores) {
            *c += s;
        }
    }
    let mut features: Vec<RankedFeature> = cohort
        .feature_names()
        .iter()
        .zip(cumulative)
        .filter(|(_, s)| *s > 0.0)
        .map(|(name, score)| RankedFeature {
            name: name.clone(),
            score,
        })
        .collect();
    features.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.name.cmp(&b.name)));
    Ok(FeatureRanking { features })
}
