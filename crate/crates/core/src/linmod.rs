//! Elastic-net logistic regression and Cox proportional hazards.
//!
//! Both fits share one solver: at each outer iteration the smooth loss is
//! replaced by a second-order expansion in the linear predictor η = Xβ (+b)
//! with a diagonal curvature, the penalized quadratic is minimized by cyclic
//! coordinate descent with soft-thresholding, and the step towards that
//! minimizer is backtracked until the true penalized objective does not
//! increase.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, softplus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetConfig {
    pub alpha: f64,
    pub l1_ratio: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            l1_ratio: 0.5,
            max_iter: 1000,
            tol: 1e-7,
        }
    }
}

impl ElasticNetConfig {
    pub fn new(alpha: f64, l1_ratio: f64) -> Self {
        Self {
            alpha,
            l1_ratio,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(Error::invalid(format!("l1_ratio must lie in [0, 1], got {}", self.l1_ratio)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol must be positive"));
        }
        Ok(())
    }

    /// `α·(l1_ratio·‖β‖₁ + ½(1−l1_ratio)·‖β‖₂²)`
    pub fn penalty(&self, beta: &[f64]) -> f64 {
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        let l2: f64 = beta.iter().map(|b| b * b).sum();
        self.alpha * (self.l1_ratio * l1 + 0.5 * (1.0 - self.l1_ratio) * l2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModelFit {
    pub coefficients: Vec<f64>,
    /// Present for logistic fits only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    pub converged: bool,
    pub n_iter: usize,
    /// Penalized objective after each outer iteration, starting from the
    /// initial point.
    #[serde(default, skip_serializing)]
    pub objective_trace: Vec<f64>,
}

impl LinearModelFit {
    /// Coefficients keyed by feature name, for inspection.
    pub fn named(&self, names: &[String]) -> Result<std::collections::BTreeMap<String, f64>> {
        if names.len() != self.coefficients.len() {
            return Err(Error::shape(format!(
                "{} names for {} coefficients",
                names.len(),
                self.coefficients.len()
            )));
        }
        Ok(names.iter().cloned().zip(self.coefficients.iter().copied()).collect())
    }

    fn linear_predictor(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::shape(format!(
                "model has {} coefficients, input has {} columns",
                self.coefficients.len(),
                x.ncols()
            )));
        }
        let b = self.intercept.unwrap_or(0.0);
        Ok(x.rows()
            .into_iter()
            .map(|r| r.iter().zip(&self.coefficients).map(|(a, c)| a * c).sum::<f64>() + b)
            .collect())
    }
}

/// Smooth part of the objective as a function of the linear predictor.
trait Loss {
    fn value(&self, eta: &[f64]) -> f64;
    /// Gradient and diagonal curvature with respect to η.
    fn derivatives(&self, eta: &[f64]) -> (Vec<f64>, Vec<f64>);
}

struct LogisticLoss<'a> {
    y: &'a [u8],
}

impl Loss for LogisticLoss<'_> {
    fn value(&self, eta: &[f64]) -> f64 {
        let n = eta.len() as f64;
        eta.iter()
            .zip(self.y)
            .map(|(&e, &y)| if y == 1 { softplus(-e) } else { softplus(e) })
            .sum::<f64>()
            / n
    }

    fn derivatives(&self, eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = eta.len() as f64;
        eta.iter()
            .zip(self.y)
            .map(|(&e, &y)| {
                let p = sigmoid(e);
                ((p - f64::from(y)) / n, (p * (1.0 - p)).max(1e-10) / n)
            })
            .unzip()
    }
}

/// Risk-set bookkeeping for the Breslow partial likelihood.
struct CoxLoss<'a> {
    events: &'a [bool],
    /// Patients by decreasing time.
    order: Vec<usize>,
    /// `group_end[k]` for position k in `order`: one past the last position
    /// sharing its time.
    group_end: Vec<usize>,
}

impl<'a> CoxLoss<'a> {
    fn new(times: &'a [f64], events: &'a [bool]) -> Self {
        let n = times.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]).then(a.cmp(&b)));
        let mut group_end = vec![0; n];
        let mut pos = 0;
        while pos < n {
            let mut end = pos;
            while end < n && times[order[end]] == times[order[pos]] {
                end += 1;
            }
            group_end[pos..end].fill(end);
            pos = end;
        }
        Self { events, order, group_end }
    }

    /// `log Σ_{j ∈ R_i} exp(η_j)` per patient, shifted by `shift`.
    fn log_risk_sets(&self, eta: &[f64], shift: f64) -> Vec<f64> {
        let n = eta.len();
        let mut out = vec![0.0; n];
        let mut cum = 0.0;
        let mut pos = 0;
        while pos < n {
            let end = self.group_end[pos];
            for &i in &self.order[pos..end] {
                cum += (eta[i] - shift).exp();
            }
            let v = cum.ln();
            for &i in &self.order[pos..end] {
                out[i] = v;
            }
            pos = end;
        }
        out
    }
}

impl Loss for CoxLoss<'_> {
    fn value(&self, eta: &[f64]) -> f64 {
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lrs = self.log_risk_sets(eta, shift);
        let n = eta.len() as f64;
        -(0..eta.len())
            .filter(|&i| self.events[i])
            .map(|i| eta[i] - shift - lrs[i])
            .sum::<f64>()
            / n
    }

    fn derivatives(&self, eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = eta.len();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lrs = self.log_risk_sets(eta, shift);
        // Walk increasing time accumulating Σ 1/S_i and Σ 1/S_i² over events
        // whose risk set contains the current patient.
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        let mut end = n;
        while end > 0 {
            let t_end = end;
            let mut start = end - 1;
            while start > 0 && self.group_end[start - 1] == t_end {
                start -= 1;
            }
            for &i in &self.order[start..t_end] {
                if self.events[i] {
                    let inv = (-lrs[i]).exp();
                    s1 += inv;
                    s2 += inv * inv;
                }
            }
            for &k in &self.order[start..t_end] {
                let r = (eta[k] - shift).exp();
                let e = if self.events[k] { 1.0 } else { 0.0 };
                grad[k] = -(e - r * s1) / n as f64;
                hess[k] = (r * s1 - r * r * s2) / n as f64;
            }
            end = start;
        }
        (grad, hess)
    }
}

fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn predictor(x: ArrayView2<f64>, beta: &[f64], intercept: f64) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() + intercept)
        .collect()
}

fn solve(x: ArrayView2<f64>, loss: &dyn Loss, cfg: &ElasticNetConfig, fit_intercept: bool, init_intercept: f64) -> LinearModelFit {
    let (n, p) = x.dim();
    let l1 = cfg.alpha * cfg.l1_ratio;
    let l2 = cfg.alpha * (1.0 - cfg.l1_ratio);
    let cols: Vec<ArrayView1<f64>> = (0..p).map(|j| x.column(j)).collect();

    let mut beta = vec![0.0; p];
    let mut b0 = if fit_intercept { init_intercept } else { 0.0 };
    let mut eta = predictor(x, &beta, b0);
    let mut obj = loss.value(&eta) + cfg.penalty(&beta);
    let mut trace = vec![obj];
    let mut converged = false;
    let mut n_iter = 0;

    while n_iter < cfg.max_iter {
        n_iter += 1;
        let (grad, hess) = loss.derivatives(&eta);
        let mut new_beta = beta.clone();
        let mut new_b0 = b0;
        // q = gradient of the quadratic model w.r.t. η at the inner iterate
        let mut q = grad.clone();
        let col_curv: Vec<f64> = cols
            .iter()
            .map(|c| c.iter().zip(&hess).map(|(xv, w)| w * xv * xv).sum())
            .collect();
        let hess_sum: f64 = hess.iter().sum();

        for _ in 0..cfg.max_iter.max(100) {
            let mut max_change: f64 = 0.0;
            if fit_intercept && hess_sum > 0.0 {
                let step = -q.iter().sum::<f64>() / hess_sum;
                if step != 0.0 {
                    new_b0 += step;
                    for (qk, wk) in q.iter_mut().zip(&hess) {
                        *qk += wk * step;
                    }
                    max_change = max_change.max(step.abs());
                }
            }
            for j in 0..p {
                let denom = col_curv[j] + l2;
                if denom <= 0.0 {
                    continue;
                }
                let gj: f64 = cols[j].iter().zip(&q).map(|(xv, qk)| xv * qk).sum();
                let old = new_beta[j];
                let updated = soft_threshold(col_curv[j] * old - gj, l1) / denom;
                let delta = updated - old;
                if delta != 0.0 {
                    new_beta[j] = updated;
                    for ((qk, wk), xv) in q.iter_mut().zip(&hess).zip(cols[j].iter()) {
                        *qk += wk * xv * delta;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            if max_change < 0.1 * cfg.tol {
                break;
            }
        }

        // Backtrack along the proximal Newton direction.
        let dir: Vec<f64> = new_beta.iter().zip(&beta).map(|(a, b)| a - b).collect();
        let dir_b0 = new_b0 - b0;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(&dir).map(|(b, d)| b + t * d).collect();
            let cand_b0 = b0 + t * dir_b0;
            let cand_eta = predictor(x, &cand, cand_b0);
            let cand_obj = loss.value(&cand_eta) + cfg.penalty(&cand);
            if cand_obj.is_finite() && cand_obj <= obj {
                accepted = Some((cand, cand_b0, cand_eta, cand_obj));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_b0, cand_eta, cand_obj)) = accepted else {
            // no descent possible along this direction: stationary to
            // working precision
            converged = true;
            break;
        };
        let change = cand
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold((cand_b0 - b0).abs(), f64::max);
        beta = cand;
        b0 = cand_b0;
        eta = cand_eta;
        obj = cand_obj;
        trace.push(obj);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("elastic-net solver stopped after {n_iter} iterations without converging");
    }
    debug_assert_eq!(eta.len(), n);
    LinearModelFit {
        coefficients: beta,
        intercept: fit_intercept.then_some(b0),
        converged,
        n_iter,
        objective_trace: trace,
    }
}

fn check_rows(x: &Array2<f64>, len: usize, what: &str) -> Result<()> {
    if x.nrows() != len {
        return Err(Error::shape(format!("{} rows in X, {len} {what}", x.nrows())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("X contains non-finite values"));
    }
    Ok(())
}

/// Elastic-net logistic regression with an unpenalized intercept.
pub fn fit_logistic_elasticnet(x: &Array2<f64>, y: &[u8], cfg: &ElasticNetConfig) -> Result<LinearModelFit> {
    cfg.validate()?;
    check_rows(x, y.len(), "labels")?;
    if y.iter().any(|&l| l > 1) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let pos = y.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::invalid("logistic fit needs both classes"));
    }
    let rate = pos as f64 / y.len() as f64;
    let init = (rate / (1.0 - rate)).ln();
    Ok(solve(x.view(), &LogisticLoss { y }, cfg, true, init))
}

/// Elastic-net Cox regression (Breslow ties), minimizing
/// `−(1/n)·log PL(β) + penalty`.
pub fn fit_cox_elasticnet(x: &Array2<f64>, times: &[f64], events: &[bool], cfg: &ElasticNetConfig) -> Result<LinearModelFit> {
    cfg.validate()?;
    check_rows(x, times.len(), "times")?;
    if events.len() != times.len() {
        return Err(Error::shape("times and events differ in length"));
    }
    if !events.iter().any(|e| *e) {
        return Err(Error::NoEvents);
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("times must be finite"));
    }
    let loss = CoxLoss::new(times, events);
    Ok(solve(x.view(), &loss, cfg, false, 0.0))
}

/// Largest double below 1; sigmoid saturates to exactly 1.0 past η ≈ 37.
const PROB_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Positive-class probabilities, kept strictly inside (0, 1).
pub fn predict_logistic(fit: &LinearModelFit, x: &Array2<f64>) -> Result<Vec<f64>> {
    Ok(fit
        .linear_predictor(x.view())?
        .into_iter()
        .map(|e| sigmoid(e).clamp(f64::MIN_POSITIVE, PROB_MAX))
        .collect())
}

/// Linear predictor β·x; larger means higher hazard.
pub fn predict_cox_risk(fit: &LinearModelFit, x: &Array2<f64>) -> Result<Vec<f64>> {
    fit.linear_predictor(x.view())
}

/// `−(1/n)·log PL` at the given linear predictor (Breslow ties).
pub fn cox_loss(eta: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    if eta.len() != times.len() || eta.len() != events.len() {
        return Err(Error::shape("cox loss inputs differ in length"));
    }
    if !events.iter().any(|e| *e) {
        return Err(Error::NoEvents);
    }
    Ok(CoxLoss::new(times, events).value(eta))
}

/// Mean logistic loss at the given linear predictor.
pub fn logistic_loss(eta: &[f64], y: &[u8]) -> Result<f64> {
    if eta.len() != y.len() {
        return Err(Error::shape("logistic loss inputs differ in length"));
    }
    Ok(LogisticLoss { y }.value(eta))
}
