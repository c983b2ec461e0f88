//! Evaluation statistics: classification metrics, Harrell's c-index,
//! Kaplan-Meier curves, the two-group log-rank test and risk stratification.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specificity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_index: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_lengths(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a} scores vs {b} labels")));
    }
    Ok(())
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the Mann-Whitney statistic; tied scores
/// across classes earn half credit.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len(), "auc")?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC is undefined with a single class"));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Thresholded metrics plus AUC. A score at or above `threshold` is a
/// positive prediction. With a single class present the AUC is left empty.
pub fn classification_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    check_lengths(scores.len(), labels.len(), "classification metrics")?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let auc = match auc(scores, labels) {
        Ok(a) => Some(a),
        Err(e) => {
            log::warn!("{e}");
            None
        }
    };
    Ok(MetricsReport {
        auc,
        sensitivity: Some(ratio(tp, tp + fn_)),
        specificity: Some(ratio(tn, tn + fp)),
        f1: Some(ratio(2 * tp, 2 * tp + fp + fn_)),
        accuracy: Some(ratio(tp + tn, scores.len())),
        c_index: None,
    })
}

/// Exact concordance counts. `concordant_halves` counts concordant pairs
/// twice and tied-risk pairs once, so the ratio is exact in integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concordance {
    pub concordant_halves: u64,
    pub comparable: u64,
}

impl Concordance {
    pub fn value(&self) -> f64 {
        self.concordant_halves as f64 / (2.0 * self.comparable as f64)
    }
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, i: usize) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted entries with index < i.
    fn prefix(&self, i: usize) -> u64 {
        let mut i = i;
        let mut s = 0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's concordance counts in O(n log n).
///
/// A pair (i, j) is comparable when patient i had an event and `T_i < T_j`.
/// It is concordant when `risk_i > risk_j`; tied risks score one half.
pub fn concordance(risks: &[f64], times: &[f64], events: &[bool]) -> Result<Concordance> {
    let n = risks.len();
    if times.len() != n || events.len() != n {
        return Err(Error::shape("c-index inputs differ in length"));
    }
    if risks.iter().chain(times).any(|v| !v.is_finite()) {
        return Err(Error::invalid("c-index inputs must be finite"));
    }
    // dense rank of each risk
    let mut sorted: Vec<f64> = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank: Vec<usize> = risks
        .iter()
        .map(|r| sorted.binary_search_by(|x| x.total_cmp(r)).expect("present"))
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));

    let mut tree = Fenwick::new(sorted.len());
    let mut inserted = 0u64;
    let mut out = Concordance {
        concordant_halves: 0,
        comparable: 0,
    };
    let mut pos = 0;
    while pos < n {
        let t = times[order[pos]];
        let mut end = pos;
        while end < n && times[order[end]] == t {
            end += 1;
        }
        for &i in &order[pos..end] {
            if !events[i] {
                continue;
            }
            let below = tree.prefix(rank[i]);
            let tied = tree.prefix(rank[i] + 1) - below;
            out.comparable += inserted;
            out.concordant_halves += 2 * below + tied;
        }
        for &i in &order[pos..end] {
            tree.add(rank[i]);
            inserted += 1;
        }
        pos = end;
    }
    Ok(out)
}

pub fn concordance_index(risks: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    let c = concordance(risks, times, events)?;
    if c.comparable == 0 {
        return Err(Error::invalid("no comparable pairs for the c-index"));
    }
    Ok(c.value())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmRow {
    pub time: f64,
    /// Survival just after `time`.
    pub survival: f64,
    pub at_risk: usize,
    pub events: usize,
    pub censored: usize,
}

/// Product-limit survival curve, one row per distinct observed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub rows: Vec<KmRow>,
}

impl KmCurve {
    pub fn event_times(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.events > 0).map(|r| r.time).collect()
    }

    /// Survival after each event time.
    pub fn survival_prob(&self) -> Vec<f64> {
        self.rows.iter().filter(|r| r.events > 0).map(|r| r.survival).collect()
    }

    pub fn at_risk(&self) -> Vec<usize> {
        self.rows.iter().filter(|r| r.events > 0).map(|r| r.at_risk).collect()
    }

    pub fn censor_times(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|r| std::iter::repeat_n(r.time, r.censored))
            .collect()
    }

    /// S(t), right-continuous; 1 before the first event.
    pub fn survival_at(&self, t: f64) -> f64 {
        self.rows
            .iter()
            .take_while(|r| r.time <= t)
            .last()
            .map_or(1.0, |r| r.survival)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "time,survival,at_risk,censored")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.time, r.survival, r.at_risk, r.censored)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

/// Kaplan-Meier estimate. Patients censored at an event time stay in the
/// risk set for that event.
pub fn km_estimate(times: &[f64], events: &[bool]) -> Result<KmCurve> {
    if times.is_empty() {
        return Err(Error::invalid("Kaplan-Meier needs at least one patient"));
    }
    if times.len() != events.len() {
        return Err(Error::shape("times and events differ in length"));
    }
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = times.len();
    let mut surv = 1.0;
    let mut rows = Vec::new();
    let mut pos = 0;
    while pos < idx.len() {
        let t = times[idx[pos]];
        let mut end = pos;
        let (mut d, mut c) = (0, 0);
        while end < idx.len() && times[idx[end]] == t {
            if events[idx[end]] {
                d += 1;
            } else {
                c += 1;
            }
            end += 1;
        }
        if d > 0 {
            surv *= (at_risk - d) as f64 / at_risk as f64;
        }
        rows.push(KmRow {
            time: t,
            survival: surv,
            at_risk,
            events: d,
            censored: c,
        });
        at_risk -= d + c;
        pos = end;
    }
    Ok(KmCurve { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRankResult {
    pub chi_square: f64,
    pub p_value: f64,
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_df1_sf(chi_square: f64) -> f64 {
    erfc((chi_square / 2.0).sqrt())
}

/// Two-group log-rank test.
pub fn logrank_test(times_a: &[f64], events_a: &[bool], times_b: &[f64], events_b: &[bool]) -> Result<LogRankResult> {
    if times_a.is_empty() || times_b.is_empty() {
        return Err(Error::invalid("log-rank needs two non-empty groups"));
    }
    if times_a.len() != events_a.len() || times_b.len() != events_b.len() {
        return Err(Error::shape("times and events differ in length"));
    }
    let mut all: Vec<(f64, bool, bool)> = times_a
        .iter()
        .zip(events_a)
        .map(|(&t, &e)| (t, e, true))
        .chain(times_b.iter().zip(events_b).map(|(&t, &e)| (t, e, false)))
        .collect();
    if !all.iter().any(|x| x.1) {
        return Err(Error::NoEvents);
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut n = all.len() as f64;
    let mut n_a = times_a.len() as f64;
    let (mut o_minus_e, mut var) = (0.0, 0.0);
    let mut pos = 0;
    while pos < all.len() {
        let t = all[pos].0;
        let mut end = pos;
        let (mut d, mut d_a, mut leave, mut leave_a) = (0.0, 0.0, 0.0, 0.0);
        while end < all.len() && all[end].0 == t {
            let (_, e, in_a) = all[end];
            leave += 1.0;
            if in_a {
                leave_a += 1.0;
            }
            if e {
                d += 1.0;
                if in_a {
                    d_a += 1.0;
                }
            }
            end += 1;
        }
        if d > 0.0 {
            // written symmetrically in the two groups so swapping them only
            // flips the sign of O − E
            let n_b = n - n_a;
            let d_b = d - d_a;
            o_minus_e += (d_a * n_b - d_b * n_a) / n;
            if n > 1.0 {
                var += d * (n_a * n_b) * (n - d) / (n * n * (n - 1.0));
            }
        }
        n -= leave;
        n_a -= leave_a;
        pos = end;
    }
    let chi_square = if var > 0.0 { o_minus_e * o_minus_e / var } else { 0.0 };
    Ok(LogRankResult {
        chi_square,
        p_value: chi2_df1_sf(chi_square),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratification {
    pub low: Vec<usize>,
    pub high: Vec<usize>,
}

impl Stratification {
    /// True when one of the groups is empty.
    pub fn is_degenerate(&self) -> bool {
        self.low.is_empty() || self.high.is_empty()
    }
}

/// Split patients into a high-risk group (`risk ≥ threshold`) and the rest.
pub fn stratify_by_risk(risks: &[f64], threshold: f64) -> Stratification {
    let (high, low): (Vec<usize>, Vec<usize>) = (0..risks.len()).partition(|&i| risks[i] >= threshold);
    let s = Stratification { low, high };
    if s.is_degenerate() {
        log::warn!("risk stratification at {threshold} left one group empty");
    }
    s
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Mean across folds of the median validation risk of each fold.
pub fn validation_risk_threshold(validation_risks_per_fold: &[Vec<f64>]) -> Result<f64> {
    if validation_risks_per_fold.is_empty() {
        return Err(Error::invalid("no validation folds"));
    }
    let medians = validation_risks_per_fold
        .iter()
        .map(|f| median(f).ok_or_else(|| Error::invalid("empty validation fold")))
        .collect::<Result<Vec<_>>>()?;
    Ok(medians.iter().sum::<f64>() / medians.len() as f64)
}
