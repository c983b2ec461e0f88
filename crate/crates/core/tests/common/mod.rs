//! Independent reference implementations used as test oracles. Nothing in
//! here calls into the library code paths it is compared against.

#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
}

/// Gaussian elimination with partial pivoting.
pub fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Full Newton for `(1/n)Σ logistic loss + ½·ridge·‖β‖²`; returns
/// `(intercept, β)`.
pub fn newton_logistic(x: &Array2<f64>, y: &[u8], ridge: f64) -> (f64, Vec<f64>) {
    let (n, p) = x.dim();
    let mut theta = vec![0.0; p + 1];
    for _ in 0..100 {
        let mut grad = vec![0.0; p + 1];
        let mut hess = vec![vec![0.0; p + 1]; p + 1];
        for i in 0..n {
            let mut row = vec![1.0];
            row.extend(x.row(i).iter());
            let eta: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
            let pr = sig(eta);
            let w = pr * (1.0 - pr);
            for a in 0..=p {
                grad[a] += (pr - f64::from(y[i])) * row[a] / n as f64;
                for b in 0..=p {
                    hess[a][b] += w * row[a] * row[b] / n as f64;
                }
            }
        }
        for a in 1..=p {
            grad[a] += ridge * theta[a];
            hess[a][a] += ridge;
        }
        let step = solve_linear(hess, grad);
        let mut max = 0.0f64;
        for a in 0..=p {
            theta[a] -= step[a];
            max = max.max(step[a].abs());
        }
        if max < 1e-13 {
            break;
        }
    }
    (theta[0], theta[1..].to_vec())
}

/// Full Newton for the Breslow Cox negative log partial likelihood, with
/// O(n²) risk-set enumeration.
pub fn newton_cox(x: &Array2<f64>, times: &[f64], events: &[bool]) -> Vec<f64> {
    let (n, p) = x.dim();
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let eta: Vec<f64> = (0..n)
            .map(|i| x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum())
            .collect();
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for i in 0..n {
            if !events[i] {
                continue;
            }
            let mut s0 = 0.0;
            let mut s1 = vec![0.0; p];
            let mut s2 = vec![vec![0.0; p]; p];
            for j in 0..n {
                if times[j] >= times[i] {
                    let w = eta[j].exp();
                    s0 += w;
                    for a in 0..p {
                        s1[a] += w * x[[j, a]];
                        for b in 0..p {
                            s2[a][b] += w * x[[j, a]] * x[[j, b]];
                        }
                    }
                }
            }
            for a in 0..p {
                grad[a] -= x[[i, a]] - s1[a] / s0;
                for b in 0..p {
                    hess[a][b] += s2[a][b] / s0 - s1[a] * s1[b] / (s0 * s0);
                }
            }
        }
        let step = solve_linear(hess, grad);
        let mut max = 0.0f64;
        for a in 0..p {
            beta[a] -= step[a];
            max = max.max(step[a].abs());
        }
        if max < 1e-13 {
            break;
        }
    }
    beta
}

/// `−Σ_{events}[η_i − log Σ_{T_j ≥ T_i} e^{η_j}]`, by enumeration.
pub fn brute_cox_nll_sum(eta: &[f64], times: &[f64], events: &[bool]) -> f64 {
    let n = eta.len();
    let mut total = 0.0;
    for i in 0..n {
        if events[i] {
            let s: f64 = (0..n).filter(|&j| times[j] >= times[i]).map(|j| eta[j].exp()).sum();
            total -= eta[i] - s.ln();
        }
    }
    total
}

/// Gradient of the Cox loss `−(1/n)·log PL` with respect to β, by enumeration.
pub fn brute_cox_gradient(x: &Array2<f64>, beta: &[f64], times: &[f64], events: &[bool]) -> Vec<f64> {
    let (n, p) = x.dim();
    let eta: Vec<f64> = (0..n)
        .map(|i| x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect();
    let mut grad = vec![0.0; p];
    for i in 0..n {
        if !events[i] {
            continue;
        }
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        for j in 0..n {
            if times[j] >= times[i] {
                let w = eta[j].exp();
                s0 += w;
                for a in 0..p {
                    s1[a] += w * x[[j, a]];
                }
            }
        }
        for a in 0..p {
            grad[a] -= (x[[i, a]] - s1[a] / s0) / n as f64;
        }
    }
    grad
}

/// O(n²) pair enumeration: returns (concordant half-units, comparable pairs).
pub fn brute_concordance(risks: &[f64], times: &[f64], events: &[bool]) -> (u64, u64) {
    let n = risks.len();
    let (mut halves, mut comparable) = (0u64, 0u64);
    for i in 0..n {
        if !events[i] {
            continue;
        }
        for j in 0..n {
            if times[i] < times[j] {
                comparable += 1;
                if risks[i] > risks[j] {
                    halves += 2;
                } else if risks[i] == risks[j] {
                    halves += 1;
                }
            }
        }
    }
    (halves, comparable)
}

/// Dense realization of `D_v^{-1/2} H W D_e^{-1} Hᵀ D_v^{-1/2} X Θ`.
pub fn dense_hypergraph_conv(
    n: usize,
    hyperedges: &[Vec<usize>],
    weights: &[f64],
    x: &Array2<f64>,
    theta: &Array2<f64>,
) -> Array2<f64> {
    let m = hyperedges.len();
    let mut h = Array2::<f64>::zeros((n, m));
    for (e, members) in hyperedges.iter().enumerate() {
        for &v in members {
            h[[v, e]] = 1.0;
        }
    }
    let w = Array2::from_diag(&ndarray::Array1::from(weights.to_vec()));
    let de: Vec<f64> = (0..m).map(|e| h.column(e).sum()).collect();
    let de_inv = Array2::from_diag(&ndarray::Array1::from(de.iter().map(|d| 1.0 / d).collect::<Vec<_>>()));
    let dv: Vec<f64> = (0..n)
        .map(|v| (0..m).map(|e| h[[v, e]] * weights[e]).sum())
        .collect();
    let dv_is = Array2::from_diag(&ndarray::Array1::from(dv.iter().map(|d| 1.0 / d.sqrt()).collect::<Vec<_>>()));
    dv_is
        .dot(&h)
        .dot(&w)
        .dot(&de_inv)
        .dot(&h.t())
        .dot(&dv_is)
        .dot(x)
        .dot(theta)
}

/// Dense realization of `D^{-1/2} A D^{-1/2} X Θ`.
pub fn dense_graph_conv(a: &Array2<f64>, x: &Array2<f64>, theta: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let dis = Array2::from_diag(&ndarray::Array1::from(d.iter().map(|v| 1.0 / v.sqrt()).collect::<Vec<_>>()));
    dis.dot(a).dot(&dis).dot(x).dot(theta)
}

/// Textbook two-group log-rank: enumerate distinct event times, count
/// at-risk and events per group directly.
pub fn hand_logrank(ta: &[f64], ea: &[bool], tb: &[f64], eb: &[bool]) -> f64 {
    let mut event_times: Vec<f64> = ta
        .iter()
        .zip(ea)
        .chain(tb.iter().zip(eb))
        .filter(|(_, e)| **e)
        .map(|(t, _)| *t)
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();
    let (mut num, mut var) = (0.0, 0.0);
    for &t in &event_times {
        let n1 = ta.iter().filter(|&&x| x >= t).count() as f64;
        let n2 = tb.iter().filter(|&&x| x >= t).count() as f64;
        let d1 = ta.iter().zip(ea).filter(|(x, e)| **x == t && **e).count() as f64;
        let d2 = tb.iter().zip(eb).filter(|(x, e)| **x == t && **e).count() as f64;
        let n = n1 + n2;
        let d = d1 + d2;
        num += d1 - d * n1 / n;
        if n > 1.0 {
            var += d * (n1 / n) * (n2 / n) * (n - d) / (n - 1.0);
        }
    }
    num * num / var
}
