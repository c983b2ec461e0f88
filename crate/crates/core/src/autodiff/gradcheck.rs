//! Central finite-difference gradient checks.
//!
//! Only forward evaluations of the loss are used here, so the numeric
//! gradient is independent of the backward rules it validates.

use crate::error::Result;

use super::ParamSet;

/// Scale below which relative error falls back to absolute error.
pub const REL_ERR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
}

/// Compare `analytic` gradients against central differences of `loss` with
/// step `h`, over every entry of every parameter.
pub fn check_params<F>(params: &ParamSet, analytic: &ParamSet, h: f64, mut loss: F) -> Result<GradCheck>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    let mut probe = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let base = params.get(&name).expect("name").clone();
        let grad = analytic
            .grad(&name)
            .cloned()
            .unwrap_or_else(|| ndarray::Array2::zeros(base.raw_dim()));
        for (idx, (&b, &a)) in base.iter().zip(grad.iter()).enumerate() {
            let flat = probe.get_mut(&name).expect("name").as_slice_mut().expect("contiguous");
            flat[idx] = b + h;
            let up = loss(&probe)?;
            let flat = probe.get_mut(&name).expect("name").as_slice_mut().expect("contiguous");
            flat[idx] = b - h;
            let down = loss(&probe)?;
            let flat = probe.get_mut(&name).expect("name").as_slice_mut().expect("contiguous");
            flat[idx] = b;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(a, numeric);
            out.checked += 1;
            if err > out.max_rel_err || out.worst.is_none() {
                out.max_rel_err = err;
                out.worst = Some((name.clone(), idx, a, numeric));
            }
        }
    }
    Ok(out)
}

/// Build the loss with `forward`, backpropagate once, and compare against
/// central differences of the same forward.
pub fn check_forward<F>(params: &ParamSet, h: f64, forward: F) -> Result<GradCheck>
where
    F: Fn(&mut super::Graph, &ParamSet) -> Result<super::Tensor>,
{
    let mut g = super::Graph::new();
    let loss = forward(&mut g, params)?;
    g.backward(loss)?;
    let mut analytic = params.clone();
    g.write_grads(&mut analytic)?;
    check_params(params, &analytic, h, |p| {
        let mut g = super::Graph::new();
        let loss = forward(&mut g, p)?;
        Ok(g.scalar(loss))
    })
}
