use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

use super::ParamSet;
use crate::error::{Error, Result};

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Array2<f64>>,
    second: BTreeMap<String, Array2<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `params` from its stored gradient.
    /// Gradients are consumed.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        let grads = params.take_grads();
        let names: Vec<String> = params.names().map(str::to_string).collect();
        if let Some(missing) = names.iter().find(|n| !grads.contains_key(*n)) {
            return Err(Error::Graph(format!("no gradient for parameter {missing}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (lr, wd, b1, b2, eps) = (self.learning_rate, self.weight_decay, self.beta1, self.beta2, self.eps);
        for name in names {
            let g = &grads[&name];
            let theta = params.get_mut(&name).expect("listed name");
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            let v = self
                .second
                .entry(name)
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            Zip::from(theta).and(m).and(v).and(g).for_each(|th, m, v, &g| {
                *th -= lr * wd * *th;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *th -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}
