//! Adam training loop with validation-based early stopping.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{bce_loss, cox_partial_loss, GraphNetwork};
use crate::autodiff::{AdamState, Graph, ParamSet, Tensor};
use crate::cohort::Task;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Binary(Vec<u8>),
    Survival { times: Vec<f64>, events: Vec<bool> },
}

impl Target {
    pub fn len(&self) -> usize {
        match self {
            Target::Binary(y) => y.len(),
            Target::Survival { times, .. } => times.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Target::Binary(_) => Task::Classification,
            Target::Survival { .. } => Task::Survival,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Target {
        match self {
            Target::Binary(y) => Target::Binary(idx.iter().map(|&i| y[i]).collect()),
            Target::Survival { times, events } => Target::Survival {
                times: idx.iter().map(|&i| times[i]).collect(),
                events: idx.iter().map(|&i| events[i]).collect(),
            },
        }
    }

    fn has_events(&self) -> bool {
        match self {
            Target::Binary(_) => true,
            Target::Survival { events, .. } => events.iter().any(|&e| e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Mini-batch size; `None` trains on the whole cohort per step.
    pub batch_size: Option<usize>,
    /// L2 penalty inside the Cox loss.
    pub l2_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            epochs: 300,
            patience: 30,
            batch_size: None,
            l2_lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The network with the parameters of the best validation epoch (or
    /// the last epoch without validation data).
    pub network: GraphNetwork,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn loss_of(g: &mut Graph, out: Tensor, y: &Target, l2: f64) -> Result<Tensor> {
    match y {
        Target::Binary(labels) => bce_loss(g, out, labels),
        Target::Survival { times, events } => {
            let ps = if l2 > 0.0 { g.param_tensors() } else { Vec::new() };
            cox_partial_loss(g, out, times, events, l2, &ps)
        }
    }
}

fn evaluate_loss(net: &GraphNetwork, params: &ParamSet, x: &Array2<f64>, y: &Target, l2: f64) -> Result<f64> {
    let mut g = Graph::new();
    let out = net.forward_with(&mut g, x, params, None)?;
    let loss = loss_of(&mut g, out, y, l2)?;
    Ok(g.scalar(loss))
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Training(format!("diverged at epoch {epoch}: non-finite {what}")),
        other => other,
    }
}

/// Train with Adam. When validation data is given, training stops after
/// `patience` epochs without a lower validation loss and the best
/// parameters are restored.
pub fn train_network(
    net: GraphNetwork,
    x: &Array2<f64>,
    y: &Target,
    validation: Option<(&Array2<f64>, &Target)>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if x.nrows() != y.len() {
        return Err(Error::shape(format!("{} rows vs {} targets", x.nrows(), y.len())));
    }
    if y.task() != net.config.head {
        return Err(Error::invalid(format!(
            "target is {:?} but the network head is {:?}",
            y.task(),
            net.config.head
        )));
    }
    if !y.has_events() {
        return Err(Error::NoEvents);
    }
    if cfg.epochs == 0 {
        return Err(Error::invalid("epochs must be positive"));
    }
    if cfg.batch_size == Some(0) {
        return Err(Error::invalid("batch_size must be positive"));
    }
    let validation = validation.filter(|(_, vy)| vy.has_events() && !vy.is_empty());

    let n = x.nrows();
    let mut adam = AdamState::new(cfg.learning_rate, cfg.weight_decay);
    let mut params = net.params.clone();
    let mut shuffle_rng = rng::substream(seed, 1);
    let mut dropout_rng = rng::substream(seed, 2);
    let mut order: Vec<usize> = (0..n).collect();

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let batches: Vec<Vec<usize>> = match cfg.batch_size {
            Some(b) if b < n => {
                order.shuffle(&mut shuffle_rng);
                order.chunks(b).map(<[usize]>::to_vec).collect()
            }
            _ => vec![(0..n).collect()],
        };
        let mut epoch_loss = 0.0;
        let mut counted = 0usize;
        for batch in &batches {
            let by = y.subset(batch);
            if !by.has_events() {
                continue;
            }
            let bx = if batch.len() == n { x.clone() } else { x.select(Axis(0), batch) };
            let mut g = Graph::new();
            let step = (|| {
                let out = net.forward_with(&mut g, &bx, &params, Some(&mut dropout_rng))?;
                let loss = loss_of(&mut g, out, &by, cfg.l2_lambda)?;
                g.backward(loss)?;
                g.write_grads(&mut params)?;
                adam.step(&mut params)?;
                Ok(g.scalar(loss))
            })();
            let l = step.map_err(|e| diverged(epoch, e))?;
            epoch_loss += l * batch.len() as f64;
            counted += batch.len();
        }
        if counted == 0 {
            return Err(Error::Training(format!("epoch {epoch}: no batch could be trained")));
        }
        train_loss.push(epoch_loss / counted as f64);

        if let Some((vx, vy)) = validation {
            let l = evaluate_loss(&net, &params, vx, vy, cfg.l2_lambda).map_err(|e| diverged(epoch, e))?;
            val_loss.push(l);
            if l < best.0 {
                best = (l, epoch, params.clone());
            } else if epoch - best.1 >= cfg.patience {
                log::debug!("early stop at epoch {epoch}, best epoch {}", best.1);
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, params) = if validation.is_some() {
        (best.1, best.2)
    } else {
        (train_loss.len() - 1, params)
    };
    let mut network = net;
    network.params = params;
    network.params.clear_grads();
    Ok(TrainOutcome {
        network,
        train_loss,
        val_loss,
        best_epoch,
        stopped_early,
    })
}
