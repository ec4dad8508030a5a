//! Mini-batch training with Adam and per-epoch validation.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CascadeInput, Metrics, Model, PredictionRecord};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::ode::SolverSpec;
use crate::par::{self, Jobs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay; 1 keeps it constant.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lr_decay: 1.0,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            clip_norm: 5.0,
            patience: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::Config("clip_norm must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("adam betas must lie in [0, 1) and epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adaptive-moment optimizer state, one moment pair per tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(tensors: &[Tensor], cfg: &TrainConfig) -> Self {
        Adam {
            m: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            step: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
        }
    }

    pub fn update(&mut self, tensors: &mut [Tensor], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, t) in tensors.iter_mut().enumerate() {
            for (i, p) in t.data.iter_mut().enumerate() {
                let g = grads[k][i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
            }
        }
    }
}

fn clip(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-cascade loss seen during the epoch's updates.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_msle: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (1-based; 0 means the initial ones).
    pub best_epoch: usize,
}

/// Predictions, mean loss and metrics over a set of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<PredictionRecord>,
    pub mean_loss: f64,
    pub metrics: Metrics,
}

pub fn evaluate(model: &Model, inputs: &[CascadeInput], spec: &SolverSpec, jobs: Jobs) -> Result<Evaluation> {
    if inputs.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let values = par::try_map(inputs, jobs, |c| model.forward_values(c, spec))?;
    let records: Vec<PredictionRecord> = inputs
        .iter()
        .zip(&values)
        .map(|(c, v)| PredictionRecord::new(c.id.clone(), c.label, v.prediction))
        .collect();
    let mean_loss = values.iter().map(|v| v.loss).sum::<f64>() / values.len() as f64;
    let metrics = Metrics::from_records(&records)?;
    Ok(Evaluation { records, mean_loss, metrics })
}

/// Trains `model` on `train`. With a non-empty `val` the parameters with the
/// lowest validation MSLE are returned, otherwise the final ones.
/// Per-cascade gradients run in parallel and are summed in input order, so
/// results do not depend on `jobs`.
pub fn train(
    mut model: Model,
    train: &[CascadeInput],
    val: &[CascadeInput],
    cfg: &TrainConfig,
    spec: &SolverSpec,
    jobs: Jobs,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model.tensors, cfg);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32 - 1);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let items: Vec<&CascadeInput> = batch.iter().map(|&i| &train[i]).collect();
            let results = par::try_map(&items, jobs, |c| model.loss_and_gradient(c, spec))?;
            let mut grads: Vec<Vec<f64>> = model.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
            for (values, g) in &results {
                loss_sum += values.loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            clip(&mut grads, cfg.clip_norm);
            adam.update(&mut model.tensors, &grads, lr);
        }
        let train_loss = loss_sum / train.len() as f64;
        let (val_loss, val_msle) = if val.is_empty() {
            (None, None)
        } else {
            let e = evaluate(&model, val, spec, jobs)?;
            (Some(e.mean_loss), Some(e.metrics.msle))
        };
        let entry = EpochLog { epoch, train_loss, val_loss, val_msle };
        info!(
            "epoch {epoch}: train_loss {train_loss:.6}{}",
            val_msle.map(|m| format!(" val_msle {m:.6}")).unwrap_or_default()
        );
        on_epoch(&entry);
        log.push(entry);

        if let Some(m) = val_msle {
            if best.as_ref().is_none_or(|(b, _, _)| m < *b) {
                best = Some((m, epoch, model.tensors.clone()));
            } else if cfg.patience > 0 && epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, tensors)) => {
            model.tensors = tensors;
            epoch
        }
        None => log.len(),
    };
    Ok(TrainOutcome { model, log, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{toy_input, ModelConfig};

    fn small() -> ModelConfig {
        ModelConfig { hidden: 4, attention_dim: 4, head_hidden: 4, cascade_dim: 4, global_dim: 4, ..Default::default() }
    }

    fn inputs(cfg: &ModelConfig, n: u64) -> Vec<CascadeInput> {
        (0..n)
            .map(|i| {
                let mut c = toy_input(cfg, i);
                c.id = format!("t{i}");
                c.label = 3 + 4 * i;
                c
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let m = Model::new(small(), 2).unwrap();
        let before = m.tensors.clone();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 2, ..Default::default() };
        let out = train(m, &inputs(&small(), 4), &[], &cfg, &SolverSpec::default(), Jobs::SEQUENTIAL, |_| {}).unwrap();
        assert_eq!(out.model.tensors, before);
    }

    #[test]
    fn deterministic_across_job_counts() {
        let cfg = TrainConfig { epochs: 3, batch_size: 3, learning_rate: 1e-2, ..Default::default() };
        let data = inputs(&small(), 5);
        let val = inputs(&small(), 2);
        let run = |jobs| train(Model::new(small(), 2).unwrap(), &data, &val, &cfg, &SolverSpec::default(), jobs, |_| {}).unwrap();
        let (a, b) = (run(Jobs::SEQUENTIAL), run(Jobs(4)));
        assert_eq!(a.model.tensors, b.model.tensors);
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn loss_goes_down() {
        let cfg = TrainConfig { epochs: 30, batch_size: 4, learning_rate: 1e-2, ..Default::default() };
        let out = train(Model::new(small(), 2).unwrap(), &inputs(&small(), 4), &[], &cfg, &SolverSpec::default(), Jobs::ALL, |_| {}).unwrap();
        assert!(out.log.last().unwrap().train_loss < out.log[0].train_loss);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![vec![3.0, 4.0], vec![12.0]];
        assert_eq!(clip(&mut g, 5.0), 13.0);
        let n: f64 = g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_training_split_is_error() {
        let m = Model::new(small(), 2).unwrap();
        assert!(train(m, &[], &[], &TrainConfig::default(), &SolverSpec::default(), Jobs::ALL, |_| {}).is_err());
    }
}
