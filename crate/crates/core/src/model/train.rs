use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Model, ModelError, Result};
use crate::dataset::{Dataset, Split};
use crate::nn::{softmax, NnError, Tensor};
use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty on weights; biases and attention parameters are exempt.
    pub weight_decay: f64,
    pub seed: u64,
    pub lr_decay_factor: f64,
    /// Epochs (0-based) at whose start the rate is multiplied by
    /// `lr_decay_factor`. Empty means a single decay at 60% of `epochs`.
    pub decay_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 4,
            learning_rate: 0.0015,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            lr_decay_factor: 0.1,
            decay_epochs: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad(format!("lr_decay_factor must be > 0, got {}", self.lr_decay_factor));
        }
        Ok(())
    }

    pub fn effective_decay_epochs(&self) -> Vec<usize> {
        if self.decay_epochs.is_empty() {
            vec![(self.epochs as f64 * 0.6).round() as usize]
        } else {
            self.decay_epochs.clone()
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = self.effective_decay_epochs().iter().filter(|&&e| e <= epoch).count();
        self.learning_rate * self.lr_decay_factor.powi(steps as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub learning_rate: Vec<f64>,
    /// Mean loss of the very first minibatch, before any update.
    pub first_batch_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub learning_rate: f64,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Most likely class and the probability vector. Ties go to the lowest label.
pub fn predict(model: &Model, input: &Tensor) -> Result<(usize, Vec<f64>)> {
    let probs = softmax(&model.forward(input)?).into_data();
    Ok((argmax(&probs), probs))
}

/// `(true, predicted)` labels for every clip of a split, in clip order.
pub fn evaluate_split(model: &Model, dataset: &Dataset, split: Split) -> Result<Vec<(usize, usize)>> {
    dataset
        .indices(split)
        .par_iter()
        .map(|&i| {
            let clip = &dataset.clips[i];
            let (p, _) = predict(model, &model.clip_input(clip, &dataset.norm)?)?;
            Ok((clip.label, p))
        })
        .collect()
}

fn accuracy(pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().filter(|(t, p)| t == p).count() as f64 / pairs.len() as f64
}

fn diverged(e: ModelError, epoch: usize) -> ModelError {
    match e {
        ModelError::Nn(NnError::NonFinite(_)) => ModelError::Diverged { epoch },
        other => other,
    }
}

pub fn train(model: &mut Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    train_with(model, dataset, cfg, |_| {})
}

/// Minibatch SGD with momentum on softmax cross-entropy.
///
/// Per-sample gradients of a batch are computed in parallel, collected in
/// batch order and summed sequentially, so the result does not depend on the
/// number of worker threads.
pub fn train_with<F: FnMut(&EpochStats)>(
    model: &mut Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if dataset.n_classes() != model.config().n_classes {
        return Err(ModelError::Config(format!(
            "dataset has {} classes, model expects {}",
            dataset.n_classes(),
            model.config().n_classes
        )));
    }
    let train_idx = dataset.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(ModelError::Config("dataset has no training clips".into()));
    }
    let mut velocity: Vec<Tensor> = model.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let decayed: Vec<bool> = (0..velocity.len()).map(|i| model.is_decayed(i)).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_from(cfg.seed, &[tag::SHUFFLE, epoch as u64]));
        let (mut loss_sum, mut correct) = (0.0, 0usize);

        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let m: &Model = model;
            let results: Vec<(f64, bool, Vec<Tensor>)> = batch
                .par_iter()
                .map(|&i| {
                    let clip = &dataset.clips[i];
                    let x = m.clip_input(clip, &dataset.norm)?;
                    let (loss, probs, grads) = m.loss_and_grad(&x, clip.label)?;
                    Ok((loss, argmax(probs.data()) == clip.label, grads))
                })
                .collect::<Result<_>>()
                .map_err(|e| diverged(e, epoch))?;

            let mut batch_loss = 0.0;
            let mut total: Option<Vec<Tensor>> = None;
            for (loss, ok, grads) in results {
                batch_loss += loss;
                correct += ok as usize;
                match total.as_mut() {
                    None => total = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.axpy(1.0, g)?;
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            if epoch == 0 && b == 0 {
                history.first_batch_loss = batch_loss / batch.len() as f64;
            }
            loss_sum += batch_loss;

            let scale = 1.0 / batch.len() as f64;
            let grads = total.expect("batch is non-empty");
            for (i, (p, g)) in model.params_mut().iter_mut().zip(grads).enumerate() {
                let v = &mut velocity[i];
                let vd = v.data_mut();
                let pd = p.data();
                let wd = if decayed[i] { cfg.weight_decay } else { 0.0 };
                for ((vj, gj), pj) in vd.iter_mut().zip(g.data()).zip(pd) {
                    *vj = cfg.momentum * *vj + gj * scale + wd * pj;
                }
                p.axpy(-lr, v)?;
            }
            if !model.params().iter().all(Tensor::is_finite) {
                return Err(ModelError::Diverged { epoch });
            }
        }

        let test = evaluate_split(model, dataset, Split::Test).map_err(|e| diverged(e, epoch))?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            train_accuracy: correct as f64 / train_idx.len() as f64,
            test_accuracy: accuracy(&test),
            learning_rate: lr,
        };
        history.train_loss.push(stats.train_loss);
        history.train_accuracy.push(stats.train_accuracy);
        history.test_accuracy.push(stats.test_accuracy);
        history.learning_rate.push(lr);
        on_epoch(&stats);
    }
    Ok(history)
}
