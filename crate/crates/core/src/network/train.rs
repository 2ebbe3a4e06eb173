use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, Model, OptimizerState};
use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Mean training loss per epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

pub fn train(model: &mut Model, data: &GroupedDataset, config: &TrainConfig) -> Result<TrainLog> {
    train_on(model, data.features(), data.dim(), data.labels(), config)
}

/// Mini-batch Adam over row-major `features` (`dim` columns per row).
pub fn train_on(
    model: &mut Model,
    features: &[f64],
    dim: usize,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<TrainLog> {
    if labels.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if features.len() != labels.len() * dim {
        return Err(Error::dim("train", &[labels.len(), dim], &[features.len()]));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok(log);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptimizerState::new(model, config.adam);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = gather(features, dim, labels, chunk)?;
            let (loss, grads) = model.loss_and_gradients(&x, &y)?;
            adam_step(model, &mut state, &grads)?;
            total += loss * chunk.len() as f64;
        }
        let mean = total / labels.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        log.epoch_losses.push(mean);
    }
    Ok(log)
}

pub(crate) fn gather(
    features: &[f64],
    dim: usize,
    labels: &[usize],
    rows: &[usize],
) -> Result<(Tensor, Vec<usize>)> {
    let mut x = Vec::with_capacity(rows.len() * dim);
    let mut y = Vec::with_capacity(rows.len());
    for &r in rows {
        x.extend_from_slice(&features[r * dim..(r + 1) * dim]);
        y.push(labels[r]);
    }
    Ok((Tensor::matrix(rows.len(), dim, x)?, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use rand::Rng;

    fn separable(n: usize, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let sign = if label == 1 { 1.0 } else { -1.0 };
            x.push(sign * rng.random_range(0.5..2.0));
            x.push(rng.random_range(-1.0..1.0));
            y.push(label);
        }
        (x, y)
    }

    fn accuracy(model: &Model, x: &[f64], y: &[usize]) -> f64 {
        let t = Tensor::matrix(y.len(), 2, x.to_vec()).unwrap();
        let pred = model.predict(&t).unwrap();
        pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (x, y) = separable(20, 0);
        let mut m = Model::new(&Architecture::default_mlp(2, 2), 0).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        train_on(&mut m, &x, 2, &y, &cfg).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn separable_set_is_learned() {
        let (x, y) = separable(200, 1);
        let mut m = Model::new(&Architecture::default_mlp(2, 2), 5).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 16,
            seed: 3,
            adam: AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
        };
        let log = train_on(&mut m, &x, 2, &y, &cfg).unwrap();
        assert_eq!(log.epoch_losses.len(), 20);
        assert!(accuracy(&m, &x, &y) >= 0.95);
    }

    #[test]
    fn same_seed_same_weights() {
        let (x, y) = separable(64, 2);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 8,
            seed: 11,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = Model::new(&Architecture::default_mlp(2, 2), 7).unwrap();
            train_on(&mut m, &x, 2, &y, &cfg).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let mut m = Model::new(&Architecture::default_mlp(2, 2), 0).unwrap();
        assert!(matches!(
            train_on(&mut m, &[], 2, &[], &TrainConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn masks_persist_through_training() {
        let (x, y) = separable(64, 4);
        let mut m = Model::new(&Architecture::default_mlp(2, 2), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mask: Vec<u8> = (0..m.num_weights())
            .map(|_| rng.random_range(0..2))
            .collect();
        m.set_flat_masks(&mask).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            seed: 0,
            ..TrainConfig::default()
        };
        train_on(&mut m, &x, 2, &y, &cfg).unwrap();
        for (w, k) in m.flat_weights().iter().zip(&mask) {
            if *k == 0 {
                assert_eq!(*w, 0.0);
            }
        }
    }
}
