//! Per-sequence stochastic training of sequence classifiers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{DropoutMasks, SequenceModel};
use super::ops::{class_weights, AdamState};
use super::{NetError, TrainConfig};

/// One training example: a feature sequence and its class id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub features: Vec<Vec<f64>>,
    pub label: usize,
}

fn sample_mask<R: Rng>(rng: &mut R, width: usize, p: f64) -> Vec<f64> {
    if p == 0.0 {
        return vec![1.0; width];
    }
    let keep = 1.0 - p;
    (0..width)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

fn sample_masks<R: Rng>(rng: &mut R, model: &SequenceModel, config: &TrainConfig) -> DropoutMasks {
    let d = model.shape.hidden;
    let mut input = Vec::with_capacity(model.shape.recurrent_layers);
    let mut recurrent = Vec::with_capacity(model.shape.recurrent_layers);
    for l in 0..model.shape.recurrent_layers {
        let k = if l == 0 { model.shape.input_dim } else { d };
        input.push(sample_mask(rng, k, config.dropout));
        recurrent.push(sample_mask(rng, d, config.recurrent_dropout));
    }
    DropoutMasks { input, recurrent }
}

/// Adam training with one update per sequence in seeded shuffled order.
/// Class weights follow inverse prevalence over `data`. Returns the mean
/// training loss per epoch.
pub fn train(
    model: &mut SequenceModel,
    data: &[LabeledSequence],
    config: &TrainConfig,
) -> Result<Vec<f64>, NetError> {
    config.validate()?;
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let n_classes = model.shape.n_classes;
    let mut counts = vec![0usize; n_classes];
    for s in data {
        if s.label >= n_classes {
            return Err(NetError::LabelOutOfRange { label: s.label, classes: n_classes });
        }
        if s.features.is_empty() {
            return Err(NetError::EmptySequence);
        }
        counts[s.label] += 1;
    }
    let weights = class_weights(&counts)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.params.len());
    let mut grad = vec![0.0; model.params.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let use_masks = config.dropout > 0.0 || config.recurrent_dropout > 0.0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, &idx) in order.iter().enumerate() {
            let sample = &data[idx];
            let masks = use_masks.then(|| sample_masks(&mut rng, model, config));
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss =
                model.loss_grad(&sample.features, sample.label, &weights, masks.as_ref(), &mut grad)?;
            if !loss.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch, sequence: step });
            }
            adam.step(&mut model.params, &grad, config.learning_rate);
            epoch_loss += loss;
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ModelShape;

    fn toy_dataset(n: usize, seed: u64) -> Vec<LabeledSequence> {
        // Class decided by the sign of the mean of feature 0; cleanly
        // separable with a margin.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = i % 2;
                let center = if label == 0 { -1.0 } else { 1.0 };
                let features = (0..5)
                    .map(|_| {
                        vec![
                            center + rng.gen_range(-0.3..0.3),
                            rng.gen_range(-0.5..0.5),
                        ]
                    })
                    .collect();
                LabeledSequence { features, label }
            })
            .collect()
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            dropout: 0.0,
            recurrent_dropout: 0.0,
            hidden: 8,
            recurrent_layers: 1,
            forward_layers: 1,
            attention: false,
            epochs: 30,
            learning_rate: 5e-3,
            seed: 3,
        }
    }

    fn accuracy(model: &SequenceModel, data: &[LabeledSequence]) -> f64 {
        let correct = data
            .iter()
            .filter(|s| {
                let probs = model.forward(&s.features).unwrap().probs;
                let argmax = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                argmax == s.label
            })
            .count();
        correct as f64 / data.len() as f64
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = toy_dataset(40, 1);
        let config = toy_config();
        let shape = ModelShape::from_config(&config, 2, 2).unwrap();
        let mut model = SequenceModel::new(shape, config.seed).unwrap();
        let history = train(&mut model, &data, &config).unwrap();
        assert_eq!(history.len(), 30);
        assert!(
            history.last().unwrap() < &history[0],
            "loss went from {} to {}",
            history[0],
            history.last().unwrap()
        );
        let acc = accuracy(&model, &data);
        assert!(acc >= 0.95, "training accuracy {acc}");
    }

    #[test]
    fn zero_epochs_change_nothing() {
        let data = toy_dataset(8, 2);
        let config = TrainConfig { epochs: 0, ..toy_config() };
        let shape = ModelShape::from_config(&config, 2, 2).unwrap();
        let mut model = SequenceModel::new(shape, 7).unwrap();
        let before = model.params.clone();
        let history = train(&mut model, &data, &config).unwrap();
        assert!(history.is_empty());
        assert_eq!(model.params, before);
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let data = toy_dataset(16, 5);
        let config = TrainConfig {
            dropout: 0.35,
            recurrent_dropout: 0.65,
            epochs: 4,
            ..toy_config()
        };
        let shape = ModelShape::from_config(&config, 2, 2).unwrap();
        let mut a = SequenceModel::new(shape, 11).unwrap();
        let mut b = SequenceModel::new(shape, 11).unwrap();
        let ha = train(&mut a, &data, &config).unwrap();
        let hb = train(&mut b, &data, &config).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let config = toy_config();
        let shape = ModelShape::from_config(&config, 2, 2).unwrap();
        let mut model = SequenceModel::new(shape, 0).unwrap();
        assert!(matches!(train(&mut model, &[], &config), Err(NetError::EmptyDataset)));
    }

    #[test]
    fn missing_class_is_rejected() {
        let data: Vec<LabeledSequence> = toy_dataset(10, 3)
            .into_iter()
            .map(|mut s| {
                s.label = 0;
                s
            })
            .collect();
        let config = toy_config();
        let shape = ModelShape::from_config(&config, 2, 2).unwrap();
        let mut model = SequenceModel::new(shape, 0).unwrap();
        assert!(matches!(train(&mut model, &data, &config), Err(NetError::EmptyClass(1))));
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut data = toy_dataset(4, 4);
        data[0].label = 9;
        let config = toy_config();
        let shape = ModelShape::from_config(&config, 2, 2).unwrap();
        let mut model = SequenceModel::new(shape, 0).unwrap();
        assert!(matches!(
            train(&mut model, &data, &config),
            Err(NetError::LabelOutOfRange { label: 9, .. })
        ));
    }

    #[test]
    fn dropout_training_still_learns_the_toy_task() {
        let data = toy_dataset(40, 6);
        let config = TrainConfig {
            dropout: 0.2,
            recurrent_dropout: 0.3,
            epochs: 40,
            ..toy_config()
        };
        let shape = ModelShape::from_config(&config, 2, 2).unwrap();
        let mut model = SequenceModel::new(shape, 1).unwrap();
        train(&mut model, &data, &config).unwrap();
        let acc = accuracy(&model, &data);
        assert!(acc >= 0.9, "training accuracy {acc}");
    }
}
