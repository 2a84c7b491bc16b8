use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Loss, NetworkModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Minibatch SGD on mean cross-entropy. Sample order is reshuffled every
/// epoch from `config.seed`, so identical inputs give identical weights.
pub fn train(
    model: &mut NetworkModel,
    images: &[Tensor],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<TrainReport> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if images.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let classes = model.class_count();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange {
            label,
            class_count: classes,
        });
    }
    for image in images {
        model.check_input(image)?;
    }
    let batch_size = config.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(batch_size) {
            let mut acc: Option<Vec<super::LayerGradient>> = None;
            for &idx in batch {
                let trace = model.forward_unchecked(images[idx].data());
                let (loss, grad_logits) = Loss::CrossEntropy { label: labels[idx] }
                    .evaluate(&trace.logits, &trace.probabilities)?;
                total += loss;
                let (_, grads) = model.backward(&trace, &grad_logits, true);
                let grads = grads.expect("parameter gradients requested");
                match acc.as_mut() {
                    None => acc = Some(grads),
                    Some(a) => {
                        for (sum, g) in a.iter_mut().zip(grads) {
                            sum.weights
                                .iter_mut()
                                .zip(g.weights)
                                .for_each(|(s, v)| *s += v);
                            sum.bias.iter_mut().zip(g.bias).for_each(|(s, v)| *s += v);
                        }
                    }
                }
            }
            let step = config.learning_rate / batch.len() as f64;
            if let Some(acc) = acc {
                for (layer, g) in model.layers.iter_mut().zip(acc) {
                    layer
                        .weights
                        .iter_mut()
                        .zip(g.weights)
                        .for_each(|(w, d)| *w -= step * d);
                    layer
                        .bias
                        .iter_mut()
                        .zip(g.bias)
                        .for_each(|(b, d)| *b -= step * d);
                }
            }
        }
        epoch_losses.push(total / images.len() as f64);
    }

    Ok(TrainReport {
        epoch_losses,
        train_accuracy: accuracy(model, images, labels),
    })
}

/// Fraction of `images` whose predicted class equals the label.
pub fn accuracy(model: &NetworkModel, images: &[Tensor], labels: &[usize]) -> f64 {
    if images.is_empty() {
        return 0.0;
    }
    let correct = images
        .iter()
        .zip(labels)
        .filter(|(x, &y)| model.forward_unchecked(x.data()).predicted == y)
        .count();
    correct as f64 / images.len() as f64
}
