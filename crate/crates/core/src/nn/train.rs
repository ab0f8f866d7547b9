// SPDX-License-Identifier: Apache-2.0

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use super::{sgd_step, Gradients, ModelParameters, NnError};

/// Model sizes and training settings shared by every trainable component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Rescale each example's gradient to at most this L2 norm.
    pub clip: Option<f64>,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            dim: 32,
            hidden: 32,
            heads: 2,
            layers: 1,
            epochs: 100,
            lr: 0.05,
            seed: 0,
            shuffle: true,
            clip: Some(5.0),
        }
    }
}

/// Parameters after training plus the mean loss of every epoch.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: ModelParameters,
    pub epoch_losses: Vec<f64>,
}

pub fn grad_norm(grads: &Gradients) -> f64 {
    grads
        .iter()
        .flat_map(|(_, g)| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Per-example SGD for `hyper.epochs` epochs. `example` returns the loss and
/// gradient of one example at the current parameters. Returns the mean loss
/// of every epoch, measured while training.
pub fn train_loop<E, F>(
    params: &mut ModelParameters,
    examples: &[E],
    hyper: &Hyper,
    mut example: F,
) -> Result<Vec<f64>, NnError>
where
    F: FnMut(&ModelParameters, &E) -> Result<(f64, Gradients), NnError>,
{
    let mut rng = SplitMix64::seed_from_u64(hyper.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut losses = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        if hyper.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for &i in &order {
            let (loss, mut grads) = example(params, &examples[i])?;
            total += loss;
            if let Some(limit) = hyper.clip {
                let norm = grad_norm(&grads);
                if norm > limit {
                    grads.scale(limit / norm);
                }
            }
            sgd_step(params, &grads, hyper.lr)?;
        }
        losses.push(total / examples.len().max(1) as f64);
    }
    Ok(losses)
}
