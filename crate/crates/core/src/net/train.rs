use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::NetworkModel;
use super::ops::{backward, sgd_step};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mini-batch loss of every step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean of the last `window` step losses.
    pub fn tail_loss(&self, window: usize) -> Option<f64> {
        if self.losses.is_empty() {
            return None;
        }
        let w = window.clamp(1, self.losses.len());
        Some(self.losses[self.losses.len() - w..].iter().sum::<f64>() / w as f64)
    }
}

/// Mini-batch SGD over reshuffled epochs. With `masks`, only weights whose
/// mask entry is 1 move.
pub fn train_sgd(
    model: &mut NetworkModel,
    data: &Dataset,
    cfg: &SgdConfig,
    seed: u64,
    masks: Option<&[Tensor]>,
) -> Result<TrainReport> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    if data.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let bs = cfg.batch_size.min(data.len());
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        if cursor + bs > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let batch = data.select(&order[cursor..cursor + bs]);
        cursor += bs;
        let grads = backward(model, &batch)?;
        sgd_step(model, &grads, cfg.lr, masks)?;
        losses.push(grads.loss);
    }
    Ok(TrainReport { losses })
}
