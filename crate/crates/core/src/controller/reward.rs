use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::embedding::searched_layers;
use super::sequence::BitWidthSequence;
use crate::codec::{compression_ratio, CompressionSpec};
use crate::error::{Error, Result};
use crate::net::{accuracy, Dataset, NetworkModel};
use crate::quant::{snap_layer, snap_quantize, BitWidth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the compression ratio in `R = Acc + λ·r`.
    pub lambda: f64,
    /// Monte Carlo completions per step.
    pub mc_samples: usize,
    /// Size of the held-out subset used for the accuracy term.
    pub eval_samples: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            mc_samples: 4,
            eval_samples: 1000,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be a non-negative number, got {}", self.lambda)));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if self.eval_samples == 0 {
            return Err(Error::Config("eval_samples must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub sequence: BitWidthSequence,
    pub accuracy: f64,
    pub ratio: f64,
    pub reward: f64,
}

impl RolloutRecord {
    pub fn new(sequence: BitWidthSequence, accuracy: f64, ratio: f64, lambda: f64) -> Self {
        Self {
            sequence,
            accuracy,
            ratio,
            reward: accuracy + lambda * ratio,
        }
    }
}

/// Anything that scores a complete bit-width sequence.
pub trait RewardSource: Sync {
    fn evaluate(&self, sequence: &BitWidthSequence) -> Result<RolloutRecord>;
}

/// Bit-width for every quantizable layer: searched layers take the sequence
/// entries in order, dense layers take `fc_fixed` when it is set.
pub fn full_plan(
    model: &NetworkModel,
    sequence: &BitWidthSequence,
    fc_fixed: Option<BitWidth>,
) -> Result<Vec<BitWidth>> {
    let searched = searched_layers(model, fc_fixed.is_some());
    if sequence.len() != searched.len() {
        return Err(Error::invalid(format!(
            "sequence has {} entries but {} layers are searched",
            sequence.len(),
            searched.len()
        )));
    }
    let mut next = sequence.0.iter();
    Ok(model
        .quantizable_layers()
        .into_iter()
        .map(|li| {
            if searched.contains(&li) {
                *next.next().unwrap()
            } else {
                fc_fixed.expect("unsearched layers have a fixed width")
            }
        })
        .collect())
}

/// Compression ratio over all quantizable layers at `plan` bits.
pub fn plan_ratio(model: &NetworkModel, plan: &[BitWidth]) -> Result<f64> {
    let layers: Vec<(usize, BitWidth)> = model
        .quantizable_layers()
        .into_iter()
        .zip(plan)
        .map(|(li, &b)| (model.layers()[li].weight.len(), b))
        .collect();
    Ok(compression_ratio(&CompressionSpec::from_bits(&layers)?))
}

/// Reward of `sequence`: snap-to-codebook accuracy on `eval` (no retraining)
/// plus `lambda` times the compression ratio. `model` is not modified.
pub fn evaluate_reward(
    model: &NetworkModel,
    sequence: &BitWidthSequence,
    eval: &Dataset,
    lambda: f64,
    fc_fixed: Option<BitWidth>,
) -> Result<RolloutRecord> {
    let plan = full_plan(model, sequence, fc_fixed)?;
    let (snapped, _) = snap_quantize(model, &plan)?;
    let acc = accuracy(&snapped, eval)?;
    Ok(RolloutRecord::new(sequence.clone(), acc, plan_ratio(model, &plan)?, lambda))
}

/// [`evaluate_reward`] with per-layer snap results and per-sequence records
/// cached; safe to share across threads.
pub struct ModelReward {
    model: NetworkModel,
    eval: Dataset,
    lambda: f64,
    fc_fixed: Option<BitWidth>,
    snaps: Mutex<HashMap<(usize, BitWidth), Arc<Vec<f64>>>>,
    records: Mutex<HashMap<BitWidthSequence, RolloutRecord>>,
}

impl ModelReward {
    pub fn new(model: NetworkModel, eval: Dataset, lambda: f64, fc_fixed: Option<BitWidth>) -> Result<Self> {
        if searched_layers(&model, fc_fixed.is_some()).is_empty() {
            return Err(Error::InvalidModel("no layers to search bit-widths for".into()));
        }
        Ok(Self {
            model,
            eval,
            lambda,
            fc_fixed,
            snaps: Mutex::new(HashMap::new()),
            records: Mutex::new(HashMap::new()),
        })
    }

    pub fn model(&self) -> &NetworkModel {
        &self.model
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn cached_sequences(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    fn snapped(&self, layer: usize, bits: BitWidth) -> Result<Arc<Vec<f64>>> {
        if let Some(w) = self.snaps.lock().unwrap().get(&(layer, bits)) {
            return Ok(w.clone());
        }
        let (_, w) = snap_layer(self.model.layers()[layer].weight.data(), layer, bits)?;
        let w = Arc::new(w);
        self.snaps.lock().unwrap().insert((layer, bits), w.clone());
        Ok(w)
    }
}

impl RewardSource for ModelReward {
    fn evaluate(&self, sequence: &BitWidthSequence) -> Result<RolloutRecord> {
        if let Some(r) = self.records.lock().unwrap().get(sequence) {
            return Ok(r.clone());
        }
        let plan = full_plan(&self.model, sequence, self.fc_fixed)?;
        let mut m = self.model.clone();
        for (li, &b) in self.model.quantizable_layers().into_iter().zip(&plan) {
            let w = self.snapped(li, b)?;
            m.layers_mut()[li].weight.data_mut().copy_from_slice(&w);
        }
        let acc = accuracy(&m, &self.eval)?;
        let record = RolloutRecord::new(sequence.clone(), acc, plan_ratio(&self.model, &plan)?, self.lambda);
        self.records.lock().unwrap().insert(sequence.clone(), record.clone());
        Ok(record)
    }
}
