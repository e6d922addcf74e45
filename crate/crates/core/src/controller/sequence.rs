use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{BitWidth, MIN_BITS};

/// Number of actions: bit-widths 2 through 8.
pub const NUM_ACTIONS: usize = 7;

pub fn action_bits(action: usize) -> BitWidth {
    BitWidth::new(MIN_BITS + action as u8).expect("action index in range")
}

pub fn bits_action(bits: BitWidth) -> usize {
    (bits.get() - MIN_BITS) as usize
}

/// One bit-width per searched layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BitWidthSequence(pub Vec<BitWidth>);

impl BitWidthSequence {
    pub fn from_actions(actions: &[usize]) -> Result<Self> {
        actions
            .iter()
            .map(|&a| {
                if a < NUM_ACTIONS {
                    Ok(action_bits(a))
                } else {
                    Err(Error::invalid(format!("action {a} outside 0..{NUM_ACTIONS}")))
                }
            })
            .collect::<Result<_>>()
            .map(Self)
    }

    pub fn uniform(bits: BitWidth, len: usize) -> Self {
        Self(vec![bits; len])
    }

    pub fn actions(&self) -> Vec<usize> {
        self.0.iter().map(|&b| bits_action(b)).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean_bits(&self) -> f64 {
        self.0.iter().map(|b| b.get() as f64).sum::<f64>() / self.0.len().max(1) as f64
    }
}

impl fmt::Display for BitWidthSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|b| b.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

/// Draws from a categorical distribution given as probabilities.
pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
