use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::codebook::{weight_cluster, BitWidth, Codebook};
use super::state::{LayerQuantState, StepReport};
use crate::error::{Error, Result};
use crate::net::{accuracy, mean_loss, train_sgd, DataSplits, Dataset, NetworkModel, SgdConfig, TrainReport};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    pub distance_clusters: usize,
    /// Masked retraining after every quantization iteration.
    pub retrain: SgdConfig,
    /// Bit-widths at or below this cluster distances inside each weight cluster.
    pub low_bit_threshold: u8,
    /// Skip quantization entirely and return the input model.
    pub bypass: bool,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self {
            distance_clusters: 12,
            retrain: SgdConfig {
                steps: 500,
                lr: 0.01,
                batch_size: 100,
            },
            low_bit_threshold: 3,
            bypass: false,
        }
    }
}

/// One row of the quantizer metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub quantized_fraction: f64,
    pub train_loss: f64,
    pub eval_accuracy: f64,
}

pub const METRICS_HEADER: &str = "iteration,quantized_fraction,train_loss,eval_accuracy";

/// Renders metrics as comma-separated rows with a header line.
pub fn metrics_csv(rows: &[IterationMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.9},{:.6}",
            m.iteration, m.quantized_fraction, m.train_loss, m.eval_accuracy
        );
    }
    out
}

/// Progress notifications from [`quantize_network_observed`].
#[derive(Debug)]
pub enum QuantEvent<'a> {
    /// All layers took their quantization step for `iteration`.
    Quantized {
        iteration: usize,
        reports: &'a [StepReport],
        states: &'a [LayerQuantState],
        model: &'a NetworkModel,
    },
    /// Masked retraining after `iteration` finished.
    Retrained {
        iteration: usize,
        states: &'a [LayerQuantState],
        model: &'a NetworkModel,
        report: &'a TrainReport,
    },
}

#[derive(Debug, Clone)]
pub struct QuantizeOutcome {
    pub model: NetworkModel,
    /// One state per quantizable layer, in model order; empty when bypassed.
    pub states: Vec<LayerQuantState>,
    pub metrics: Vec<IterationMetrics>,
}

impl QuantizeOutcome {
    pub fn codebooks(&self) -> Vec<Codebook> {
        self.states.iter().filter_map(|s| s.codebook.clone()).collect()
    }
}

/// Gradient masks for every layer of `model`: quantized weights get 0,
/// everything else (including layers without quantization state) gets 1.
pub fn masks_for(model: &NetworkModel, states: &[LayerQuantState]) -> Vec<Tensor> {
    model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| match states.iter().find(|s| s.layer == i) {
            Some(s) => s.mask(l.weight.shape()),
            None => Tensor::filled(l.weight.shape().to_vec(), 1.0),
        })
        .collect()
}

/// Masked SGD: only unquantized weights (and all biases) move.
pub fn retrain(
    model: &mut NetworkModel,
    states: &[LayerQuantState],
    data: &Dataset,
    cfg: &SgdConfig,
    seed: u64,
) -> Result<TrainReport> {
    let masks = masks_for(model, states);
    train_sgd(model, data, cfg, seed, Some(&masks))
}

fn check_bits(model: &NetworkModel, bits: &[BitWidth]) -> Result<Vec<usize>> {
    let q = model.quantizable_layers();
    if q.is_empty() {
        return Err(Error::InvalidModel("model has no quantizable layers".into()));
    }
    if bits.len() != q.len() {
        return Err(Error::invalid(format!(
            "bit-width sequence has {} entries but the model has {} quantizable layers",
            bits.len(),
            q.len()
        )));
    }
    Ok(q)
}

pub fn quantize_network(
    model: &NetworkModel,
    bits: &[BitWidth],
    data: &DataSplits,
    cfg: &QuantizerConfig,
    seed: u64,
) -> Result<QuantizeOutcome> {
    quantize_network_observed(model, bits, data, cfg, seed, |_| {})
}

/// Iterative quantization: every iteration each layer snaps its next
/// scheduled group of highest-distance weights, then the network is
/// retrained with those weights masked. All layers advance together until
/// every quantizable weight is quantized.
pub fn quantize_network_observed(
    model: &NetworkModel,
    bits: &[BitWidth],
    data: &DataSplits,
    cfg: &QuantizerConfig,
    seed: u64,
    mut observe: impl FnMut(QuantEvent<'_>),
) -> Result<QuantizeOutcome> {
    let layers = check_bits(model, bits)?;
    let mut model = model.clone();
    let eval_acc = |m: &NetworkModel| accuracy(m, &data.eval);
    if cfg.bypass {
        let metrics = vec![IterationMetrics {
            iteration: 0,
            quantized_fraction: 0.0,
            train_loss: mean_loss(&model, &data.train)?,
            eval_accuracy: eval_acc(&model)?,
        }];
        return Ok(QuantizeOutcome {
            model,
            states: Vec::new(),
            metrics,
        });
    }
    if cfg.distance_clusters == 0 {
        return Err(Error::Config("quantizer.distance_clusters must be at least 1".into()));
    }

    let mut states: Vec<LayerQuantState> = layers
        .iter()
        .zip(bits)
        .map(|(&li, &b)| LayerQuantState::new(li, b, model.layers()[li].weight.len(), cfg.low_bit_threshold))
        .collect();
    let total: usize = states.iter().map(|s| s.quantized.len()).sum();
    let mut metrics = Vec::new();
    let mut iteration = 0;
    while states.iter().any(|s| !s.is_complete()) {
        let reports = {
            // pair each pending state with its own layer's weights
            let mut slots: Vec<(&mut LayerQuantState, &mut [f64])> = Vec::new();
            let mut rest = model.layers_mut();
            let mut offset = 0;
            for st in states.iter_mut() {
                let (_, tail) = rest.split_at_mut(st.layer - offset);
                let (cur, after) = tail.split_at_mut(1);
                offset = st.layer + 1;
                rest = after;
                if !st.is_complete() {
                    slots.push((st, cur[0].weight.data_mut()));
                }
            }
            slots
                .into_par_iter()
                .map(|(st, w)| st.quantize_step(w, cfg.distance_clusters))
                .collect::<Result<Vec<_>>>()?
        };
        observe(QuantEvent::Quantized {
            iteration,
            reports: &reports,
            states: &states,
            model: &model,
        });

        let report = retrain(
            &mut model,
            &states,
            &data.train,
            &cfg.retrain,
            seed.wrapping_add(iteration as u64 + 1),
        )?;
        observe(QuantEvent::Retrained {
            iteration,
            states: &states,
            model: &model,
            report: &report,
        });

        let done: usize = states.iter().map(|s| s.quantized_count()).sum();
        metrics.push(IterationMetrics {
            iteration,
            quantized_fraction: done as f64 / total as f64,
            train_loss: mean_loss(&model, &data.train)?,
            eval_accuracy: eval_acc(&model)?,
        });
        iteration += 1;
    }
    for st in &states {
        st.check_coherent(model.layers()[st.layer].weight.data())?;
    }
    Ok(QuantizeOutcome { model, states, metrics })
}

/// Snaps one layer's weights to a fresh `bits` codebook in a single pass.
pub fn snap_layer(weights: &[f64], layer: usize, bits: BitWidth) -> Result<(Codebook, Vec<f64>)> {
    let (mut codebook, assignment) = weight_cluster(weights, bits, None)?;
    codebook.layer = layer;
    let snapped = assignment.iter().map(|&a| codebook.centroids()[a]).collect();
    Ok((codebook, snapped))
}

/// Single-pass quantization without retraining: every quantizable layer is
/// clustered and each weight replaced by its nearest centroid.
pub fn snap_quantize(model: &NetworkModel, bits: &[BitWidth]) -> Result<(NetworkModel, Vec<Codebook>)> {
    let layers = check_bits(model, bits)?;
    let snapped: Vec<(Codebook, Vec<f64>)> = layers
        .par_iter()
        .zip(bits)
        .map(|(&li, &b)| snap_layer(model.layers()[li].weight.data(), li, b))
        .collect::<Result<_>>()?;
    let mut out = model.clone();
    let mut codebooks = Vec::with_capacity(layers.len());
    for (&li, (cb, w)) in layers.iter().zip(snapped) {
        out.layers_mut()[li].weight.data_mut().copy_from_slice(&w);
        codebooks.push(cb);
    }
    Ok((out, codebooks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{make_synthetic_dataset, LayerDef, SyntheticSpec};

    fn setup() -> (NetworkModel, DataSplits) {
        let spec = SyntheticSpec::new(3, 120, 60, vec![1, 4, 4]);
        let data = make_synthetic_dataset(5, &spec).unwrap();
        let defs = [
            LayerDef::Conv2d {
                out_channels: 2,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            LayerDef::Dense { units: 8 },
            LayerDef::Dense { units: 3 },
        ];
        (NetworkModel::build(&[1, 4, 4], &defs, 9).unwrap(), data)
    }

    fn small_cfg() -> QuantizerConfig {
        QuantizerConfig {
            retrain: SgdConfig {
                steps: 20,
                lr: 0.05,
                batch_size: 16,
            },
            ..QuantizerConfig::default()
        }
    }

    #[test]
    fn bypass_returns_input_model() {
        let (m, d) = setup();
        let cfg = QuantizerConfig {
            bypass: true,
            ..small_cfg()
        };
        let bits = vec![BitWidth::new(3).unwrap(); 3];
        let out = quantize_network(&m, &bits, &d, &cfg, 1).unwrap();
        assert_eq!(out.model, m);
        assert_eq!(out.metrics[0].eval_accuracy, accuracy(&m, &d.eval).unwrap());
    }

    #[test]
    fn completes_with_bounded_distinct_values() {
        let (m, d) = setup();
        let bits: Vec<BitWidth> = [2, 3, 4].iter().map(|&b| BitWidth::new(b).unwrap()).collect();
        let out = quantize_network(&m, &bits, &d, &small_cfg(), 1).unwrap();
        for (st, b) in out.states.iter().zip(&bits) {
            assert!(st.is_complete());
            let mut v = out.model.layers()[st.layer].weight.data().to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            assert!(v.len() <= b.codebook_size());
        }
        assert_eq!(out.metrics.last().unwrap().quantized_fraction, 1.0);
        let csv = metrics_csv(&out.metrics);
        assert!(csv.starts_with(METRICS_HEADER));
        assert_eq!(csv.lines().count(), out.metrics.len() + 1);
    }

    #[test]
    fn wrong_sequence_length_rejected() {
        let (m, d) = setup();
        let bits = vec![BitWidth::new(3).unwrap(); 2];
        assert!(quantize_network(&m, &bits, &d, &small_cfg(), 1).is_err());
        assert!(snap_quantize(&m, &bits).is_err());
    }

    #[test]
    fn snap_leaves_input_untouched() {
        let (m, _) = setup();
        let before = m.clone();
        let bits = vec![BitWidth::new(2).unwrap(); 3];
        let (q, cbs) = snap_quantize(&m, &bits).unwrap();
        assert_eq!(m, before);
        for (cb, l) in cbs.iter().zip(q.layers()) {
            assert!(l.weight.data().iter().all(|&w| cb.index_of(w).is_some()));
        }
    }

    #[test]
    fn all_zero_masks_freeze_weights() {
        let (mut m, d) = setup();
        let mut states: Vec<LayerQuantState> = m
            .quantizable_layers()
            .into_iter()
            .map(|li| LayerQuantState::new(li, BitWidth::new(3).unwrap(), m.layers()[li].weight.len(), 3))
            .collect();
        for s in &mut states {
            s.quantized.iter_mut().for_each(|q| *q = true);
        }
        let before: Vec<Vec<u64>> = m
            .layers()
            .iter()
            .map(|l| l.weight.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        retrain(&mut m, &states, &d.train, &small_cfg().retrain, 3).unwrap();
        let after: Vec<Vec<u64>> = m
            .layers()
            .iter()
            .map(|l| l.weight.data().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(before, after);
    }
}
