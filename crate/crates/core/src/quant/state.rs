//! Per-layer quantization state and one step of the iterative quantizer.

use std::cmp::Ordering;

use super::codebook::{weight_cluster, BitWidth, Codebook};
use super::distance::{compute_distances, distance_cluster};
use super::schedule::QuantSchedule;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerQuantState {
    pub layer: usize,
    pub bits: BitWidth,
    /// `None` until the first weight clustering ran.
    pub codebook: Option<Codebook>,
    pub assignment: Vec<usize>,
    /// `true` where the weight is quantized (mask entry 0).
    pub quantized: Vec<bool>,
    /// Distance cluster of every weight that was unquantized at the latest
    /// snapshot; `None` for weights already quantized before it.
    pub distance_cluster_id: Vec<Option<usize>>,
    pub frozen_centroids: bool,
    /// Cluster distances separately inside each weight cluster.
    pub per_weight_cluster: bool,
    pub schedule: Option<QuantSchedule>,
    pub iteration: usize,
}

/// What one [`LayerQuantState::quantize_step`] did, measured on that step's
/// distance snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub layer: usize,
    pub iteration: usize,
    /// Weights snapped in this step.
    pub selected: Vec<usize>,
    /// Weights that stay unquantized after this step.
    pub deferred: Vec<usize>,
    /// Distance of every weight at this snapshot.
    pub distances: Vec<f64>,
    /// Weight-cluster assignment at this snapshot.
    pub assignment: Vec<usize>,
}

impl LayerQuantState {
    /// Fresh state; `low_bit_threshold` switches to per-weight-cluster
    /// distance clustering when `bits <= low_bit_threshold`.
    pub fn new(layer: usize, bits: BitWidth, num_weights: usize, low_bit_threshold: u8) -> Self {
        Self {
            layer,
            bits,
            codebook: None,
            assignment: vec![0; num_weights],
            quantized: vec![false; num_weights],
            distance_cluster_id: vec![None; num_weights],
            frozen_centroids: false,
            per_weight_cluster: bits.get() <= low_bit_threshold,
            schedule: None,
            iteration: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.quantized.iter().filter(|q| !**q).count()
    }

    pub fn is_complete(&self) -> bool {
        self.quantized.iter().all(|&q| q)
    }

    pub fn quantized_count(&self) -> usize {
        self.quantized.len() - self.remaining()
    }

    /// Gradient mask: 0 on quantized weights, 1 elsewhere.
    pub fn mask(&self, shape: &[usize]) -> Tensor {
        let data = self.quantized.iter().map(|&q| if q { 0.0 } else { 1.0 }).collect();
        Tensor::new(shape.to_vec(), data).expect("mask shape matches layer")
    }

    /// One quantizer iteration for this layer: weight clustering (k-means on
    /// the first call, nearest-centroid re-allocation with frozen centroids
    /// afterwards), distance clustering of the unquantized weights, and
    /// snapping of the scheduled number of highest-distance weights.
    pub fn quantize_step(&mut self, weights: &mut [f64], num_distance_clusters: usize) -> Result<StepReport> {
        if weights.len() != self.quantized.len() {
            return Err(Error::Quantization(format!(
                "layer {}: state tracks {} weights, got {}",
                self.layer,
                self.quantized.len(),
                weights.len()
            )));
        }
        let unquantized: Vec<usize> = (0..weights.len()).filter(|&i| !self.quantized[i]).collect();
        if unquantized.is_empty() {
            return Err(Error::Quantization(format!("layer {} is already fully quantized", self.layer)));
        }

        let (codebook, assignment) = weight_cluster(weights, self.bits, self.codebook.as_ref())?;
        let mut codebook = codebook;
        codebook.layer = self.layer;
        self.codebook = Some(codebook.clone());
        self.frozen_centroids = true;
        self.assignment = assignment;

        let triplets = compute_distances(weights, &codebook);
        let distances: Vec<f64> = triplets.iter().map(|t| t.distance).collect();

        // distance clusters of the unquantized weights, globally or per weight cluster
        let mut ids = vec![None; weights.len()];
        let groups: Vec<Vec<usize>> = if self.per_weight_cluster {
            let mut g = vec![Vec::new(); codebook.k()];
            for &i in &unquantized {
                g[self.assignment[i]].push(i);
            }
            g.into_iter().filter(|v| !v.is_empty()).collect()
        } else {
            vec![unquantized.clone()]
        };
        let mut level_sizes: Vec<usize> = Vec::new();
        for group in &groups {
            let d: Vec<f64> = group.iter().map(|&i| distances[i]).collect();
            let clusters = distance_cluster(&d, num_distance_clusters)?;
            for (&i, &id) in group.iter().zip(&clusters.ids) {
                ids[i] = Some(id);
            }
            for (level, size) in clusters.sizes().into_iter().enumerate() {
                if level_sizes.len() <= level {
                    level_sizes.push(0);
                }
                level_sizes[level] += size;
            }
        }
        self.distance_cluster_id = ids;

        if self.schedule.is_none() {
            self.schedule = Some(QuantSchedule::from_cluster_sizes(&level_sizes, num_distance_clusters)?);
        }
        let schedule = self.schedule.as_ref().unwrap();
        let Some(&count) = schedule.counts.get(self.iteration) else {
            return Err(Error::Quantization(format!(
                "layer {}: schedule exhausted after {} iterations with {} weights unquantized",
                self.layer,
                schedule.len(),
                unquantized.len()
            )));
        };
        if count > unquantized.len() {
            return Err(Error::Quantization(format!(
                "layer {}: schedule asks for {count} weights but only {} remain",
                self.layer,
                unquantized.len()
            )));
        }
        if self.iteration > 0 && count > schedule.counts[self.iteration - 1] {
            return Err(Error::Quantization(format!("layer {}: schedule is not descending", self.layer)));
        }

        // largest-distance clusters first, then larger distance, then index
        let mut order = unquantized;
        order.sort_by(|&a, &b| {
            let (ia, ib) = (self.distance_cluster_id[a].unwrap(), self.distance_cluster_id[b].unwrap());
            ia.cmp(&ib)
                .then_with(|| distances[b].partial_cmp(&distances[a]).unwrap_or(Ordering::Equal))
                .then_with(|| a.cmp(&b))
        });
        let deferred = order.split_off(count);
        for &i in &order {
            weights[i] = codebook.centroids()[self.assignment[i]];
            self.quantized[i] = true;
        }
        let report = StepReport {
            layer: self.layer,
            iteration: self.iteration,
            selected: order,
            deferred,
            distances,
            assignment: self.assignment.clone(),
        };
        self.iteration += 1;
        Ok(report)
    }

    /// Checks that every quantized weight holds its centroid bit-exactly.
    pub fn check_coherent(&self, weights: &[f64]) -> Result<()> {
        let Some(cb) = &self.codebook else {
            return if self.quantized.iter().any(|&q| q) {
                Err(Error::Quantization("quantized weights without a codebook".into()))
            } else {
                Ok(())
            };
        };
        for (i, (&w, &q)) in weights.iter().zip(&self.quantized).enumerate() {
            if q && cb.index_of(w).is_none() {
                return Err(Error::Quantization(format!(
                    "layer {}: quantized weight {i} = {w} is not a centroid",
                    self.layer
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bw(b: u8) -> BitWidth {
        BitWidth::new(b).unwrap()
    }

    /// 100 weights around centroids with four well separated distance bands of
    /// sizes 40, 30, 20 and 10 (largest distance first).
    fn banded_weights() -> Vec<f64> {
        let mut w = Vec::new();
        for (count, d) in [(40, 0.20), (30, 0.12), (20, 0.06), (10, 0.01)] {
            for i in 0..count {
                let jitter = (i as f64) * 1e-5;
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                // centroids will settle near +-1 and 0
                w.push(sign * (1.0 + d + jitter));
            }
        }
        w
    }

    #[test]
    fn banded_fixture_follows_descending_counts() {
        let mut w = banded_weights();
        let mut cb_vals = vec![-1.0, 0.0, 1.0];
        cb_vals.iter_mut().for_each(|c| *c = (*c as f32) as f64);
        let mut st = LayerQuantState::new(0, bw(2), w.len(), 0);
        // freeze a known codebook so distances are exactly the designed bands
        st.codebook = Some(Codebook::new(0, cb_vals).unwrap());
        let mut flips = vec![];
        while !st.is_complete() {
            let before = st.quantized_count();
            st.quantize_step(&mut w, 4).unwrap();
            flips.push(st.quantized_count() - before);
        }
        assert_eq!(flips, vec![40, 30, 20, 10]);
        assert_eq!(st.schedule.as_ref().unwrap().counts, vec![40, 30, 20, 10]);
        st.check_coherent(&w).unwrap();
    }

    #[test]
    fn first_step_takes_largest_distance_cluster() {
        let mut w = banded_weights();
        let mut st = LayerQuantState::new(0, bw(2), w.len(), 0);
        st.codebook = Some(Codebook::new(0, vec![-1.0, 0.0, 1.0]).unwrap());
        let r = st.quantize_step(&mut w, 4).unwrap();
        let min_sel = r.selected.iter().map(|&i| r.distances[i]).fold(f64::INFINITY, f64::min);
        let max_def = r.deferred.iter().map(|&i| r.distances[i]).fold(0.0, f64::max);
        assert!(min_sel >= max_def);
        assert!(r.selected.iter().all(|&i| i < 40));
    }

    #[test]
    fn runs_to_completion_from_scratch() {
        let mut w: Vec<f64> = (0..300).map(|i| ((i * 7919) % 613) as f64 / 613.0 - 0.5).collect();
        let mut st = LayerQuantState::new(2, bw(3), w.len(), 0);
        let mut steps = 0;
        while !st.is_complete() {
            st.quantize_step(&mut w, 12).unwrap();
            steps += 1;
        }
        assert!(steps <= 12);
        let cb = st.codebook.as_ref().unwrap();
        assert_eq!(cb.layer, 2);
        let mut distinct = w.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert!(distinct.len() <= 5);
        assert!(st.quantize_step(&mut w, 12).is_err());
    }

    #[test]
    fn exhausted_schedule_is_rejected() {
        let mut w = vec![0.5, -0.5, 0.25, 0.1];
        let mut st = LayerQuantState::new(0, bw(2), w.len(), 0);
        st.schedule = Some(QuantSchedule {
            num_distance_clusters: 1,
            counts: vec![1],
        });
        st.quantize_step(&mut w, 12).unwrap();
        let err = st.quantize_step(&mut w, 12).unwrap_err();
        assert!(err.to_string().contains("exhausted"), "{err}");
    }
}
