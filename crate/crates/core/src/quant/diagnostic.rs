//! Loss sensitivity of quantizing high- versus low-distance weights.

use super::codebook::{weight_cluster, BitWidth};
use super::distance::compute_distances;
use crate::error::Result;
use crate::net::{mean_loss, Dataset, NetworkModel};

/// Absolute loss change after snapping the top and the bottom decile of
/// weights by quantization distance, in every quantizable layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecileLossChange {
    pub high: f64,
    pub low: f64,
}

pub fn decile_loss_change(model: &NetworkModel, bits: BitWidth, data: &Dataset) -> Result<DecileLossChange> {
    let base = mean_loss(model, data)?;
    let mut high = model.clone();
    let mut low = model.clone();
    for li in model.quantizable_layers() {
        let w = model.layers()[li].weight.data();
        let (cb, _) = weight_cluster(w, bits, None)?;
        let t = compute_distances(w, &cb);
        let mut order: Vec<usize> = (0..w.len()).collect();
        order.sort_by(|&a, &b| t[b].distance.total_cmp(&t[a].distance).then(a.cmp(&b)));
        let n = (w.len() / 10).max(1);
        let hw = high.layers_mut()[li].weight.data_mut();
        for &i in &order[..n] {
            hw[i] = t[i].centroid;
        }
        let lw = low.layers_mut()[li].weight.data_mut();
        for &i in &order[w.len() - n..] {
            lw[i] = t[i].centroid;
        }
    }
    Ok(DecileLossChange {
        high: (mean_loss(&high, data)? - base).abs(),
        low: (mean_loss(&low, data)? - base).abs(),
    })
}
