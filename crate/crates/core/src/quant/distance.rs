//! Quantization distance `d = |w - ŵ|` and 1-D clustering of distances.

use super::codebook::Codebook;
use crate::error::{Error, Result};

/// One weight together with its nearest centroid and the distance between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantTriplet {
    pub weight: f64,
    pub centroid: f64,
    pub distance: f64,
}

pub fn compute_distances(weights: &[f64], codebook: &Codebook) -> Vec<QuantTriplet> {
    weights
        .iter()
        .map(|&w| {
            let c = codebook.centroids()[codebook.nearest(w)];
            QuantTriplet {
                weight: w,
                centroid: c,
                distance: (w - c).abs(),
            }
        })
        .collect()
}

/// Result of clustering a set of distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceClusters {
    /// Cluster id per input distance; id 0 has the largest centroid.
    pub ids: Vec<usize>,
    /// Cluster centroids in descending order.
    pub centroids: Vec<f64>,
}

impl DistanceClusters {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centroids.len()];
        for &i in &self.ids {
            s[i] += 1;
        }
        s
    }
}

/// 1-D k-means of `distances` into at most `max_clusters` groups.
///
/// In one dimension the optimal clusters are contiguous runs of the sorted
/// values, so the k-means objective is minimised exactly by dynamic
/// programming over the distinct values. Equal distances always share a
/// cluster, and fewer distinct values than `max_clusters` yields fewer
/// clusters.
pub fn distance_cluster(distances: &[f64], max_clusters: usize) -> Result<DistanceClusters> {
    if max_clusters == 0 {
        return Err(Error::invalid("need at least one distance cluster"));
    }
    if distances.is_empty() {
        return Err(Error::Quantization("no unquantized weights to cluster".into()));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::Quantization("non-finite quantization distance".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut values: Vec<f64> = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    for &d in &sorted {
        if values.last() == Some(&d) {
            *counts.last_mut().unwrap() += 1.0;
        } else {
            values.push(d);
            counts.push(1.0);
        }
    }
    let u = values.len();
    let k = max_clusters.min(u);
    let bounds = optimal_segments(&values, &counts, k);

    // bounds[c]..bounds[c + 1] are ascending segments; id 0 is the last one
    let mut centroids = Vec::with_capacity(k);
    for c in (0..k).rev() {
        let (lo, hi) = (bounds[c], bounds[c + 1]);
        let w: f64 = counts[lo..hi].iter().sum();
        let s: f64 = values[lo..hi].iter().zip(&counts[lo..hi]).map(|(v, n)| v * n).sum();
        centroids.push(s / w);
    }
    let ids = distances
        .iter()
        .map(|d| {
            let pos = values.partition_point(|v| v < d);
            let seg = bounds.partition_point(|&b| b <= pos) - 1;
            k - 1 - seg
        })
        .collect();
    Ok(DistanceClusters { ids, centroids })
}

/// Splits the sorted weighted points into `k` contiguous segments with
/// minimal total squared error; returns the `k + 1` segment boundaries.
fn optimal_segments(values: &[f64], counts: &[f64], k: usize) -> Vec<usize> {
    let u = values.len();
    let mut w = vec![0.0; u + 1];
    let mut s1 = vec![0.0; u + 1];
    let mut s2 = vec![0.0; u + 1];
    // centre the values to limit cancellation in the prefix sums
    let shift = values[u / 2];
    for i in 0..u {
        let v = values[i] - shift;
        w[i + 1] = w[i] + counts[i];
        s1[i + 1] = s1[i] + counts[i] * v;
        s2[i + 1] = s2[i] + counts[i] * v * v;
    }
    let cost = |i: usize, j: usize| -> f64 {
        // squared error of values[i..j]
        let n = w[j] - w[i];
        let a = s1[j] - s1[i];
        (s2[j] - s2[i] - a * a / n).max(0.0)
    };

    // prev[j]: best cost of values[..j] with the current number of segments
    let mut prev: Vec<f64> = (0..=u).map(|j| if j == 0 { 0.0 } else { cost(0, j) }).collect();
    let mut split = vec![vec![0usize; u + 1]; k];
    for c in 1..k {
        let mut cur = vec![f64::INFINITY; u + 1];
        fill_layer(&prev, &mut cur, &mut split[c], c + 1, u, c, u, &cost);
        prev = cur;
    }
    let mut bounds = vec![0; k + 1];
    bounds[k] = u;
    let mut j = u;
    for c in (1..k).rev() {
        j = split[c][j];
        bounds[c] = j;
    }
    bounds
}

/// Divide-and-conquer layer of the segmentation DP: computes `cur[j]` for
/// `j` in `lo..=hi` knowing the optimal split lies in `opt_lo..=opt_hi`.
#[allow(clippy::too_many_arguments)]
fn fill_layer(
    prev: &[f64],
    cur: &mut [f64],
    split: &mut [usize],
    lo: usize,
    hi: usize,
    opt_lo: usize,
    opt_hi: usize,
    cost: &dyn Fn(usize, usize) -> f64,
) {
    if lo > hi {
        return;
    }
    let mid = (lo + hi) / 2;
    let mut best = (f64::INFINITY, opt_lo);
    // the last segment values[i..mid] must be non-empty, and values[..i]
    // must hold at least one point per earlier segment
    for i in opt_lo..=opt_hi.min(mid - 1) {
        let c = prev[i] + cost(i, mid);
        if c < best.0 {
            best = (c, i);
        }
    }
    cur[mid] = best.0;
    split[mid] = best.1;
    if mid > lo {
        fill_layer(prev, cur, split, lo, mid - 1, opt_lo, best.1, cost);
    }
    fill_layer(prev, cur, split, mid + 1, hi, best.1, opt_hi, cost);
}
