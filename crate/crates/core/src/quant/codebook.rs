//! Per-layer codebooks and Lloyd's k-means with a pinned zero centroid.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

/// Bits used to encode one codebook index, restricted to `2..=8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BitWidth(u8);

impl BitWidth {
    pub fn new(bits: u8) -> Result<Self> {
        if (MIN_BITS..=MAX_BITS).contains(&bits) {
            Ok(Self(bits))
        } else {
            Err(Error::invalid(format!("bit-width {bits} outside {MIN_BITS}..={MAX_BITS}")))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// `2^(b-1) + 1`: the nonzero levels plus the reserved zero.
    pub fn codebook_size(self) -> usize {
        codebook_size(self.0 as u32)
    }

    pub fn all() -> impl Iterator<Item = BitWidth> {
        (MIN_BITS..=MAX_BITS).map(BitWidth)
    }
}

pub fn codebook_size(bits: u32) -> usize {
    (1usize << (bits - 1)) + 1
}

impl TryFrom<u8> for BitWidth {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        BitWidth::new(v)
    }
}

impl From<BitWidth> for u8 {
    fn from(b: BitWidth) -> u8 {
        b.0
    }
}

impl fmt::Display for BitWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Shared weight values of one layer, strictly increasing, containing an exact
/// `0.0`. Every centroid is representable as `f32` so that storing it at 32
/// bits is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub layer: usize,
    centroids: Vec<f64>,
}

impl Codebook {
    pub fn new(layer: usize, centroids: Vec<f64>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::Quantization("empty codebook".into()));
        }
        if centroids.iter().any(|c| !c.is_finite() || (*c as f32) as f64 != *c) {
            return Err(Error::Quantization("codebook centroids must be finite f32 values".into()));
        }
        if centroids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Quantization(format!("centroids not strictly increasing: {centroids:?}")));
        }
        if !centroids.contains(&0.0) {
            return Err(Error::Quantization("codebook lacks the reserved zero".into()));
        }
        Ok(Self { layer, centroids })
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn zero_index(&self) -> usize {
        self.centroids.iter().position(|&c| c == 0.0).unwrap()
    }

    /// Index of the nearest centroid; an exact tie goes to the smaller value.
    pub fn nearest(&self, w: f64) -> usize {
        nearest_sorted(&self.centroids, w)
    }

    /// Index of a centroid bit-equal to `w`, if any.
    pub fn index_of(&self, w: f64) -> Option<usize> {
        let i = self.nearest(w);
        (self.centroids[i].to_bits() == w.to_bits() || (w == 0.0 && self.centroids[i] == 0.0)).then_some(i)
    }
}

pub(crate) fn nearest_sorted(sorted: &[f64], w: f64) -> usize {
    let p = sorted.partition_point(|&c| c < w);
    if p == 0 {
        return 0;
    }
    if p == sorted.len() {
        return p - 1;
    }
    if w - sorted[p - 1] <= sorted[p] - w {
        p - 1
    } else {
        p
    }
}

/// Within-cluster sum of squares for a given codebook and assignment.
pub fn cluster_sse(weights: &[f64], centroids: &[f64], assignment: &[usize]) -> f64 {
    weights
        .iter()
        .zip(assignment)
        .map(|(&w, &a)| (w - centroids[a]).powi(2))
        .sum()
}

/// Objective value after each Lloyd assignment step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KMeansTrace {
    pub sse: Vec<f64>,
}

pub const MAX_LLOYD_ITERS: usize = 100;

/// Clusters `weights` into `2^(b-1)+1` levels.
///
/// Without `frozen`, runs Lloyd's algorithm with one centroid pinned at 0.0
/// (never moved by the mean update) and returns the resulting codebook. Empty
/// clusters keep their centroid. With `frozen`, only re-assigns weights to the
/// nearest frozen centroid and returns the codebook unchanged.
pub fn weight_cluster(weights: &[f64], bits: BitWidth, frozen: Option<&Codebook>) -> Result<(Codebook, Vec<usize>)> {
    weight_cluster_traced(weights, bits, frozen).map(|(c, a, _)| (c, a))
}

pub fn weight_cluster_traced(
    weights: &[f64],
    bits: BitWidth,
    frozen: Option<&Codebook>,
) -> Result<(Codebook, Vec<usize>, KMeansTrace)> {
    if weights.is_empty() {
        return Err(Error::Quantization("cannot cluster an empty weight set".into()));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Quantization("non-finite weight".into()));
    }
    if let Some(cb) = frozen {
        let assignment = weights.iter().map(|&w| cb.nearest(w)).collect();
        return Ok((cb.clone(), assignment, KMeansTrace::default()));
    }

    let k = bits.codebook_size();
    let mut centroids = initial_centroids(weights, k - 1);
    centroids.push(0.0);
    centroids.sort_by(f64::total_cmp);

    let mut trace = KMeansTrace::default();
    let mut assignment: Vec<usize> = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let next: Vec<usize> = weights.iter().map(|&w| nearest_sorted(&centroids, w)).collect();
        trace.sse.push(cluster_sse(weights, &centroids, &next));
        if next == assignment {
            break;
        }
        assignment = next;
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&w, &a) in weights.iter().zip(&assignment) {
            sums[a] += w;
            counts[a] += 1;
        }
        let mut updated: Vec<f64> = centroids
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                if c == 0.0 || counts[i] == 0 {
                    c
                } else {
                    sums[i] / counts[i] as f64
                }
            })
            .collect();
        updated.sort_by(f64::total_cmp);
        if updated != centroids {
            // sorting may permute indices; the next assignment pass recomputes them
            assignment.clear();
        }
        centroids = updated;
    }

    let centroids = to_f32_grid(centroids);
    let assignment = weights.iter().map(|&w| nearest_sorted(&centroids, w)).collect();
    Ok((Codebook::new(0, centroids)?, assignment, trace))
}

/// `free` distinct nonzero starting centroids. Linear over `[min, max]` when
/// the data has enough distinct nonzero values, otherwise the distinct values
/// themselves padded with points outside the data range (those clusters stay
/// empty).
fn initial_centroids(weights: &[f64], free: usize) -> Vec<f64> {
    let mut distinct: Vec<f64> = weights.iter().copied().filter(|&w| w != 0.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() > free {
        let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let step = (hi - lo) / free as f64;
        return (0..free)
            .map(|i| {
                let c = lo + step * (i as f64 + 0.5);
                if c == 0.0 {
                    step * 0.25
                } else {
                    c
                }
            })
            .collect();
    }
    let scale = weights.iter().fold(0.0f64, |m, w| m.max(w.abs())).max(1.0);
    let mut out = distinct;
    let mut j = 2.0;
    while out.len() < free {
        out.push(scale * j);
        j += 1.0;
    }
    out
}

/// Rounds centroids to f32 precision while keeping them strictly increasing
/// and keeping the zero exact.
fn to_f32_grid(mut centroids: Vec<f64>) -> Vec<f64> {
    for c in centroids.iter_mut() {
        *c = (*c as f32) as f64;
    }
    centroids.sort_by(f64::total_cmp);
    for i in 1..centroids.len() {
        if centroids[i] <= centroids[i - 1] {
            let bumped = next_f32_up(centroids[i - 1] as f32) as f64;
            centroids[i] = if bumped == 0.0 { next_f32_up(0.0) as f64 } else { bumped };
        }
    }
    centroids
}

fn next_f32_up(x: f32) -> f32 {
    if x == 0.0 {
        f32::from_bits(1)
    } else if x > 0.0 {
        f32::from_bits(x.to_bits() + 1)
    } else {
        f32::from_bits(x.to_bits() - 1)
    }
}
