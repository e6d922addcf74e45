use crate::error::{Error, Result};

/// How many weights of a layer are quantized in each iteration.
///
/// Counts are non-increasing and sum to the layer's weight count; iteration
/// `t` quantizes the `counts[t]` highest-distance weights still unquantized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantSchedule {
    pub num_distance_clusters: usize,
    pub counts: Vec<usize>,
}

impl QuantSchedule {
    /// Builds a schedule from distance-cluster sizes listed from the largest
    /// distance to the smallest.
    ///
    /// Adjacent clusters are merged so that group sizes never increase. Among
    /// all such groupings the one with the most iterations is chosen, and
    /// among those the one with the smallest first group.
    pub fn from_cluster_sizes(sizes: &[usize], num_distance_clusters: usize) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::Quantization(format!("invalid distance cluster sizes {sizes:?}")));
        }
        // Work on the reversed list, where group sums must be non-decreasing.
        let rev: Vec<usize> = sizes.iter().rev().copied().collect();
        let m = rev.len();
        let mut prefix = vec![0usize; m + 1];
        for i in 0..m {
            prefix[i + 1] = prefix[i] + rev[i];
        }
        // best[j] = (groups, last group sum, split point) for rev[..j]
        let mut best: Vec<(usize, usize, usize)> = vec![(0, 0, 0); m + 1];
        for j in 1..=m {
            let mut cand: Option<(usize, usize, usize)> = None;
            for i in 0..j {
                let (cnt, last, _) = best[i];
                if i > 0 && cnt == 0 {
                    continue;
                }
                let sum = prefix[j] - prefix[i];
                if sum < last {
                    continue;
                }
                let c = (cnt + 1, sum, i);
                cand = Some(match cand {
                    None => c,
                    Some(b) if c.0 > b.0 || (c.0 == b.0 && c.1 < b.1) => c,
                    Some(b) => b,
                });
            }
            // the single group rev[..j] is always feasible
            best[j] = cand.expect("whole-prefix group is always feasible");
        }
        let mut counts = Vec::new();
        let mut j = m;
        while j > 0 {
            let (_, sum, i) = best[j];
            counts.push(sum);
            j = i;
        }
        // counts were collected from the largest-distance end
        Ok(Self {
            num_distance_clusters,
            counts,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn is_non_increasing(&self) -> bool {
        self.counts.windows(2).all(|w| w[0] >= w[1])
    }
}
