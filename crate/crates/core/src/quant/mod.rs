//! Codebook clustering, quantization distance and the iterative
//! quantize / masked-retrain loop.

mod codebook;
mod diagnostic;
mod distance;
mod network;
mod schedule;
mod state;

pub use codebook::{
    cluster_sse, codebook_size, weight_cluster, weight_cluster_traced, BitWidth, Codebook, KMeansTrace, MAX_BITS,
    MAX_LLOYD_ITERS, MIN_BITS,
};
pub use diagnostic::{decile_loss_change, DecileLossChange};
pub use distance::{compute_distances, distance_cluster, DistanceClusters, QuantTriplet};
pub use network::{
    masks_for, metrics_csv, quantize_network, quantize_network_observed, retrain, snap_layer, snap_quantize,
    IterationMetrics, QuantEvent, QuantizeOutcome, QuantizerConfig, METRICS_HEADER,
};
pub use schedule::QuantSchedule;
pub use state::{LayerQuantState, StepReport};
