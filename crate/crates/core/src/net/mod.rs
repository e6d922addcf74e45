//! Minimal deterministic network engine: dense and conv2d layers, ReLU,
//! softmax cross-entropy and plain (optionally masked) SGD.

mod checkpoint;
mod data;
mod layer;
mod model;
mod ops;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, ENGINE_VERSION,
};
pub(crate) use checkpoint::{read_spec, write_spec};
pub use data::{make_synthetic_dataset, DataSplits, Dataset, Split, SyntheticSpec};
pub use layer::{Activation, ConvGeometry, LayerDef, LayerGeometry, LayerKind, LayerSpec};
pub use model::{Layer, NetworkModel, FLOAT_BITS};
pub use ops::{accuracy, backward, forward, logits, mean_loss, sgd_step, softmax_cross_entropy, ForwardOutput, Gradients};
pub use train::{train_sgd, SgdConfig, TrainReport};
