//! Dynamic network quantization at desk scale.
//!
//! The crate is split along the workflow:
//!
//! * [`net`]: a small deterministic training engine (dense + conv2d, SGD with
//!   gradient masks) and the float checkpoint format.
//! * [`quant`]: codebook clustering with a pinned zero, quantization-distance
//!   clustering and the iterative quantize / masked-retrain loop.
//! * [`controller`]: a bidirectional recurrent policy that picks a bit-width
//!   per layer, trained with REINFORCE on Monte Carlo rollout returns.
//! * [`codec`]: the compression-ratio model and the bit-packed model file.
//! * [`pipeline`]: configuration, run manifests and the `train` / `search` /
//!   `quantize` / `eval` / `export` commands.

pub mod codec;
pub mod controller;
mod error;
pub mod net;
pub mod pipeline;
pub mod quant;
pub mod tensor;
mod wire;

pub use error::{Error, Result};
pub use tensor::Tensor;
