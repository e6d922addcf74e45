//! Compression-ratio accounting and the bit-packed model file.

mod bitpack;
mod packed;
mod ratio;

pub use bitpack::{pack_indices, packed_len, unpack_indices};
pub use packed::{
    compression_spec, encodings_from_codebooks, load_packed, pack, read_layout, save_packed, unpack, LayerEncoding,
    LayerLayout, PackedLayout, PackedModel, PACKED_MAGIC, PACKED_VERSION,
};
pub use ratio::{compression_ratio, reference_spec, CompressionSpec, LayerCost, ReferenceLayer, CIFAR_NET};
