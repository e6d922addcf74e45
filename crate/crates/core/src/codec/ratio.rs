//! Storage accounting: `r = Σ n_l·B / Σ (n_l·b_l + k_l·B)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::FLOAT_BITS;
use crate::quant::{codebook_size, BitWidth};

/// Storage cost of one counted layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    /// Weight count `n_l`.
    pub n: usize,
    /// Bits per stored weight `b_l` (`B` for raw layers).
    pub bits: u32,
    /// Codebook size `k_l` (0 for raw layers).
    pub k: usize,
}

impl LayerCost {
    pub fn quantized(n: usize, bits: BitWidth) -> Self {
        Self {
            n,
            bits: bits.get() as u32,
            k: bits.codebook_size(),
        }
    }

    pub fn raw(n: usize, float_bits: u32) -> Self {
        Self {
            n,
            bits: float_bits,
            k: 0,
        }
    }

    /// `n·b + k·B` bits.
    pub fn stored_bits(&self, float_bits: u32) -> u64 {
        self.n as u64 * self.bits as u64 + self.k as u64 * float_bits as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionSpec {
    pub float_bits: u32,
    pub layers: Vec<LayerCost>,
}

impl CompressionSpec {
    pub fn new(float_bits: u32, layers: Vec<LayerCost>) -> Result<Self> {
        if float_bits == 0 {
            return Err(Error::invalid("float bit count must be positive"));
        }
        if layers.is_empty() {
            return Err(Error::invalid("compression spec needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.n == 0 {
                return Err(Error::invalid(format!("layer {i}: weight count must be positive")));
            }
            let raw = l.k == 0 && l.bits == float_bits;
            if !raw && (l.bits == 0 || l.bits >= 32 || l.k != codebook_size(l.bits)) {
                return Err(Error::invalid(format!(
                    "layer {i}: codebook size {} does not match {} bits",
                    l.k, l.bits
                )));
            }
        }
        Ok(Self { float_bits, layers })
    }

    /// Every layer quantized at its bit-width, stored with `B = 32`.
    pub fn from_bits(layers: &[(usize, BitWidth)]) -> Result<Self> {
        Self::new(
            FLOAT_BITS,
            layers.iter().map(|&(n, b)| LayerCost::quantized(n, b)).collect(),
        )
    }

    pub fn float_storage_bits(&self) -> u64 {
        self.layers.iter().map(|l| l.n as u64).sum::<u64>() * self.float_bits as u64
    }

    pub fn quantized_storage_bits(&self) -> u64 {
        self.layers.iter().map(|l| l.stored_bits(self.float_bits)).sum()
    }
}

pub fn compression_ratio(spec: &CompressionSpec) -> f64 {
    spec.float_storage_bits() as f64 / spec.quantized_storage_bits() as f64
}

/// A named entry of a reference layer table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceLayer {
    pub name: &'static str,
    pub is_conv: bool,
    pub weights: usize,
}

/// Weight counts of the 5-layer CIFAR-10 "quick" network (3 conv + 2 FC,
/// biases excluded): conv 3→32 5×5, conv 32→32 5×5, conv 32→64 5×5,
/// FC 1024→64, FC 64→10.
pub const CIFAR_NET: [ReferenceLayer; 5] = [
    ReferenceLayer {
        name: "conv1",
        is_conv: true,
        weights: 3 * 32 * 5 * 5,
    },
    ReferenceLayer {
        name: "conv2",
        is_conv: true,
        weights: 32 * 32 * 5 * 5,
    },
    ReferenceLayer {
        name: "conv3",
        is_conv: true,
        weights: 32 * 64 * 5 * 5,
    },
    ReferenceLayer {
        name: "ip1",
        is_conv: false,
        weights: 1024 * 64,
    },
    ReferenceLayer {
        name: "ip2",
        is_conv: false,
        weights: 64 * 10,
    },
];

/// Spec for a reference table with conv layers at `conv_bits` (in order) and
/// FC layers at `fc_bits`.
pub fn reference_spec(table: &[ReferenceLayer], conv_bits: &[BitWidth], fc_bits: BitWidth) -> Result<CompressionSpec> {
    let convs = table.iter().filter(|l| l.is_conv).count();
    if conv_bits.len() != convs {
        return Err(Error::invalid(format!(
            "{} conv bit-widths for {convs} conv layers",
            conv_bits.len()
        )));
    }
    let mut conv = conv_bits.iter();
    let layers = table
        .iter()
        .map(|l| (l.weights, if l.is_conv { *conv.next().unwrap() } else { fc_bits }))
        .collect::<Vec<_>>();
    CompressionSpec::from_bits(&layers)
}
