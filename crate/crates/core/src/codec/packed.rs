//! Bit-packed model file.
//!
//! ```text
//! header:  "DNQP" | version u32 | input rank u32 | input dims u32...
//!          | layer count u32
//!          | per layer: layer spec | encoding u8 | bits u8 | k u32
//!          | crc32 of the header bytes above
//! payload: per layer, quantized: k centroids f32 | indices packed at b bits
//!                                (LSB-first, padded to a byte)
//!                     raw:       n weights f32
//! biases:  per layer, f64 values
//! trailer: crc32 of payload and biases
//! ```
//!
//! Integers and reals are little-endian. Only the payload counts as model
//! storage; header, biases and trailer are bookkeeping.

use std::fmt;
use std::path::Path;

use super::bitpack::{pack_indices, packed_len, unpack_indices};
use super::ratio::{CompressionSpec, LayerCost};
use crate::error::{Error, Result};
use crate::net::{read_spec, write_spec, Layer, LayerKind, LayerSpec, NetworkModel, FLOAT_BITS};
use crate::quant::{BitWidth, Codebook};
use crate::tensor::Tensor;
use crate::wire::{put_u32, Reader};

pub const PACKED_MAGIC: &[u8; 4] = b"DNQP";
pub const PACKED_VERSION: u32 = 1;

const ENC_RAW: u8 = 0;
const ENC_QUANTIZED: u8 = 1;

/// How one layer's weights are stored.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerEncoding {
    /// Weights as 32-bit reals.
    Raw,
    Quantized { bits: BitWidth, codebook: Codebook },
}

impl LayerEncoding {
    pub fn bits(&self) -> Option<BitWidth> {
        match self {
            LayerEncoding::Raw => None,
            LayerEncoding::Quantized { bits, .. } => Some(*bits),
        }
    }
}

/// A decoded packed file.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    pub model: NetworkModel,
    pub encodings: Vec<LayerEncoding>,
}

impl PackedModel {
    pub fn compression_spec(&self) -> Result<CompressionSpec> {
        compression_spec(&self.model, &self.encodings)
    }
}

/// Storage accounting of `model` under `encodings`, one entry per layer.
pub fn compression_spec(model: &NetworkModel, encodings: &[LayerEncoding]) -> Result<CompressionSpec> {
    check_len(model, encodings)?;
    let layers = model
        .layers()
        .iter()
        .zip(encodings)
        .map(|(l, e)| match e {
            LayerEncoding::Raw => LayerCost::raw(l.weight.len(), FLOAT_BITS),
            LayerEncoding::Quantized { bits, .. } => LayerCost::quantized(l.weight.len(), *bits),
        })
        .collect();
    CompressionSpec::new(FLOAT_BITS, layers)
}

/// Encodings for `model` given one codebook per quantized layer; layers
/// without a codebook are stored raw.
pub fn encodings_from_codebooks(
    model: &NetworkModel,
    codebooks: &[(BitWidth, Codebook)],
) -> Result<Vec<LayerEncoding>> {
    let mut out = vec![LayerEncoding::Raw; model.layers().len()];
    for (bits, cb) in codebooks {
        let slot = out
            .get_mut(cb.layer)
            .ok_or_else(|| Error::invalid(format!("codebook for missing layer {}", cb.layer)))?;
        *slot = LayerEncoding::Quantized {
            bits: *bits,
            codebook: cb.clone(),
        };
    }
    Ok(out)
}

fn check_len(model: &NetworkModel, encodings: &[LayerEncoding]) -> Result<()> {
    if encodings.len() != model.layers().len() {
        return Err(Error::invalid(format!(
            "{} layer encodings for {} layers",
            encodings.len(),
            model.layers().len()
        )));
    }
    Ok(())
}

pub fn pack(model: &NetworkModel, encodings: &[LayerEncoding]) -> Result<Vec<u8>> {
    check_len(model, encodings)?;
    let mut out = Vec::new();
    out.extend_from_slice(PACKED_MAGIC);
    out.extend_from_slice(&PACKED_VERSION.to_le_bytes());
    put_u32(&mut out, model.input_shape().len());
    for &d in model.input_shape() {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, model.layers().len());
    for (layer, enc) in model.layers().iter().zip(encodings) {
        write_spec(&mut out, &layer.spec);
        match enc {
            LayerEncoding::Raw => {
                out.push(ENC_RAW);
                out.push(FLOAT_BITS as u8);
                put_u32(&mut out, 0);
            }
            LayerEncoding::Quantized { bits, codebook } => {
                out.push(ENC_QUANTIZED);
                out.push(bits.get());
                put_u32(&mut out, codebook.k());
            }
        }
    }
    let header_crc = crc32fast::hash(&out);
    out.extend_from_slice(&header_crc.to_le_bytes());

    let body_start = out.len();
    for (li, (layer, enc)) in model.layers().iter().zip(encodings).enumerate() {
        match enc {
            LayerEncoding::Raw => {
                for &w in layer.weight.data() {
                    out.extend_from_slice(&(w as f32).to_le_bytes());
                }
            }
            LayerEncoding::Quantized { bits, codebook } => {
                if codebook.k() != bits.codebook_size() {
                    return Err(Error::Quantization(format!(
                        "layer {li}: codebook has {} entries, {bits}-bit layers need {}",
                        codebook.k(),
                        bits.codebook_size()
                    )));
                }
                for &c in codebook.centroids() {
                    out.extend_from_slice(&(c as f32).to_le_bytes());
                }
                let indices = layer
                    .weight
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        codebook.index_of(w).map(|k| k as u32).ok_or_else(|| {
                            Error::Quantization(format!(
                                "layer {li}: weight {i} = {w} is not in the codebook (quantization incomplete)"
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.extend_from_slice(&pack_indices(&indices, bits.get() as u32)?);
            }
        }
    }
    for layer in model.layers() {
        for &b in layer.bias.data() {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    let body_crc = crc32fast::hash(&out[body_start..]);
    out.extend_from_slice(&body_crc.to_le_bytes());
    Ok(out)
}

/// Byte budget of one layer inside a packed file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub index: usize,
    pub kind: LayerKind,
    pub weights: usize,
    /// `None` for raw layers.
    pub bits: Option<u8>,
    pub k: usize,
    /// File offset of the layer's payload.
    pub offset: usize,
    pub centroid_bytes: usize,
    pub data_bytes: usize,
    pub padding_bits: usize,
}

impl LayerLayout {
    pub fn payload_bytes(&self) -> usize {
        self.centroid_bytes + self.data_bytes
    }
}

/// Section sizes of a packed file, readable without decoding the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedLayout {
    pub input_shape: Vec<usize>,
    pub header_bytes: usize,
    pub layers: Vec<LayerLayout>,
    pub bias_bytes: usize,
    pub trailer_bytes: usize,
}

impl PackedLayout {
    pub fn payload_bytes(&self) -> usize {
        self.layers.iter().map(LayerLayout::payload_bytes).sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.header_bytes + self.payload_bytes() + self.bias_bytes + self.trailer_bytes
    }

    /// Float storage of all weights at 32 bits, in bytes.
    pub fn float_bytes(&self) -> usize {
        self.layers.iter().map(|l| l.weights * 4).sum()
    }
}

impl fmt::Display for PackedLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5} {:>7} {:>8} {:>4} {:>4} {:>8} {:>10} {:>10} {:>7}",
            "layer", "kind", "weights", "bits", "k", "offset", "codebook_b", "index_b", "pad_bits"
        )?;
        for l in &self.layers {
            let kind = match l.kind {
                LayerKind::Dense => "dense",
                LayerKind::Conv2d => "conv2d",
            };
            let bits = l.bits.map_or_else(|| "raw".to_string(), |b| b.to_string());
            writeln!(
                f,
                "{:>5} {:>7} {:>8} {:>4} {:>4} {:>8} {:>10} {:>10} {:>7}",
                l.index, kind, l.weights, bits, l.k, l.offset, l.centroid_bytes, l.data_bytes, l.padding_bits
            )?;
        }
        writeln!(f, "header bytes:  {}", self.header_bytes)?;
        writeln!(f, "payload bytes: {}", self.payload_bytes())?;
        writeln!(f, "bias bytes:    {}", self.bias_bytes)?;
        writeln!(f, "trailer bytes: {}", self.trailer_bytes)?;
        writeln!(f, "total bytes:   {}", self.total_bytes())?;
        write!(
            f,
            "float/payload: {:.4}",
            self.float_bytes() as f64 / self.payload_bytes() as f64
        )
    }
}

struct Header {
    input_shape: Vec<usize>,
    specs: Vec<LayerSpec>,
    encodings: Vec<(u8, u8, usize)>,
}

fn read_header(r: &mut Reader<'_>) -> Result<Header> {
    if r.take(4)? != PACKED_MAGIC {
        return Err(Error::format("packed model", 0, "bad magic, expected DNQP"));
    }
    let version = r.u32()?;
    if version != PACKED_VERSION {
        return Err(Error::format("packed model", 4, format!("unsupported version {version}")));
    }
    let rank = r.dim()?;
    if rank > 8 {
        return Err(r.err(format!("input rank {rank} too large")));
    }
    let input_shape = (0..rank).map(|_| r.dim()).collect::<Result<Vec<_>>>()?;
    let count = r.dim()?;
    if count > 4096 {
        return Err(r.err(format!("layer count {count} too large")));
    }
    let mut specs = Vec::with_capacity(count);
    let mut encodings = Vec::with_capacity(count);
    for li in 0..count {
        specs.push(read_spec(r)?);
        let at = r.pos();
        let enc = r.u8()?;
        let bits = r.u8()?;
        let k = r.u32()? as usize;
        let ok = match enc {
            ENC_RAW => bits as u32 == FLOAT_BITS && k == 0,
            ENC_QUANTIZED => BitWidth::new(bits).is_ok_and(|b| b.codebook_size() == k),
            _ => false,
        };
        if !ok {
            return Err(Error::format(
                "packed model",
                at,
                format!("layer {li}: bad encoding (kind {enc}, {bits} bits, k {k})"),
            ));
        }
        encodings.push((enc, bits, k));
    }
    let at = r.pos();
    let stored = r.u32()?;
    let computed = crc32fast::hash(&r.consumed()[..at]);
    if stored != computed {
        return Err(Error::format(
            "packed model",
            at,
            format!("header checksum mismatch (stored {stored:08x}, computed {computed:08x})"),
        ));
    }
    Ok(Header {
        input_shape,
        specs,
        encodings,
    })
}

/// Section sizes of a packed file; validates the header but not the payload.
pub fn read_layout(bytes: &[u8]) -> Result<PackedLayout> {
    let mut r = Reader::new(bytes, "packed model");
    let h = read_header(&mut r)?;
    Ok(layout_of(&h, r.pos()))
}

fn layout_of(h: &Header, header_bytes: usize) -> PackedLayout {
    let mut offset = header_bytes;
    let mut layers = Vec::with_capacity(h.specs.len());
    for (i, (spec, &(enc, bits, k))) in h.specs.iter().zip(&h.encodings).enumerate() {
        let n = spec.param_count();
        let (bits, centroid_bytes, data_bytes, padding_bits) = if enc == ENC_RAW {
            (None, 0, n * 4, 0)
        } else {
            let len = packed_len(n, bits as u32);
            (Some(bits), k * 4, len, len * 8 - n * bits as usize)
        };
        layers.push(LayerLayout {
            index: i,
            kind: spec.kind(),
            weights: n,
            bits,
            k,
            offset,
            centroid_bytes,
            data_bytes,
            padding_bits,
        });
        offset += centroid_bytes + data_bytes;
    }
    PackedLayout {
        input_shape: h.input_shape.clone(),
        header_bytes,
        layers,
        bias_bytes: h.specs.iter().map(|s| s.bias_len() * 8).sum(),
        trailer_bytes: 4,
    }
}

pub fn unpack(bytes: &[u8]) -> Result<PackedModel> {
    let mut r = Reader::new(bytes, "packed model");
    let h = read_header(&mut r)?;
    let body_start = r.pos();
    let mut weights = Vec::with_capacity(h.specs.len());
    let mut encodings = Vec::with_capacity(h.specs.len());
    for (li, (spec, &(enc, bits, k))) in h.specs.iter().zip(&h.encodings).enumerate() {
        let n = spec.param_count();
        if enc == ENC_RAW {
            let w = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            weights.push(w);
            encodings.push(LayerEncoding::Raw);
            continue;
        }
        let at = r.pos();
        let centroids = (0..k).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        let codebook = Codebook::new(li, centroids)
            .map_err(|e| Error::format("packed model", at, format!("layer {li}: {e}")))?;
        let at = r.pos();
        let stream = r.take(packed_len(n, bits as u32))?;
        let indices = unpack_indices(stream, n, bits as u32)?;
        let mut w = Vec::with_capacity(n);
        for (i, &idx) in indices.iter().enumerate() {
            let c = codebook.centroids().get(idx as usize).ok_or_else(|| {
                Error::format(
                    "packed model",
                    at + i * bits as usize / 8,
                    format!("layer {li}: index {idx} of weight {i} exceeds codebook size {k}"),
                )
            })?;
            w.push(*c);
        }
        weights.push(w);
        encodings.push(LayerEncoding::Quantized {
            bits: BitWidth::new(bits)?,
            codebook,
        });
    }
    let mut layers = Vec::with_capacity(h.specs.len());
    for (spec, w) in h.specs.into_iter().zip(weights) {
        let b = (0..spec.bias_len()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            weight: Tensor::new(spec.weight_shape(), w)?,
            bias: Tensor::new(vec![spec.bias_len()], b)?,
            spec,
        });
    }
    let at = r.pos();
    let stored = r.u32()?;
    let computed = crc32fast::hash(&bytes[body_start..at]);
    if stored != computed {
        return Err(Error::format(
            "packed model",
            at,
            format!("payload checksum mismatch (stored {stored:08x}, computed {computed:08x})"),
        ));
    }
    if r.remaining() != 0 {
        return Err(r.err(format!("{} trailing bytes", r.remaining())));
    }
    let model = NetworkModel::new(h.input_shape, layers)
        .map_err(|e| Error::format("packed model", 0, format!("inconsistent layer table: {e}")))?;
    Ok(PackedModel { model, encodings })
}

pub fn save_packed(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_packed(path: &Path) -> Result<PackedModel> {
    unpack(&std::fs::read(path)?)
}
