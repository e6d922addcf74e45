//! Float checkpoint container.
//!
//! Layout (all integers little-endian `u32` unless noted):
//!
//! ```text
//! "DNQ1" | engine version | input rank | input dims... | layer count
//! per layer: kind u8 | activation u8 | quantizable u8 | geometry dims...
//!            (dense: fan_in fan_out; conv: in_c out_c kh kw stride padding in_h in_w)
//! per layer: weights as f64 | bias as f64
//! ```

use std::path::Path;

use super::layer::{Activation, ConvGeometry, LayerGeometry, LayerSpec};
use super::model::{Layer, NetworkModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wire::{put_u32, Reader};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DNQ1";
pub const ENGINE_VERSION: u32 = 1;

pub(crate) fn write_spec(out: &mut Vec<u8>, spec: &LayerSpec) {
    match spec.geometry {
        LayerGeometry::Dense { fan_in, fan_out } => {
            out.push(0);
            out.push(activation_code(spec.activation));
            out.push(spec.quantizable as u8);
            put_u32(out, fan_in);
            put_u32(out, fan_out);
        }
        LayerGeometry::Conv2d(g) => {
            out.push(1);
            out.push(activation_code(spec.activation));
            out.push(spec.quantizable as u8);
            for v in [
                g.in_channels,
                g.out_channels,
                g.kernel_h,
                g.kernel_w,
                g.stride,
                g.padding,
                g.in_h,
                g.in_w,
            ] {
                put_u32(out, v);
            }
        }
    }
}

fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
    }
}

pub(crate) fn read_spec(r: &mut Reader<'_>) -> Result<LayerSpec> {
    let at = r.pos();
    let kind = r.u8()?;
    let activation = match r.u8()? {
        0 => Activation::Identity,
        1 => Activation::Relu,
        other => return Err(r.err(format!("unknown activation code {other}"))),
    };
    let quantizable = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(r.err(format!("bad quantizable flag {other}"))),
    };
    let geometry = match kind {
        0 => LayerGeometry::Dense {
            fan_in: r.dim()?,
            fan_out: r.dim()?,
        },
        1 => {
            let in_channels = r.dim()?;
            let out_channels = r.dim()?;
            let kernel_h = r.dim()?;
            let kernel_w = r.dim()?;
            let stride = r.dim()?;
            let padding = r.u32()? as usize;
            let in_h = r.dim()?;
            let in_w = r.dim()?;
            LayerGeometry::Conv2d(ConvGeometry {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                in_h,
                in_w,
            })
        }
        other => return Err(Error::format("layer table", at, format!("unknown layer kind {other}"))),
    };
    let spec = LayerSpec {
        geometry,
        activation,
        quantizable,
    };
    spec.validate()
        .map_err(|e| Error::format("layer table", at, e.to_string()))?;
    Ok(spec)
}

pub fn encode_checkpoint(model: &NetworkModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&ENGINE_VERSION.to_le_bytes());
    put_u32(&mut out, model.input_shape().len());
    for &d in model.input_shape() {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, model.layers().len());
    for layer in model.layers() {
        write_spec(&mut out, &layer.spec);
    }
    for layer in model.layers() {
        for v in layer.weight.data().iter().chain(layer.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkModel> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", 0, "bad magic, expected DNQ1"));
    }
    let version = r.u32()?;
    if version != ENGINE_VERSION {
        return Err(Error::format("checkpoint", 4, format!("unsupported engine version {version}")));
    }
    let rank = r.dim()?;
    if rank > 8 {
        return Err(r.err(format!("input rank {rank} too large")));
    }
    let input_shape = (0..rank).map(|_| r.dim()).collect::<Result<Vec<_>>>()?;
    let count = r.dim()?;
    let specs = (0..count).map(|_| read_spec(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut layers = Vec::with_capacity(count);
    for spec in specs {
        let w = (0..spec.param_count()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let b = (0..spec.bias_len()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Layer {
            weight: Tensor::new(spec.weight_shape(), w)?,
            bias: Tensor::new(vec![spec.bias_len()], b)?,
            spec,
        });
    }
    if r.remaining() != 0 {
        return Err(r.err(format!("{} trailing bytes", r.remaining())));
    }
    NetworkModel::new(input_shape, layers)
}

pub fn save_checkpoint(model: &NetworkModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkModel> {
    decode_checkpoint(&std::fs::read(path)?)
}
