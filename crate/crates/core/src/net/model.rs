use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{Activation, ConvGeometry, LayerDef, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bits used to store one floating-point weight in the compression accounting.
pub const FLOAT_BITS: u32 = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// An ordered stack of dense / conv2d layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl NetworkModel {
    /// Assembles a model, checking that every layer's input matches the
    /// previous layer's output and that tensors have the declared shapes.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::InvalidModel(format!("bad input shape {input_shape:?}")));
        }
        let mut running: usize = input_shape.iter().product();
        for (i, layer) in layers.iter().enumerate() {
            layer.spec.validate()?;
            if layer.spec.input_len() != running {
                return Err(Error::Shape {
                    layer: i,
                    detail: format!(
                        "expects {} inputs but previous stage produces {running}",
                        layer.spec.input_len()
                    ),
                });
            }
            if layer.weight.shape() != layer.spec.weight_shape().as_slice() {
                return Err(Error::Shape {
                    layer: i,
                    detail: format!(
                        "weight tensor {:?} does not match spec {:?}",
                        layer.weight.shape(),
                        layer.spec.weight_shape()
                    ),
                });
            }
            if layer.bias.shape() != [layer.spec.bias_len()] {
                return Err(Error::Shape {
                    layer: i,
                    detail: format!("bias tensor {:?} should be [{}]", layer.bias.shape(), layer.spec.bias_len()),
                });
            }
            running = layer.spec.output_len();
        }
        Ok(Self { input_shape, layers })
    }

    /// Builds a freshly initialised model from architecture entries. Weights
    /// are drawn from `U(-a, a)` with `a = sqrt(6 / fan_in)`; biases start at 0.
    /// The final layer has no activation.
    pub fn build(input_shape: &[usize], defs: &[LayerDef], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(defs.len());
        for (i, def) in defs.iter().enumerate() {
            let activation = if i + 1 == defs.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            let spec = match *def {
                LayerDef::Dense { units } => LayerSpec::dense(shape.iter().product(), units, activation),
                LayerDef::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let [c, h, w] = shape[..] else {
                        return Err(Error::Shape {
                            layer: i,
                            detail: format!("conv2d needs a [channels, height, width] input, got {shape:?}"),
                        });
                    };
                    LayerSpec::conv2d(
                        ConvGeometry {
                            in_channels: c,
                            out_channels,
                            kernel_h: kernel,
                            kernel_w: kernel,
                            stride,
                            padding,
                            in_h: h,
                            in_w: w,
                        },
                        activation,
                    )
                }
            };
            spec.validate().map_err(|e| Error::Shape {
                layer: i,
                detail: e.to_string(),
            })?;
            let bound = (6.0 / spec.fan_in() as f64).sqrt();
            let n = spec.param_count();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            let weight = Tensor::new(spec.weight_shape(), data)?;
            let bias = Tensor::zeros(vec![spec.bias_len()]);
            shape = spec.output_shape();
            layers.push(Layer { spec, weight, bias });
        }
        Self::new(input_shape.to_vec(), layers)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn num_outputs(&self) -> usize {
        self.layers.last().map(|l| l.spec.output_len()).unwrap_or(0)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn float_bits(&self) -> u32 {
        FLOAT_BITS
    }

    /// Indices of layers whose weights take part in quantization.
    pub fn quantizable_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.spec.quantizable)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }
}
