use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Conv2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

/// Geometry of a 2-D convolution over a `[channels, height, width]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeometry {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.out_channels,
            self.kernel_h,
            self.kernel_w,
            self.stride,
            self.in_h,
            self.in_w,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidModel(format!("conv geometry has a zero dimension: {self:?}")));
        }
        if self.kernel_h > self.in_h + 2 * self.padding || self.kernel_w > self.in_w + 2 * self.padding {
            return Err(Error::InvalidModel(format!("conv kernel larger than padded input: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerGeometry {
    Dense { fan_in: usize, fan_out: usize },
    Conv2d(ConvGeometry),
}

/// Static description of one weight layer.
///
/// Weight shapes are `[fan_out, fan_in]` for dense layers and
/// `[out_channels, in_channels, kernel_h, kernel_w]` for convolutions. Biases
/// have one entry per output unit/channel and never count towards
/// [`LayerSpec::param_count`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub geometry: LayerGeometry,
    pub activation: Activation,
    pub quantizable: bool,
}

impl LayerSpec {
    pub fn dense(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            geometry: LayerGeometry::Dense { fan_in, fan_out },
            activation,
            quantizable: true,
        }
    }

    pub fn conv2d(geometry: ConvGeometry, activation: Activation) -> Self {
        Self {
            geometry: LayerGeometry::Conv2d(geometry),
            activation,
            quantizable: true,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self.geometry {
            LayerGeometry::Dense { .. } => LayerKind::Dense,
            LayerGeometry::Conv2d(_) => LayerKind::Conv2d,
        }
    }

    /// Inputs feeding one output unit.
    pub fn fan_in(&self) -> usize {
        match self.geometry {
            LayerGeometry::Dense { fan_in, .. } => fan_in,
            LayerGeometry::Conv2d(g) => g.in_channels * g.kernel_h * g.kernel_w,
        }
    }

    /// Output units (dense) or output channels (conv).
    pub fn fan_out(&self) -> usize {
        match self.geometry {
            LayerGeometry::Dense { fan_out, .. } => fan_out,
            LayerGeometry::Conv2d(g) => g.out_channels,
        }
    }

    pub fn kernel(&self) -> (usize, usize) {
        match self.geometry {
            LayerGeometry::Dense { .. } => (1, 1),
            LayerGeometry::Conv2d(g) => (g.kernel_h, g.kernel_w),
        }
    }

    /// Exact number of weight scalars `n_l`.
    pub fn param_count(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn bias_len(&self) -> usize {
        self.fan_out()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match self.geometry {
            LayerGeometry::Dense { fan_in, fan_out } => vec![fan_out, fan_in],
            LayerGeometry::Conv2d(g) => vec![g.out_channels, g.in_channels, g.kernel_h, g.kernel_w],
        }
    }

    pub fn input_len(&self) -> usize {
        match self.geometry {
            LayerGeometry::Dense { fan_in, .. } => fan_in,
            LayerGeometry::Conv2d(g) => g.in_channels * g.in_h * g.in_w,
        }
    }

    pub fn output_shape(&self) -> Vec<usize> {
        match self.geometry {
            LayerGeometry::Dense { fan_out, .. } => vec![fan_out],
            LayerGeometry::Conv2d(g) => vec![g.out_channels, g.out_h(), g.out_w()],
        }
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self.geometry {
            LayerGeometry::Dense { fan_in, fan_out } => {
                if fan_in == 0 || fan_out == 0 {
                    return Err(Error::InvalidModel(format!(
                        "dense layer {fan_in}x{fan_out} has a zero dimension"
                    )));
                }
                Ok(())
            }
            LayerGeometry::Conv2d(g) => g.validate(),
        }
    }
}

/// Architecture entry as written in configuration files; resolved against the
/// running input shape by [`crate::net::NetworkModel::build`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerDef {
    Dense {
        units: usize,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
}

fn one() -> usize {
    1
}
