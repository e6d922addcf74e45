use crate::error::{Error, Result};
use crate::net::{LayerKind, LayerSpec, NetworkModel};

pub const EMBED_DIM: usize = 7;

/// Per-layer features, each in `[0, 1]`: position `l/L`, log weight count,
/// log fan-in, log fan-out, log kernel area, and a dense/conv one-hot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerEmbedding(pub [f64; EMBED_DIM]);

fn log_scaled(v: usize, cap: f64) -> f64 {
    ((1.0 + v as f64).ln() / (1.0 + cap).ln()).clamp(0.0, 1.0)
}

pub fn embed_layer(spec: &LayerSpec, position: usize, count: usize) -> LayerEmbedding {
    let (kh, kw) = spec.kernel();
    let area = if spec.kind() == LayerKind::Conv2d { kh * kw } else { 0 };
    let conv = (spec.kind() == LayerKind::Conv2d) as u8 as f64;
    LayerEmbedding([
        (position + 1) as f64 / count as f64,
        log_scaled(spec.param_count(), (1u64 << 24) as f64),
        log_scaled(spec.fan_in(), 65536.0),
        log_scaled(spec.fan_out(), 65536.0),
        log_scaled(area, 121.0),
        1.0 - conv,
        conv,
    ])
}

/// Indices of the layers whose bit-width is searched: every quantizable
/// layer, minus dense layers when those have a fixed bit-width.
pub fn searched_layers(model: &NetworkModel, fc_fixed: bool) -> Vec<usize> {
    model
        .quantizable_layers()
        .into_iter()
        .filter(|&i| !(fc_fixed && model.layers()[i].spec.kind() == LayerKind::Dense))
        .collect()
}

pub fn embed_model(model: &NetworkModel, fc_fixed: bool) -> Result<Vec<LayerEmbedding>> {
    let layers = searched_layers(model, fc_fixed);
    if layers.is_empty() {
        return Err(Error::InvalidModel("no layers to search bit-widths for".into()));
    }
    Ok(layers
        .iter()
        .enumerate()
        .map(|(pos, &li)| embed_layer(&model.layers()[li].spec, pos, layers.len()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LayerDef;

    fn cifar_shaped(seed: u64) -> NetworkModel {
        let conv = |c| LayerDef::Conv2d {
            out_channels: c,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        NetworkModel::build(
            &[3, 8, 8],
            &[conv(8), conv(8), conv(16), LayerDef::Dense { units: 32 }, LayerDef::Dense { units: 10 }],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn three_conv_layers_are_searched() {
        let m = cifar_shaped(1);
        let e = embed_model(&m, true).unwrap();
        assert_eq!(e.len(), 3);
        assert!((e[0].0[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(embed_model(&m, false).unwrap().len(), 5);
    }

    #[test]
    fn embeddings_depend_only_on_specs() {
        assert_eq!(embed_model(&cifar_shaped(1), true).unwrap(), embed_model(&cifar_shaped(2), true).unwrap());
    }

    #[test]
    fn features_are_unit_scaled() {
        for e in embed_model(&cifar_shaped(1), false).unwrap() {
            assert!(e.0.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn dense_only_model_with_fixed_fc_has_nothing_to_search() {
        let m = NetworkModel::build(&[4], &[LayerDef::Dense { units: 2 }], 0).unwrap();
        assert!(embed_model(&m, true).is_err());
    }
}
