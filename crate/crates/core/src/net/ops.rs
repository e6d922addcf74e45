//! Forward / backward passes, softmax cross-entropy and the masked SGD update.

use rayon::prelude::*;

use super::data::Dataset;
use super::layer::{Activation, LayerGeometry, LayerSpec};
use super::model::NetworkModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub loss: f64,
}

/// Per-layer gradients of the mean cross-entropy loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub loss: f64,
}

struct Trace {
    /// `acts[l]` is the input of layer `l`; the last entry holds the logits.
    acts: Vec<Vec<f64>>,
    /// Pre-activation outputs of every layer.
    pre: Vec<Vec<f64>>,
}

fn check_inputs(model: &NetworkModel, inputs: &Tensor) -> Result<usize> {
    if inputs.shape().len() < 2 || inputs.row_len() != model.input_len() {
        return Err(Error::Shape {
            layer: 0,
            detail: format!(
                "batch shape {:?} does not match model input {:?}",
                inputs.shape(),
                model.input_shape()
            ),
        });
    }
    Ok(inputs.rows())
}

fn affine_forward(spec: &LayerSpec, w: &[f64], b: &[f64], x: &[f64], n: usize, out: &mut [f64]) {
    let in_len = spec.input_len();
    let out_len = spec.output_len();
    match spec.geometry {
        LayerGeometry::Dense { fan_in, fan_out } => {
            for s in 0..n {
                let xs = &x[s * in_len..(s + 1) * in_len];
                let os = &mut out[s * out_len..(s + 1) * out_len];
                for o in 0..fan_out {
                    let row = &w[o * fan_in..(o + 1) * fan_in];
                    os[o] = b[o] + row.iter().zip(xs).map(|(a, c)| a * c).sum::<f64>();
                }
            }
        }
        LayerGeometry::Conv2d(g) => {
            let (oh, ow) = (g.out_h(), g.out_w());
            for s in 0..n {
                let xs = &x[s * in_len..(s + 1) * in_len];
                let os = &mut out[s * out_len..(s + 1) * out_len];
                for oc in 0..g.out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = b[oc];
                            for ic in 0..g.in_channels {
                                for ky in 0..g.kernel_h {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    if iy < 0 || iy >= g.in_h as isize {
                                        continue;
                                    }
                                    let wrow = ((oc * g.in_channels + ic) * g.kernel_h + ky) * g.kernel_w;
                                    let xrow = (ic * g.in_h + iy as usize) * g.in_w;
                                    for kx in 0..g.kernel_w {
                                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                        if ix < 0 || ix >= g.in_w as isize {
                                            continue;
                                        }
                                        acc += w[wrow + kx] * xs[xrow + ix as usize];
                                    }
                                }
                            }
                            os[(oc * oh + oy) * ow + ox] = acc;
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates weight / bias gradients and (optionally) the input gradient.
#[allow(clippy::too_many_arguments)]
fn affine_backward(
    spec: &LayerSpec,
    w: &[f64],
    x: &[f64],
    dout: &[f64],
    n: usize,
    dw: &mut [f64],
    db: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let in_len = spec.input_len();
    let out_len = spec.output_len();
    match spec.geometry {
        LayerGeometry::Dense { fan_in, fan_out } => {
            for s in 0..n {
                let xs = &x[s * in_len..(s + 1) * in_len];
                let ds = &dout[s * out_len..(s + 1) * out_len];
                for o in 0..fan_out {
                    let g = ds[o];
                    db[o] += g;
                    let dwrow = &mut dw[o * fan_in..(o + 1) * fan_in];
                    for (d, xv) in dwrow.iter_mut().zip(xs) {
                        *d += g * xv;
                    }
                }
                if let Some(dx) = dx.as_deref_mut() {
                    let dxs = &mut dx[s * in_len..(s + 1) * in_len];
                    for o in 0..fan_out {
                        let g = ds[o];
                        let row = &w[o * fan_in..(o + 1) * fan_in];
                        for (d, wv) in dxs.iter_mut().zip(row) {
                            *d += g * wv;
                        }
                    }
                }
            }
        }
        LayerGeometry::Conv2d(g) => {
            let (oh, ow) = (g.out_h(), g.out_w());
            for s in 0..n {
                let xs = &x[s * in_len..(s + 1) * in_len];
                let ds = &dout[s * out_len..(s + 1) * out_len];
                let mut dxs = dx.as_deref_mut().map(|d| &mut d[s * in_len..(s + 1) * in_len]);
                for oc in 0..g.out_channels {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let grad = ds[(oc * oh + oy) * ow + ox];
                            db[oc] += grad;
                            for ic in 0..g.in_channels {
                                for ky in 0..g.kernel_h {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    if iy < 0 || iy >= g.in_h as isize {
                                        continue;
                                    }
                                    let wrow = ((oc * g.in_channels + ic) * g.kernel_h + ky) * g.kernel_w;
                                    let xrow = (ic * g.in_h + iy as usize) * g.in_w;
                                    for kx in 0..g.kernel_w {
                                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                        if ix < 0 || ix >= g.in_w as isize {
                                            continue;
                                        }
                                        let xi = xrow + ix as usize;
                                        dw[wrow + kx] += grad * xs[xi];
                                        if let Some(d) = dxs.as_deref_mut() {
                                            d[xi] += grad * w[wrow + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn run(model: &NetworkModel, inputs: &Tensor) -> Result<Trace> {
    let n = check_inputs(model, inputs)?;
    let mut acts = Vec::with_capacity(model.layers().len() + 1);
    let mut pre = Vec::with_capacity(model.layers().len());
    acts.push(inputs.data().to_vec());
    for layer in model.layers() {
        let spec = &layer.spec;
        let mut out = vec![0.0; n * spec.output_len()];
        affine_forward(spec, layer.weight.data(), layer.bias.data(), acts.last().unwrap(), n, &mut out);
        let post = match spec.activation {
            Activation::Identity => out.clone(),
            Activation::Relu => out.iter().map(|&v| v.max(0.0)).collect(),
        };
        pre.push(out);
        acts.push(post);
    }
    Ok(Trace { acts, pre })
}

/// Mean softmax cross-entropy plus `d loss / d logits`.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut total = 0.0;
    for (s, &y) in labels.iter().enumerate() {
        let z = &logits[s * classes..(s + 1) * classes];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        total += lse - z[y];
        let g = &mut grad[s * classes..(s + 1) * classes];
        for (c, gc) in g.iter_mut().enumerate() {
            let p = (z[c] - lse).exp();
            *gc = (p - if c == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (total / n as f64, grad)
}

fn check_labels(model: &NetworkModel, batch: &Dataset) -> Result<()> {
    if batch.num_classes != model.num_outputs() {
        return Err(Error::Shape {
            layer: model.layers().len() - 1,
            detail: format!(
                "model emits {} logits but dataset has {} classes",
                model.num_outputs(),
                batch.num_classes
            ),
        });
    }
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

/// Logits for a batch of inputs, no loss.
pub fn logits(model: &NetworkModel, inputs: &Tensor) -> Result<Tensor> {
    let n = check_inputs(model, inputs)?;
    let trace = run(model, inputs)?;
    Tensor::new(vec![n, model.num_outputs()], trace.acts.into_iter().last().unwrap())
}

pub fn forward(model: &NetworkModel, batch: &Dataset) -> Result<ForwardOutput> {
    check_labels(model, batch)?;
    let logits = logits(model, &batch.inputs)?;
    let (loss, _) = softmax_cross_entropy(logits.data(), &batch.labels, batch.num_classes);
    Ok(ForwardOutput { logits, loss })
}

pub fn backward(model: &NetworkModel, batch: &Dataset) -> Result<Gradients> {
    check_labels(model, batch)?;
    let n = batch.len();
    let trace = run(model, &batch.inputs)?;
    let (loss, mut upstream) = softmax_cross_entropy(trace.acts.last().unwrap(), &batch.labels, batch.num_classes);

    let layers = model.layers();
    let mut weights: Vec<Tensor> = layers.iter().map(|l| Tensor::zeros(l.weight.shape().to_vec())).collect();
    let mut biases: Vec<Tensor> = layers.iter().map(|l| Tensor::zeros(l.bias.shape().to_vec())).collect();
    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        if layer.spec.activation == Activation::Relu {
            for (g, &p) in upstream.iter_mut().zip(&trace.pre[li]) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let mut dx = if li > 0 {
            Some(vec![0.0; n * layer.spec.input_len()])
        } else {
            None
        };
        affine_backward(
            &layer.spec,
            layer.weight.data(),
            &trace.acts[li],
            &upstream,
            n,
            weights[li].data_mut(),
            biases[li].data_mut(),
            dx.as_deref_mut(),
        );
        if let Some(dx) = dx {
            upstream = dx;
        }
    }
    Ok(Gradients { weights, biases, loss })
}

/// `w <- w - lr * g * m` for weights, plain SGD for biases.
///
/// Weights whose mask entry is 0 are not touched at all, so they stay
/// bit-identical regardless of the gradient value.
pub fn sgd_step(model: &mut NetworkModel, grads: &Gradients, lr: f64, masks: Option<&[Tensor]>) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    let nl = model.layers().len();
    if grads.weights.len() != nl || grads.biases.len() != nl {
        return Err(Error::invalid("gradient list does not match layer count"));
    }
    if let Some(masks) = masks {
        if masks.len() != nl {
            return Err(Error::invalid("mask list does not match layer count"));
        }
        for (i, (m, l)) in masks.iter().zip(model.layers()).enumerate() {
            if !m.same_shape(&l.weight) {
                return Err(Error::Shape {
                    layer: i,
                    detail: format!("mask {:?} vs weight {:?}", m.shape(), l.weight.shape()),
                });
            }
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::invalid(format!("mask for layer {i} has entries outside {{0, 1}}")));
            }
        }
    }
    for (i, layer) in model.layers_mut().iter_mut().enumerate() {
        let g = grads.weights[i].data();
        let w = layer.weight.data_mut();
        match masks {
            Some(masks) => {
                for ((wv, &gv), &mv) in w.iter_mut().zip(g).zip(masks[i].data()) {
                    if mv != 0.0 {
                        *wv -= lr * gv * mv;
                    }
                }
            }
            None => {
                for (wv, &gv) in w.iter_mut().zip(g) {
                    *wv -= lr * gv;
                }
            }
        }
        for (bv, &gv) in layer.bias.data_mut().iter_mut().zip(grads.biases[i].data()) {
            *bv -= lr * gv;
        }
    }
    Ok(())
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const EVAL_CHUNK: usize = 256;

/// Fraction of samples whose arg-max logit equals the label (ties resolve to
/// the lowest class index). Chunks are evaluated in parallel.
pub fn accuracy(model: &NetworkModel, data: &Dataset) -> Result<f64> {
    check_labels(model, data)?;
    check_inputs(model, &data.inputs)?;
    let n = data.len();
    let starts: Vec<usize> = (0..n).step_by(EVAL_CHUNK).collect();
    let counts = starts
        .par_iter()
        .map(|&start| -> Result<usize> {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let inputs = data.inputs.gather_rows(&idx);
            let z = logits(model, &inputs)?;
            Ok(idx
                .iter()
                .enumerate()
                .filter(|(r, &i)| argmax(z.row(*r)) == data.labels[i])
                .count())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(counts.iter().sum::<usize>() as f64 / n as f64)
}

/// Mean loss over a dataset, evaluated in chunks.
pub fn mean_loss(model: &NetworkModel, data: &Dataset) -> Result<f64> {
    check_labels(model, data)?;
    let n = data.len();
    let starts: Vec<usize> = (0..n).step_by(EVAL_CHUNK).collect();
    let sums = starts
        .par_iter()
        .map(|&start| -> Result<f64> {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let out = forward(model, &data.select(&idx))?;
            Ok(out.loss * idx.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sums.iter().sum::<f64>() / n as f64)
}
