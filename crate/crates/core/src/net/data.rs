//! Labelled datasets and the seeded synthetic generator used at desk scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if inputs.shape().len() < 2 {
            return Err(Error::invalid("dataset inputs need a leading batch dimension"));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// The first `n` samples (or all of them when `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        self.select(&(0..n).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplits {
    pub train: Dataset,
    pub eval: Dataset,
}

/// Parameters of the Gaussian-blob generator.
///
/// Every class owns a prototype drawn from `N(0, 1)` per input element; a
/// sample is `separation * prototype + noise * N(0, 1)`. Labels cycle through
/// the classes so splits are balanced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub input_shape: Vec<usize>,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_separation() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn new(num_classes: usize, n_train: usize, n_eval: usize, input_shape: Vec<usize>) -> Self {
        Self {
            num_classes,
            n_train,
            n_eval,
            input_shape,
            separation: default_separation(),
            noise: default_noise(),
        }
    }
}

pub fn make_synthetic_dataset(seed: u64, spec: &SyntheticSpec) -> Result<DataSplits> {
    if spec.num_classes == 0 || spec.n_train == 0 || spec.n_eval == 0 {
        return Err(Error::invalid("synthetic dataset counts must be positive"));
    }
    if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
        return Err(Error::invalid(format!("bad input shape {:?}", spec.input_shape)));
    }
    if !(spec.separation.is_finite() && spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::invalid("separation and noise must be finite, noise non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim: usize = spec.input_shape.iter().product();
    let prototypes: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let draw = |n: usize, split: Split, rng: &mut ChaCha8Rng| -> Result<Dataset> {
        let mut data = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % spec.num_classes;
            labels.push(class);
            for &p in &prototypes[class] {
                let z: f64 = rng.sample(StandardNormal);
                data.push(spec.separation * p + spec.noise * z);
            }
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&spec.input_shape);
        Dataset::new(Tensor::new(shape, data)?, labels, spec.num_classes, split)
    };
    let train = draw(spec.n_train, Split::Train, &mut rng)?;
    let eval = draw(spec.n_eval, Split::Eval, &mut rng)?;
    Ok(DataSplits { train, eval })
}
