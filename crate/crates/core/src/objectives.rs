//! Losses, exact gradients and the mean-regularized local objective.
//!
//! All losses are sums over examples, not means. A minibatch gradient is
//! rescaled by `n / |batch|` so that its expectation is the full-data gradient.

use nalgebra::DMatrix;
use rand::Rng;

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::vector::ParamVector;

/// Supported model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    /// `l(x, w) = ||x - w||^2`; the parameter has the feature width.
    SquaredErrorMean,
    /// `l = (w·x + b - y)^2` with bias as the last coordinate.
    LinearRegression,
    /// Binary cross-entropy on `sigmoid(w·x + b)`, bias last.
    LogisticRegression,
    /// One tanh hidden layer feeding a logistic output.
    Mlp { hidden: usize },
}

pub const DEFAULT_MLP_WIDTH: usize = 16;

/// Scale of the uniform initialization used by the convex families.
const LINEAR_INIT_SCALE: f64 = 0.1;

/// Family plus the input width it is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub feature_width: usize,
}

/// Smoothness `L` and strong-convexity `mu` of one task's summed loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    pub smoothness: f64,
    pub strong_convexity: f64,
}

/// A view of some or all of a task's examples.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub data: &'a TaskDataset,
    pub indices: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn full(data: &'a TaskDataset) -> Self {
        Self {
            data,
            indices: None,
        }
    }

    pub fn subset(data: &'a TaskDataset, indices: &'a [usize]) -> Self {
        Self {
            data,
            indices: Some(indices),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.map_or(self.data.len(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn for_each(&self, mut f: impl FnMut(&[f64], f64)) {
        let ex = self.data.examples();
        match self.indices {
            None => ex.iter().for_each(|e| f(&e.features, e.label)),
            Some(idx) => idx.iter().for_each(|&i| f(&ex[i].features, ex[i].label)),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn affine(w: &[f64], x: &[f64]) -> f64 {
    let p = x.len();
    w[..p].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[p]
}

impl ModelSpec {
    pub fn new(family: ModelFamily, feature_width: usize) -> Self {
        Self {
            family,
            feature_width,
        }
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        let p = self.feature_width;
        match self.family {
            ModelFamily::SquaredErrorMean => p,
            ModelFamily::LinearRegression | ModelFamily::LogisticRegression => p + 1,
            ModelFamily::Mlp { hidden } => hidden * p + 2 * hidden + 1,
        }
    }

    pub fn is_classifier(&self) -> bool {
        matches!(
            self.family,
            ModelFamily::LogisticRegression | ModelFamily::Mlp { .. }
        )
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self.family, ModelFamily::Mlp { .. })
    }

    fn check(&self, w: &ParamVector, data: &TaskDataset) -> Result<()> {
        w.ensure_dim(self.dim())?;
        if data.width() != self.feature_width {
            return Err(Error::DimensionMismatch {
                expected: self.feature_width,
                actual: data.width(),
            });
        }
        Ok(())
    }

    fn mlp_forward(&self, hidden: usize, w: &[f64], x: &[f64], h: &mut [f64]) -> f64 {
        let p = self.feature_width;
        let (w1, rest) = w.split_at(hidden * p);
        let (b1, rest) = rest.split_at(hidden);
        let (v, c) = rest.split_at(hidden);
        for j in 0..hidden {
            let row = &w1[j * p..(j + 1) * p];
            let a = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[j];
            h[j] = a.tanh();
        }
        v.iter().zip(h.iter()).map(|(a, b)| a * b).sum::<f64>() + c[0]
    }

    /// Model output for one input: the fitted value, or the logit for classifiers.
    pub fn predict(&self, w: &ParamVector, x: &[f64]) -> f64 {
        let w = w.as_slice();
        match self.family {
            ModelFamily::SquaredErrorMean => {
                // Prediction is the estimate itself; only the first coordinate is meaningful for d = 1.
                w[0]
            }
            ModelFamily::LinearRegression | ModelFamily::LogisticRegression => affine(w, x),
            ModelFamily::Mlp { hidden } => {
                let mut h = vec![0.0; hidden];
                self.mlp_forward(hidden, w, x, &mut h)
            }
        }
    }

    fn example_loss(&self, w: &[f64], x: &[f64], y: f64, scratch: &mut [f64]) -> f64 {
        match self.family {
            ModelFamily::SquaredErrorMean => w.iter().zip(x).map(|(a, b)| (b - a) * (b - a)).sum(),
            ModelFamily::LinearRegression => {
                let r = affine(w, x) - y;
                r * r
            }
            ModelFamily::LogisticRegression => {
                let z = affine(w, x);
                softplus(z) - y * z
            }
            ModelFamily::Mlp { hidden } => {
                let z = self.mlp_forward(hidden, w, x, scratch);
                softplus(z) - y * z
            }
        }
    }

    /// Adds the gradient of one example's loss into `acc`.
    fn accumulate_grad(&self, w: &[f64], x: &[f64], y: f64, acc: &mut [f64], scratch: &mut [f64]) {
        let p = self.feature_width;
        match self.family {
            ModelFamily::SquaredErrorMean => {
                for j in 0..p {
                    acc[j] += 2.0 * (w[j] - x[j]);
                }
            }
            ModelFamily::LinearRegression | ModelFamily::LogisticRegression => {
                let z = affine(w, x);
                let r = if self.family == ModelFamily::LinearRegression {
                    2.0 * (z - y)
                } else {
                    sigmoid(z) - y
                };
                for j in 0..p {
                    acc[j] += r * x[j];
                }
                acc[p] += r;
            }
            ModelFamily::Mlp { hidden } => {
                let z = self.mlp_forward(hidden, w, x, scratch);
                let dz = sigmoid(z) - y;
                let v_off = hidden * p + hidden;
                for j in 0..hidden {
                    let h = scratch[j];
                    let da = dz * w[v_off + j] * (1.0 - h * h);
                    let row = &mut acc[j * p..(j + 1) * p];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += da * xi;
                    }
                    acc[hidden * p + j] += da;
                    acc[v_off + j] += dz * h;
                }
                acc[v_off + hidden] += dz;
            }
        }
    }

    fn scratch(&self) -> Vec<f64> {
        match self.family {
            ModelFamily::Mlp { hidden } => vec![0.0; hidden],
            _ => Vec::new(),
        }
    }

    /// Parameters drawn for a fresh model: Xavier-uniform for the MLP weights,
    /// small uniform values for the convex families.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamVector {
        let p = self.feature_width;
        let values = match self.family {
            ModelFamily::Mlp { hidden } => {
                let l1 = (6.0 / (p + hidden) as f64).sqrt();
                let l2 = (6.0 / (hidden + 1) as f64).sqrt();
                let mut v = Vec::with_capacity(self.dim());
                v.extend((0..hidden * p).map(|_| rng.random_range(-l1..=l1)));
                v.extend(std::iter::repeat_n(0.0, hidden));
                v.extend((0..hidden).map(|_| rng.random_range(-l2..=l2)));
                v.push(0.0);
                v
            }
            _ => (0..self.dim())
                .map(|_| rng.random_range(-LINEAR_INIT_SCALE..=LINEAR_INIT_SCALE))
                .collect(),
        };
        ParamVector::new(values).expect("finite init")
    }

    /// `L` and `mu` of the summed loss on `data`; `None` for the MLP.
    pub fn curvature(&self, data: &TaskDataset) -> Option<Curvature> {
        let n = data.len() as f64;
        let gram = |bias: bool| {
            let cols = self.feature_width + usize::from(bias);
            let mut g = DMatrix::<f64>::zeros(cols, cols);
            for ex in data.examples() {
                let mut row = ex.features.clone();
                if bias {
                    row.push(1.0);
                }
                for i in 0..cols {
                    for j in 0..cols {
                        g[(i, j)] += row[i] * row[j];
                    }
                }
            }
            let eig = g.symmetric_eigenvalues();
            (eig.min(), eig.max())
        };
        match self.family {
            ModelFamily::SquaredErrorMean => Some(Curvature {
                smoothness: 2.0 * n,
                strong_convexity: 2.0 * n,
            }),
            ModelFamily::LinearRegression => {
                let (lo, hi) = gram(true);
                Some(Curvature {
                    smoothness: 2.0 * hi,
                    strong_convexity: (2.0 * lo).max(0.0),
                })
            }
            ModelFamily::LogisticRegression => {
                let (_, hi) = gram(true);
                Some(Curvature {
                    smoothness: 0.25 * hi,
                    strong_convexity: 0.0,
                })
            }
            ModelFamily::Mlp { .. } => None,
        }
    }
}

/// `sum_i l(x_i, w)` over the whole dataset.
pub fn empirical_loss(spec: &ModelSpec, w: &ParamVector, data: &TaskDataset) -> Result<f64> {
    spec.check(w, data)?;
    let mut scratch = spec.scratch();
    let ws = w.as_slice();
    Ok(data
        .examples()
        .iter()
        .map(|e| spec.example_loss(ws, &e.features, e.label, &mut scratch))
        .sum())
}

/// Gradient of the batch's summed loss, rescaled by `n / |batch|` for partial batches.
pub fn empirical_grad(spec: &ModelSpec, w: &ParamVector, batch: Batch<'_>) -> Result<ParamVector> {
    spec.check(w, batch.data)?;
    if batch.is_empty() {
        return Err(Error::InvalidData("gradient of an empty batch".to_string()));
    }
    let mut acc = vec![0.0; spec.dim()];
    let mut scratch = spec.scratch();
    let ws = w.as_slice();
    batch.for_each(|x, y| spec.accumulate_grad(ws, x, y, &mut acc, &mut scratch));
    if batch.indices.is_some() && batch.len() != batch.data.len() {
        let factor = batch.data.len() as f64 / batch.len() as f64;
        acc.iter_mut().for_each(|g| *g *= factor);
    }
    ParamVector::new(acc).map_err(|_| Error::NonFinite {
        context: "empirical gradient".to_string(),
    })
}

/// `lambda/2 ||w - w_tilde||^2 + empirical_loss(w)`.
pub fn local_objective(
    spec: &ModelSpec,
    w: &ParamVector,
    w_tilde: &ParamVector,
    data: &TaskDataset,
    lambda: f64,
) -> Result<f64> {
    let reg = 0.5 * lambda * w.distance_sq(w_tilde)?;
    Ok(reg + empirical_loss(spec, w, data)?)
}

/// `grad l(w) + lambda (w - w_tilde)`, with the same batch scaling as [`empirical_grad`].
pub fn local_objective_grad(
    spec: &ModelSpec,
    w: &ParamVector,
    w_tilde: &ParamVector,
    batch: Batch<'_>,
    lambda: f64,
) -> Result<ParamVector> {
    w_tilde.ensure_dim(w.dim())?;
    let g = empirical_grad(spec, w, batch)?;
    let values = g
        .as_slice()
        .iter()
        .zip(w.as_slice().iter().zip(w_tilde.as_slice()))
        .map(|(gi, (wi, ti))| gi + lambda * (wi - ti))
        .collect();
    ParamVector::new(values)
}

/// Fraction of correctly classified examples; `None` for regression families.
pub fn accuracy(spec: &ModelSpec, w: &ParamVector, data: &TaskDataset) -> Result<Option<f64>> {
    spec.check(w, data)?;
    if !spec.is_classifier() {
        return Ok(None);
    }
    let correct = data
        .examples()
        .iter()
        .filter(|e| {
            let predicted = if spec.predict(w, &e.features) >= 0.0 { 1.0 } else { 0.0 };
            predicted == e.label
        })
        .count();
    Ok(Some(correct as f64 / data.len() as f64))
}
