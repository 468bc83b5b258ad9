//! Synthetic heterogeneous logistic federations.
//!
//! Task `k` labels Gaussian features by the sign of `w_k . x`, where
//! `w_k = u + h v_k` for a shared unit vector `u` and a per-task unit vector
//! `v_k`. `h = 0` gives a homogeneous federation.

use pmtl_core::data::{Example, TaskDataset, TaskSplits};
use pmtl_core::rng::{Purpose, Streams};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub tasks: usize,
    pub examples_per_task: usize,
    pub feature_dim: usize,
    /// Scale `h` of the task-specific part of each true weight.
    pub heterogeneity: f64,
    /// Probability that a label is flipped.
    pub label_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            tasks: 100,
            examples_per_task: 50,
            feature_dim: 10,
            heterogeneity: 2.0,
            label_noise: 0.05,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.tasks == 0 || self.feature_dim == 0 {
            return bad("synthetic federation needs at least one task and one feature".into());
        }
        if self.examples_per_task < 2 {
            return bad(format!(
                "synthetic.examples_per_task = {} must be at least 2",
                self.examples_per_task
            ));
        }
        if !(self.heterogeneity >= 0.0 && self.heterogeneity.is_finite()) {
            return bad(format!("synthetic.heterogeneity = {} must be >= 0", self.heterogeneity));
        }
        if !(0.0..=0.5).contains(&self.label_noise) {
            return bad(format!("synthetic.label_noise = {} must lie in [0, 0.5]", self.label_noise));
        }
        Ok(())
    }
}

/// A generated federation with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFederation {
    /// Full per-task datasets, before splitting.
    pub tasks: Vec<TaskDataset>,
    pub splits: Vec<TaskSplits>,
    pub true_weights: Vec<Vec<f64>>,
}

fn gaussian_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vector<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v = gaussian_vector(dim, rng);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Deterministic in `seed`; splits are 80/10/10 per task.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticFederation> {
    spec.validate()?;
    let streams = Streams::new(seed);
    let shared = unit_vector(spec.feature_dim, &mut streams.stream(Purpose::Data, 0, 0));
    let mut tasks = Vec::with_capacity(spec.tasks);
    let mut true_weights = Vec::with_capacity(spec.tasks);
    for k in 0..spec.tasks {
        let mut rng = streams.stream(Purpose::Data, k as u64, 1);
        let own = unit_vector(spec.feature_dim, &mut rng);
        let w: Vec<f64> = shared
            .iter()
            .zip(&own)
            .map(|(u, v)| u + spec.heterogeneity * v)
            .collect();
        let examples = (0..spec.examples_per_task)
            .map(|_| {
                let x = gaussian_vector(spec.feature_dim, &mut rng);
                let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                let mut y = z > 0.0;
                if rng.random_bool(spec.label_noise) {
                    y = !y;
                }
                Example::new(x, if y { 1.0 } else { 0.0 })
            })
            .collect();
        tasks.push(TaskDataset::new(k, examples)?);
        true_weights.push(w);
    }
    let splits = tasks
        .iter()
        .map(|t| TaskSplits::split(t, &streams))
        .collect::<pmtl_core::Result<_>>()?;
    Ok(SyntheticFederation {
        tasks,
        splits,
        true_weights,
    })
}

/// Mean angle in degrees over all pairs of vectors.
pub fn mean_pairwise_angle(weights: &[Vec<f64>]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..weights.len() {
        for j in i + 1..weights.len() {
            let dot: f64 = weights[i].iter().zip(&weights[j]).map(|(a, b)| a * b).sum();
            let cos = (dot / (norm(&weights[i]) * norm(&weights[j]))).clamp(-1.0, 1.0);
            total += cos.acos().to_degrees();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}
