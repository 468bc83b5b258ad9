#![allow(dead_code)]

use pmtl_core::data::{Example, TaskDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small logistic federation: task `k` labels `x` by the sign of
/// `(u + spread * v_k) . x` for a shared `u` and task-specific `v_k`.
pub fn logistic_tasks(m: usize, n: usize, width: usize, spread: f64, seed: u64) -> Vec<TaskDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shared: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
    (0..m)
        .map(|k| {
            let w: Vec<f64> = shared
                .iter()
                .map(|s| s + spread * rng.random_range(-1.0..1.0))
                .collect();
            let examples = (0..n)
                .map(|_| {
                    let x: Vec<f64> = (0..width).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let z: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                    Example::new(x, if z > 0.0 { 1.0 } else { 0.0 })
                })
                .collect();
            TaskDataset::new(k, examples).unwrap()
        })
        .collect()
}

/// Scalar or vector points per task for mean estimation.
pub fn point_tasks(m: usize, n: usize, width: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            let centre: Vec<f64> = (0..width).map(|_| rng.random_range(-2.0..2.0)).collect();
            (0..n)
                .map(|_| centre.iter().map(|c| c + rng.random_range(-0.5..0.5)).collect())
                .collect()
        })
        .collect()
}

pub fn datasets(points: &[Vec<Vec<f64>>]) -> Vec<TaskDataset> {
    points
        .iter()
        .enumerate()
        .map(|(k, p)| TaskDataset::from_points(k, p).unwrap())
        .collect()
}
