use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::vector::ParamVector;

/// Scales `g` by `min(1, gamma / ||g||)`.
///
/// The result's computed norm never exceeds `gamma`, which makes the
/// operation exactly idempotent. The zero vector maps to itself.
pub fn clip(g: &ParamVector, gamma: f64) -> ParamVector {
    let norm = g.l2_norm();
    if norm <= gamma {
        return g.clone();
    }
    let mut factor = gamma / norm;
    loop {
        let scaled = g.scale(factor).expect("shrinking a finite vector stays finite");
        if scaled.l2_norm() <= gamma {
            return scaled;
        }
        factor = factor.next_down();
    }
}

/// `dim` i.i.d. draws from `N(0, sigma^2)`.
pub fn noise_vector<R: Rng>(dim: usize, sigma: f64, rng: &mut R) -> Result<ParamVector> {
    ParamVector::new(
        (0..dim)
            .map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect(),
    )
}

/// Adds per-coordinate Gaussian noise of std `sigma`. `sigma == 0` returns the
/// input untouched and consumes no randomness.
pub fn gaussian_mechanism<R: Rng>(
    mean_update: &ParamVector,
    sigma: f64,
    rng: &mut R,
) -> Result<ParamVector> {
    if sigma == 0.0 {
        return Ok(mean_update.clone());
    }
    mean_update.add(&noise_vector(mean_update.dim(), sigma, rng)?)
}
