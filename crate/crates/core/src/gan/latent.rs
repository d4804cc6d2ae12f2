//! Gaussian latents and resampling-based truncation.

use rand::Rng;
use rand_distr::StandardNormal;

use super::generator::Z_DIM;
use crate::error::{Error, Result};

/// Redraws every component with `|z_i| > threshold` from the standard normal
/// until it falls inside, giving a per-component truncated Gaussian.
pub fn truncate_latent(z: &[f32], threshold: f64, rng: &mut impl Rng) -> Result<Vec<f32>> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::InvalidInput(format!("truncation threshold must be positive, got {threshold}")));
    }
    Ok(z.iter()
        .map(|&v| {
            let mut x = v;
            while x.abs() as f64 > threshold {
                x = rng.sample(StandardNormal);
            }
            x
        })
        .collect())
}

/// A standard-normal latent, optionally truncated.
pub fn sample_latent(truncation: Option<f64>, rng: &mut impl Rng) -> Result<Vec<f32>> {
    let z: Vec<f32> = (0..Z_DIM).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    match truncation {
        Some(t) => truncate_latent(&z, t, rng),
        None => Ok(z),
    }
}
