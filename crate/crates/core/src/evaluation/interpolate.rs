//! Linear interpolation of either the condition or the latent.

use serde::{Deserialize, Serialize};

use crate::data_pipeline::FaceImage;
use crate::error::{Error, Result};
use crate::gan::GanModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpolationTarget {
    /// Interpolate `c` with `z` fixed.
    ConditionC,
    /// Interpolate `z` with `c` fixed.
    LatentZ,
}

/// A row of `n_steps` faces from endpoint `a` to endpoint `b` inclusive.
pub fn interpolate_grid(
    gan: &GanModel,
    a: &[f32],
    b: &[f32],
    which: InterpolationTarget,
    fixed_other: &[f32],
    n_steps: usize,
) -> Result<Vec<FaceImage>> {
    if n_steps < 2 {
        return Err(Error::InvalidInput(format!("interpolation needs at least 2 steps, got {n_steps}")));
    }
    if a.len() != b.len() {
        return Err(Error::InvalidInput("interpolation endpoints differ in dimension".into()));
    }
    let path: Vec<Vec<f32>> = (0..n_steps)
        .map(|i| {
            let t = i as f64 / (n_steps - 1) as f64;
            a.iter().zip(b).map(|(&x, &y)| ((1.0 - t) * x as f64 + t * y as f64) as f32).collect()
        })
        .collect();
    let moving: Vec<&[f32]> = path.iter().map(|v| v.as_slice()).collect();
    let fixed = vec![fixed_other; n_steps];
    match which {
        InterpolationTarget::ConditionC => gan.generate(&fixed, &moving),
        InterpolationTarget::LatentZ => gan.generate(&moving, &fixed),
    }
}
