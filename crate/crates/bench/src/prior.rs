//! Analytic diffusion prior fitted to benchmark scenes.

use ttga_core::denoiser::{ConditionEmbedding, GaussianMixtureDenoiser, Projection};
use ttga_core::{Error, LatentGrid, NoiseSchedule, Result, SeededRng};

use crate::scene::ToyScene;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    /// Gain of the embedding projection.
    pub projection_scale: f64,
    /// Overrides the fitted per-pixel standard deviation.
    pub data_std: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            projection_scale: 1.0,
            data_std: None,
        }
    }
}

/// Single-Gaussian prior `N(mean image, std^2 I)` fitted to `scenes`, with a
/// signed-permutation embedding projection of full rank so that the null
/// embedding can absorb any per-pixel residual.
pub fn fit_prior(
    scenes: &[ToyScene],
    schedule: &NoiseSchedule,
    config: &PriorConfig,
    rng: &mut SeededRng,
) -> Result<GaussianMixtureDenoiser> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::config("prior_scenes", "must not be empty"))?;
    let shape = first.image.shape();
    let n = scenes.len() as f64;
    let mut mean = LatentGrid::zeros(shape);
    for s in scenes {
        mean = mean.add_scaled(&s.image, 1.0 / n)?;
    }
    let std = match config.data_std {
        Some(v) => v,
        None => {
            let var: f64 = scenes
                .iter()
                .map(|s| s.image.mse(&mean))
                .sum::<Result<f64>>()?
                / n;
            var.sqrt().max(1e-3)
        }
    };
    let projection =
        Projection::signed_permutation(shape.len(), shape.len(), config.projection_scale, rng)?;
    GaussianMixtureDenoiser::single(schedule.clone(), mean, std, projection)
}

/// Class embedding for "a disk scene": a fixed unit-scale vector drawn from
/// `rng` and multiplied by `scale`.
pub fn semantic_embedding(dim: usize, scale: f64, rng: &mut SeededRng) -> ConditionEmbedding {
    ConditionEmbedding::semantic((0..dim).map(|_| scale * rng.normal()).collect())
}
