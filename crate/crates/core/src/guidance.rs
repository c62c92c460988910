//! Classifier-free guidance combinators.

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

/// Guidance scales for one run. `omega` is shared by null-text optimization
/// and the identity term of [`cfg_multi`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub omega: f64,
    pub lambda_c: f64,
    pub lambda_r: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            omega: 2.0,
            lambda_c: 1.0,
            lambda_r: 1.0,
        }
    }
}

impl GuidanceConfig {
    pub fn new(omega: f64, lambda_c: f64, lambda_r: f64) -> Result<Self> {
        let g = Self {
            omega,
            lambda_c,
            lambda_r,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("omega", self.omega),
            ("lambda_c", self.lambda_c),
            ("lambda_r", self.lambda_r),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(field, format!("{v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn with_lambda_r(self, lambda_r: f64) -> Self {
        Self { lambda_r, ..self }
    }

    /// Weights on `(eps_null, eps_sem, eps_idnull)` in [`cfg_multi`].
    pub fn coefficients(&self) -> [f64; 3] {
        let id = self.lambda_r * (1.0 - self.omega);
        [1.0 - self.lambda_c, self.lambda_c - id, id]
    }
}

/// `eps_null + omega * (eps_cond - eps_null)`
pub fn cfg_single(eps_null: &LatentGrid, eps_cond: &LatentGrid, omega: f64) -> Result<LatentGrid> {
    eps_null.zip_map(eps_cond, |n, c| (1.0 - omega) * n + omega * c)
}

/// Three-term guidance with the identity prediction taken under the optimized
/// null embedding:
/// `eps_null + lambda_c (eps_sem - eps_null) + lambda_r (1 - omega) (eps_idnull - eps_sem)`.
pub fn cfg_multi(
    eps_null: &LatentGrid,
    eps_sem: &LatentGrid,
    eps_idnull: &LatentGrid,
    g: &GuidanceConfig,
) -> Result<LatentGrid> {
    let [a, b, c] = g.coefficients();
    let partial = eps_null.zip_map(eps_sem, |n, s| a * n + b * s)?;
    partial.zip_map(eps_idnull, |p, i| p + c * i)
}

/// Generic three-condition mix
/// `eps_null + lambda_c (eps_sem - eps_null) + lambda_r (eps_joint - eps_sem)`,
/// where `eps_joint` is the prediction under both conditions.
pub fn cfg_multi_generic(
    eps_null: &LatentGrid,
    eps_sem: &LatentGrid,
    eps_joint: &LatentGrid,
    lambda_c: f64,
    lambda_r: f64,
) -> Result<LatentGrid> {
    let partial = eps_null.zip_map(eps_sem, |n, s| (1.0 - lambda_c) * n + (lambda_c - lambda_r) * s)?;
    partial.zip_map(eps_joint, |p, j| p + lambda_r * j)
}
