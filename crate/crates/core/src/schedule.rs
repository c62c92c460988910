//! Variance-preserving noise schedule tables.

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Precomputed `alpha_t`, `alpha_bar_t` and `gamma_t = sqrt((1 - alpha_bar_t) / alpha_bar_t)`.
///
/// `alpha_bars` and `gammas` have `T + 1` entries; index 0 is the clean data
/// level and holds exactly 1 and 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    total_steps: usize,
    beta_start: f64,
    beta_end: f64,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    gammas: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear-beta schedule.
    pub fn linear(total_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::config("total_steps", "must be at least 1"));
        }
        if !(beta_start > 0.0 && beta_start < 1.0) {
            return Err(Error::config("beta_start", format!("{beta_start} not in (0, 1)")));
        }
        if !(beta_end >= beta_start && beta_end < 1.0) {
            return Err(Error::config(
                "beta_end",
                format!("{beta_end} not in [beta_start, 1)"),
            ));
        }
        let step = if total_steps > 1 {
            (beta_end - beta_start) / (total_steps - 1) as f64
        } else {
            0.0
        };
        let alphas: Vec<f64> = (0..total_steps)
            .map(|i| 1.0 - (beta_start + step * i as f64))
            .collect();

        let mut alpha_bars = Vec::with_capacity(total_steps + 1);
        let mut gammas = Vec::with_capacity(total_steps + 1);
        alpha_bars.push(1.0);
        gammas.push(0.0);
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
            gammas.push(((1.0 - prod) / prod).sqrt());
        }
        Ok(Self {
            total_steps,
            beta_start,
            beta_end,
            alphas,
            alpha_bars,
            gammas,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    /// `alpha_t` for `1 <= t <= T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn beta(&self, t: usize) -> f64 {
        1.0 - self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gammas[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn check_step(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.total_steps {
            Err(Error::Index {
                what: "timestep",
                index: t,
                min,
                max: self.total_steps,
            })
        } else {
            Ok(())
        }
    }

    /// `x / sqrt(alpha_bar_t)`
    pub fn to_xbar(&self, x: &LatentGrid, t: usize) -> Result<LatentGrid> {
        self.check_step(t, 0)?;
        let s = self.alpha_bars[t].sqrt();
        Ok(x.map(|v| v / s))
    }

    /// `xbar * sqrt(alpha_bar_t)`
    pub fn from_xbar(&self, xbar: &LatentGrid, t: usize) -> Result<LatentGrid> {
        self.check_step(t, 0)?;
        let s = self.alpha_bars[t].sqrt();
        Ok(xbar.map(|v| v * s))
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}
