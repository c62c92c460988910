//! One-step null-text optimization: tune a single null embedding at `tau` so
//! that one guided DDIM jump `tau -> 0` reconstructs the inverted image.
//!
//! Losses are mean squared errors over all grid elements.

use crate::adam::{AdamConfig, AdamState};
use crate::denoiser::{ConditionEmbedding, Denoiser, EmbeddingRole};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::guidance::cfg_single;
use crate::sampler::InversionTrajectory;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullTextConfig {
    pub lr: f64,
    pub max_steps: usize,
    pub early_stop: f64,
    /// Record `(iteration, loss)` pairs in [`OptimizedNull::trace`].
    pub trace: bool,
}

impl Default for NullTextConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            max_steps: 500,
            early_stop: 5e-4,
            trace: false,
        }
    }
}

impl NullTextConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.early_stop.is_finite() && self.early_stop >= 0.0) {
            return Err(Error::config("early_stop", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedNull {
    pub embedding: ConditionEmbedding,
    pub tau: usize,
    pub final_loss: f64,
    /// Adam updates applied.
    pub iterations_used: usize,
    pub trace: Vec<(usize, f64)>,
}

/// Guided noise `cfg_single(eps(x, t, null_e), eps(x, t, c), omega)`.
pub fn guided_eps<D: Denoiser + ?Sized>(
    m: &D,
    x: &LatentGrid,
    t: usize,
    c: &ConditionEmbedding,
    null_e: &ConditionEmbedding,
    omega: f64,
) -> Result<LatentGrid> {
    let eps_null = m.predict(x, t, null_e)?;
    let eps_cond = m.predict(x, t, c)?;
    cfg_single(&eps_null, &eps_cond, omega)
}

/// `xbar_tau + (gamma_to - gamma_tau) * eps`, the rescaled jump from `tau` to
/// `to` with a fixed noise estimate.
pub fn jump_from_tau(
    xbar_tau: &LatentGrid,
    eps: &LatentGrid,
    tau: usize,
    to: usize,
    s: &NoiseSchedule,
) -> Result<LatentGrid> {
    s.check_step(tau, 1)?;
    s.check_step(to, 0)?;
    xbar_tau.add_scaled(eps, s.gamma(to) - s.gamma(tau))
}

/// One guided DDIM jump from `tau` to 0. Since `alpha_bar_0 = 1` the rescaled
/// and plain latents coincide at 0.
pub fn one_step_reconstruct<D: Denoiser + ?Sized>(
    m: &D,
    x_tau: &LatentGrid,
    tau: usize,
    c: &ConditionEmbedding,
    null_e: &ConditionEmbedding,
    omega: f64,
    s: &NoiseSchedule,
) -> Result<LatentGrid> {
    let eps = guided_eps(m, x_tau, tau, c, null_e, omega)?;
    jump_from_tau(&s.to_xbar(x_tau, tau)?, &eps, tau, 0, s)
}

/// Reconstruction loss and its gradient with respect to `null_e`.
pub fn null_text_loss_and_grad<D: Denoiser + ?Sized>(
    m: &D,
    x0: &LatentGrid,
    x_tau: &LatentGrid,
    tau: usize,
    c: &ConditionEmbedding,
    null_e: &ConditionEmbedding,
    omega: f64,
    s: &NoiseSchedule,
) -> Result<(f64, Vec<f64>)> {
    let recon = one_step_reconstruct(m, x_tau, tau, c, null_e, omega, s)?;
    let loss = x0.mse(&recon)?;
    // d loss / d eps_null = -2 (x0 - recon) / n * d recon / d eps_null
    //                     = 2 gamma_tau (1 - omega) (x0 - recon) / n
    let k = 2.0 * s.gamma(tau) * (1.0 - omega) / x0.len() as f64;
    let upstream = x0.zip_map(&recon, |a, b| k * (a - b))?;
    let grad = m.grad_wrt_embedding(&upstream, x_tau, tau, null_e)?;
    Ok((loss, grad))
}

/// Optimizes the null embedding starting from the model's canonical null.
pub fn optimize_null_text<D: Denoiser + ?Sized>(
    m: &D,
    traj: &InversionTrajectory,
    c: &ConditionEmbedding,
    omega: f64,
    s: &NoiseSchedule,
    config: &NullTextConfig,
) -> Result<OptimizedNull> {
    optimize_null_text_from(m, traj, c, omega, s, config, m.null_embedding())
}

/// Adam on the one-step reconstruction loss. Returns the best embedding seen;
/// stops as soon as the loss is at or below `early_stop`.
pub fn optimize_null_text_from<D: Denoiser + ?Sized>(
    m: &D,
    traj: &InversionTrajectory,
    c: &ConditionEmbedding,
    omega: f64,
    s: &NoiseSchedule,
    config: &NullTextConfig,
    init: ConditionEmbedding,
) -> Result<OptimizedNull> {
    config.validate()?;
    if omega == 1.0 {
        return Err(Error::Degenerate(
            "omega = 1 removes the null embedding from the guided prediction".into(),
        ));
    }
    m.check_embedding(c)?;
    m.check_embedding(&init)?;
    let tau = traj.tau();
    let (x0, x_tau) = (traj.x0(), traj.x_tau());
    let mut current = init.with_role(EmbeddingRole::OptimizedNull);
    let mut adam = AdamState::new(current.dim(), AdamConfig::with_lr(config.lr));
    let mut best = (f64::INFINITY, current.clone());
    let mut trace = Vec::new();
    let mut iterations = 0;

    loop {
        let (loss, grad) = null_text_loss_and_grad(m, x0, x_tau, tau, c, &current, omega, s)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite { step: iterations });
        }
        if config.trace {
            trace.push((iterations, loss));
        }
        if loss < best.0 {
            best = (loss, current.clone());
        }
        if loss <= config.early_stop || iterations == config.max_steps {
            break;
        }
        adam.step(current.values_mut(), &grad)?;
        iterations += 1;
    }

    Ok(OptimizedNull {
        embedding: best.1,
        tau,
        final_loss: best.0,
        iterations_used: iterations,
        trace,
    })
}
