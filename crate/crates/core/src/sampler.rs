//! Forward noising, ancestral DDPM steps, DDIM steps over arbitrary
//! intervals, and approximate DDIM inversion.
//!
//! DDIM updates are written in rescaled coordinates `xbar_t = x_t / sqrt(alpha_bar_t)`:
//! `xbar_s = xbar_t + (gamma_s - gamma_t) * eps`.

use crate::denoiser::{ConditionEmbedding, Denoiser};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::rng::{gaussian_grid, SeededRng};
use crate::schedule::NoiseSchedule;

/// Latents visited by DDIM inversion, `steps[0] == 0` and `steps.last() == tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionTrajectory {
    steps: Vec<usize>,
    latents: Vec<LatentGrid>,
}

impl InversionTrajectory {
    pub fn tau(&self) -> usize {
        *self.steps.last().expect("trajectory is never empty")
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn latents(&self) -> &[LatentGrid] {
        &self.latents
    }

    /// The inverted input `x_0*`.
    pub fn x0(&self) -> &LatentGrid {
        &self.latents[0]
    }

    /// The top latent `x_tau*`.
    pub fn x_tau(&self) -> &LatentGrid {
        self.latents.last().expect("trajectory is never empty")
    }

    /// Number of inversion updates.
    pub fn rungs(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn latent_at(&self, t: usize) -> Option<&LatentGrid> {
        self.steps
            .iter()
            .position(|&s| s == t)
            .map(|i| &self.latents[i])
    }
}

/// `0, interval, 2 * interval, ..., tau`; a short final rung covers any remainder.
pub fn ladder(tau: usize, interval: usize) -> Result<Vec<usize>> {
    if interval == 0 {
        return Err(Error::config("interval", "must be positive"));
    }
    if tau == 0 {
        return Err(Error::config("tau", "must be at least 1"));
    }
    let mut steps: Vec<usize> = (0..tau).step_by(interval).collect();
    steps.push(tau);
    Ok(steps)
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) z`
pub fn forward_noise(
    x0: &LatentGrid,
    t: usize,
    s: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<LatentGrid> {
    s.check_step(t, 1)?;
    let a = s.alpha_bar(t);
    let z = gaussian_grid(rng, x0.shape());
    x0.scale(a.sqrt()).add_scaled(&z, (1.0 - a).sqrt())
}

/// Mean of the learned reverse transition,
/// `(x_t - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t)`.
pub fn ddpm_mean<D: Denoiser + ?Sized>(
    m: &D,
    x_t: &LatentGrid,
    t: usize,
    e: &ConditionEmbedding,
    s: &NoiseSchedule,
) -> Result<LatentGrid> {
    s.check_step(t, 1)?;
    let eps = m.predict(x_t, t, e)?;
    Ok(ddpm_mean_from_eps(x_t, &eps, t, s)?)
}

pub fn ddpm_mean_from_eps(
    x_t: &LatentGrid,
    eps: &LatentGrid,
    t: usize,
    s: &NoiseSchedule,
) -> Result<LatentGrid> {
    s.check_step(t, 1)?;
    let coef = s.beta(t) / (1.0 - s.alpha_bar(t)).sqrt();
    let inv = 1.0 / s.alpha(t).sqrt();
    x_t.zip_map(eps, |x, e| (x - coef * e) * inv)
}

/// Ancestral step `x_{t-1} ~ N(mu, sigma_t^2 I)` with `sigma_t = sqrt(1 - alpha_t)`.
pub fn ddpm_reverse_step<D: Denoiser + ?Sized>(
    m: &D,
    x_t: &LatentGrid,
    t: usize,
    e: &ConditionEmbedding,
    s: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<LatentGrid> {
    ddpm_reverse_step_scaled(m, x_t, t, e, s, rng, 1.0)
}

/// Ancestral step with the noise standard deviation multiplied by `noise_scale`.
pub fn ddpm_reverse_step_scaled<D: Denoiser + ?Sized>(
    m: &D,
    x_t: &LatentGrid,
    t: usize,
    e: &ConditionEmbedding,
    s: &NoiseSchedule,
    rng: &mut SeededRng,
    noise_scale: f64,
) -> Result<LatentGrid> {
    let mean = ddpm_mean(m, x_t, t, e, s)?;
    if noise_scale == 0.0 {
        return Ok(mean);
    }
    let sigma = noise_scale * (1.0 - s.alpha(t)).sqrt();
    let z = gaussian_grid(rng, x_t.shape());
    mean.add_scaled(&z, sigma)
}

/// DDIM update for a given noise prediction, `t -> t_next` with `t_next < t`.
pub fn ddim_step_with_eps(
    x_t: &LatentGrid,
    eps: &LatentGrid,
    t: usize,
    t_next: usize,
    s: &NoiseSchedule,
) -> Result<LatentGrid> {
    s.check_step(t, 0)?;
    s.check_step(t_next, 0)?;
    let xbar = s.to_xbar(x_t, t)?;
    let next = xbar.add_scaled(eps, s.gamma(t_next) - s.gamma(t))?;
    s.from_xbar(&next, t_next)
}

pub fn ddim_step<D: Denoiser + ?Sized>(
    m: &D,
    x_t: &LatentGrid,
    t: usize,
    t_next: usize,
    e: &ConditionEmbedding,
    s: &NoiseSchedule,
) -> Result<LatentGrid> {
    if t_next >= t {
        return Err(Error::Contract(format!(
            "DDIM step must go down in time ({t} -> {t_next})"
        )));
    }
    s.check_step(t, 1)?;
    let eps = m.predict(x_t, t, e)?;
    ddim_step_with_eps(x_t, &eps, t, t_next, s)
}

/// Deterministic DDIM chain from `x_t` at `t` down to 0 over `interval`-sized
/// steps (the last step may be shorter).
pub fn ddim_sample<D: Denoiser + ?Sized>(
    m: &D,
    x_t: &LatentGrid,
    t: usize,
    interval: usize,
    e: &ConditionEmbedding,
    s: &NoiseSchedule,
) -> Result<LatentGrid> {
    s.check_step(t, 1)?;
    let steps = ladder(t, interval)?;
    let mut x = x_t.clone();
    for w in steps.windows(2).rev() {
        x = ddim_step(m, &x, w[1], w[0], e, s)?;
    }
    Ok(x)
}

/// Approximate DDIM inversion from `x0` up to `tau`, reusing the noise
/// prediction at the lower end of each rung:
/// `xbar_t = xbar_{t-d} + (gamma_t - gamma_{t-d}) * eps(x_{t-d}, t-d)`.
///
/// The first rung starts at the data level, where the predictor is evaluated
/// at step 1.
pub fn ddim_invert<D: Denoiser + ?Sized>(
    m: &D,
    x0: &LatentGrid,
    tau: usize,
    interval: usize,
    e: &ConditionEmbedding,
    s: &NoiseSchedule,
) -> Result<InversionTrajectory> {
    s.check_step(tau, 1)?;
    let steps = ladder(tau, interval)?;
    let mut latents = Vec::with_capacity(steps.len());
    latents.push(x0.clone());
    for w in steps.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let x = latents.last().unwrap();
        let eps = m.predict(x, lo.max(1), e)?;
        let xbar = s.to_xbar(x, lo)?;
        let next = xbar.add_scaled(&eps, s.gamma(hi) - s.gamma(lo))?;
        latents.push(s.from_xbar(&next, hi)?);
    }
    Ok(InversionTrajectory { steps, latents })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{GaussianMixtureDenoiser, Projection};
    use crate::error::Shape;

    struct ZeroEps(usize);

    impl Denoiser for ZeroEps {
        fn embedding_dim(&self) -> usize {
            self.0
        }

        fn predict(&self, x: &LatentGrid, _t: usize, _e: &ConditionEmbedding) -> Result<LatentGrid> {
            Ok(LatentGrid::zeros(x.shape()))
        }
    }

    fn oracle(shape: Shape, seed: u64) -> GaussianMixtureDenoiser {
        let mut rng = SeededRng::new(seed, 0);
        let mean = gaussian_grid(&mut rng, shape).scale(0.5);
        let proj = Projection::gaussian(shape.len(), 4, 0.3, &mut rng);
        GaussianMixtureDenoiser::single(NoiseSchedule::default(), mean, 1.0, proj).unwrap()
    }

    #[test]
    fn ladder_shapes() {
        assert_eq!(ladder(300, 10).unwrap().len(), 31);
        assert_eq!(ladder(25, 10).unwrap(), vec![0, 10, 20, 25]);
        assert_eq!(ladder(10, 10).unwrap(), vec![0, 10]);
        assert!(ladder(10, 0).is_err());
    }

    #[test]
    fn forward_noise_limits_and_determinism() {
        let s = NoiseSchedule::default();
        let x0 = gaussian_grid(&mut SeededRng::new(1, 0), Shape::new(4, 4, 1));
        let a = forward_noise(&x0, 1, &s, &mut SeededRng::new(5, 0)).unwrap();
        let b = forward_noise(&x0, 1, &s, &mut SeededRng::new(5, 0)).unwrap();
        assert_eq!(a, b);
        // alpha_bar_1 = 1 - 1e-4: noise std is 0.01
        assert!(a.sub(&x0).unwrap().max_abs() < 0.06);
        assert!(forward_noise(&x0, 0, &s, &mut SeededRng::new(5, 0)).is_err());
        assert!(forward_noise(&x0, 1001, &s, &mut SeededRng::new(5, 0)).is_err());
    }

    #[test]
    fn forward_noise_monte_carlo_mean() {
        // pick the step whose alpha_bar is closest to 0.5
        let s = NoiseSchedule::default();
        let t = (1..=1000)
            .min_by(|&a, &b| {
                (s.alpha_bar(a) - 0.5)
                    .abs()
                    .partial_cmp(&(s.alpha_bar(b) - 0.5).abs())
                    .unwrap()
            })
            .unwrap();
        let a = s.alpha_bar(t);
        let x0 = LatentGrid::from_fn(Shape::new(2, 2, 1), |y, x, _| y as f64 - x as f64 + 0.5);
        let mut rng = SeededRng::new(77, 0);
        let n = 1000;
        let mut acc = LatentGrid::zeros(x0.shape());
        for _ in 0..n {
            acc = acc.add_scaled(&forward_noise(&x0, t, &s, &mut rng).unwrap(), 1.0 / n as f64).unwrap();
        }
        let bound = 3.0 * ((1.0 - a) / n as f64).sqrt();
        for (m, x) in acc.values().iter().zip(x0.values()) {
            assert!((m - a.sqrt() * x).abs() < bound);
        }
    }

    #[test]
    fn ddpm_step_special_cases() {
        let s = NoiseSchedule::default();
        let x = gaussian_grid(&mut SeededRng::new(1, 0), Shape::new(3, 3, 1));
        let zero = ZeroEps(2);
        let e = zero.null_embedding();
        let t = 400;
        let det = ddpm_reverse_step_scaled(&zero, &x, t, &e, &s, &mut SeededRng::new(0, 0), 0.0)
            .unwrap();
        assert_eq!(det, x.map(|v| v * (1.0 / s.alpha(t).sqrt())));
        let m = oracle(x.shape(), 3);
        let mean = ddpm_mean(&m, &x, t, &m.null_embedding(), &s).unwrap();
        let det = ddpm_reverse_step_scaled(&m, &x, t, &m.null_embedding(), &s, &mut SeededRng::new(0, 0), 0.0)
            .unwrap();
        assert_eq!(det, mean);
    }

    #[test]
    fn ddim_special_cases() {
        let s = NoiseSchedule::default();
        let x = gaussian_grid(&mut SeededRng::new(2, 0), Shape::new(3, 3, 1));
        let zero = ZeroEps(2);
        let e = zero.null_embedding();
        let out = ddim_step(&zero, &x, 500, 200, &e, &s).unwrap();
        let k = (s.alpha_bar(200) / s.alpha_bar(500)).sqrt();
        for (o, v) in out.values().iter().zip(x.values()) {
            assert!((o - k * v).abs() < 1e-14);
        }
        assert!(matches!(
            ddim_step(&zero, &x, 200, 200, &e, &s),
            Err(Error::Contract(_))
        ));

        let m = oracle(x.shape(), 4);
        let e = m.null_embedding();
        let eps = m.predict(&x, 500, &e).unwrap();
        let out = ddim_step(&m, &x, 500, 0, &e, &s).unwrap();
        let want = s.to_xbar(&x, 500).unwrap().add_scaled(&eps, -s.gamma(500)).unwrap();
        assert_eq!(out, want);
    }

    #[test]
    fn ddim_is_deterministic() {
        let s = NoiseSchedule::default();
        let m = oracle(Shape::new(4, 4, 1), 5);
        let x = gaussian_grid(&mut SeededRng::new(3, 0), Shape::new(4, 4, 1));
        let e = ConditionEmbedding::semantic(vec![0.5; 4]);
        let a = ddim_sample(&m, &x, 700, 7, &e, &s).unwrap();
        let b = ddim_sample(&m, &x, 700, 7, &e, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_rung_inversion() {
        let s = NoiseSchedule::default();
        let m = oracle(Shape::new(3, 3, 1), 6);
        let x0 = gaussian_grid(&mut SeededRng::new(4, 0), Shape::new(3, 3, 1));
        let e = m.null_embedding();
        let traj = ddim_invert(&m, &x0, 10, 10, &e, &s).unwrap();
        assert_eq!(traj.steps(), &[0, 10]);
        assert_eq!(traj.x0(), &x0);
        let eps = m.predict(&x0, 1, &e).unwrap();
        let want = s
            .from_xbar(&x0.add_scaled(&eps, s.gamma(10)).unwrap(), 10)
            .unwrap();
        assert_eq!(traj.x_tau(), &want);
    }

    #[test]
    fn inversion_rung_count() {
        let s = NoiseSchedule::default();
        let m = oracle(Shape::new(2, 2, 1), 7);
        let x0 = LatentGrid::zeros(Shape::new(2, 2, 1));
        let traj = ddim_invert(&m, &x0, 300, 10, &m.null_embedding(), &s).unwrap();
        assert_eq!(traj.rungs(), 30);
        assert_eq!(traj.tau(), 300);
        assert!(traj.steps().windows(2).all(|w| w[0] < w[1]));
        assert!(ddim_invert(&m, &x0, 0, 10, &m.null_embedding(), &s).is_err());
        assert!(ddim_invert(&m, &x0, 1001, 10, &m.null_embedding(), &s).is_err());
        assert!(ddim_invert(&m, &x0, 30, 0, &m.null_embedding(), &s).is_err());
    }
}
