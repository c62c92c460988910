//! Masked dual-path generation: every step blends an identity-preserving
//! jump from the fixed top latent with a guided augmentation step.

use rayon::prelude::*;

use crate::denoiser::{ConditionEmbedding, Denoiser};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::guidance::{cfg_multi, GuidanceConfig};
use crate::masks::{MaskPair, MaskPolicy, RelevanceProvider};
use crate::nulltext::{guided_eps, jump_from_tau, optimize_null_text, NullTextConfig, OptimizedNull};
use crate::rng::SeededRng;
use crate::sampler::{ddim_invert, ddim_step_with_eps, ladder, InversionTrajectory};
use crate::schedule::NoiseSchedule;

/// Embedding that conditions the predictor during DDIM inversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InversionEmbedding {
    Semantic,
    Null,
}

/// Latent consumed by the augmentation path at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClubInput {
    /// The blended latent from the previous step.
    Blended,
    /// The augmentation path's own previous output.
    Unblended,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TtgaConfig {
    pub tau: usize,
    pub inversion_interval: usize,
    pub n_augment: usize,
    pub guidance: GuidanceConfig,
    pub lambda_r_low: f64,
    pub lambda_r_high: f64,
    pub mask_policy: MaskPolicy,
    pub seed: u64,
    /// Timesteps covered by one augmentation-path update.
    pub club_step: usize,
    pub inversion_embedding: InversionEmbedding,
    pub club_input: ClubInput,
    pub null_text: NullTextConfig,
}

impl Default for TtgaConfig {
    fn default() -> Self {
        Self {
            tau: 300,
            inversion_interval: 10,
            n_augment: 10,
            guidance: GuidanceConfig::default(),
            lambda_r_low: 0.5,
            lambda_r_high: 1.5,
            mask_policy: MaskPolicy::default(),
            seed: 0,
            club_step: 1,
            inversion_embedding: InversionEmbedding::Semantic,
            club_input: ClubInput::Blended,
            null_text: NullTextConfig::default(),
        }
    }
}

impl TtgaConfig {
    pub fn validate(&self, s: &NoiseSchedule) -> Result<()> {
        if self.tau == 0 || self.tau > s.total_steps() {
            return Err(Error::config(
                "tau",
                format!("{} is outside [1, {}]", self.tau, s.total_steps()),
            ));
        }
        if self.inversion_interval == 0 {
            return Err(Error::config("inversion_interval", "must be positive"));
        }
        if self.n_augment == 0 {
            return Err(Error::config("n_augment", "must be at least 1"));
        }
        if self.club_step == 0 {
            return Err(Error::config("club_step", "must be positive"));
        }
        if !(self.lambda_r_low.is_finite() && self.lambda_r_high.is_finite())
            || self.lambda_r_low < 0.0
            || self.lambda_r_low > self.lambda_r_high
        {
            return Err(Error::config(
                "lambda_r_low",
                format!(
                    "band [{}, {}] must satisfy 0 <= low <= high",
                    self.lambda_r_low, self.lambda_r_high
                ),
            ));
        }
        self.guidance.validate()?;
        self.mask_policy.validate()?;
        self.null_text.validate()
    }
}

/// The identity path with its guided noise estimate computed once at `(x_tau, tau)`.
#[derive(Debug, Clone)]
pub struct IdentityPath {
    xbar_tau: LatentGrid,
    eps: LatentGrid,
    tau: usize,
}

impl IdentityPath {
    pub fn new<D: Denoiser + ?Sized>(
        m: &D,
        x_tau: &LatentGrid,
        tau: usize,
        null_opt: &OptimizedNull,
        c: &ConditionEmbedding,
        omega: f64,
        s: &NoiseSchedule,
    ) -> Result<Self> {
        let eps = guided_eps(m, x_tau, tau, c, &null_opt.embedding, omega)?;
        Ok(Self {
            xbar_tau: s.to_xbar(x_tau, tau)?,
            eps,
            tau,
        })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn eps(&self) -> &LatentGrid {
        &self.eps
    }

    pub fn xbar_tau(&self) -> &LatentGrid {
        &self.xbar_tau
    }

    /// Rescaled identity latent at `to`.
    pub fn at(&self, to: usize, s: &NoiseSchedule) -> Result<LatentGrid> {
        if to >= self.tau {
            return Err(Error::Index {
                what: "timestep",
                index: to,
                min: 0,
                max: self.tau - 1,
            });
        }
        jump_from_tau(&self.xbar_tau, &self.eps, self.tau, to, s)
    }
}

/// Rescaled identity latent for step `t -> t - 1`, recomputing the noise estimate.
#[allow(clippy::too_many_arguments)]
pub fn identity_path_step<D: Denoiser + ?Sized>(
    m: &D,
    x_tau: &LatentGrid,
    tau: usize,
    t: usize,
    null_opt: &OptimizedNull,
    c: &ConditionEmbedding,
    omega: f64,
    s: &NoiseSchedule,
) -> Result<LatentGrid> {
    if t == 0 || t > tau {
        return Err(Error::Index {
            what: "timestep",
            index: t,
            min: 1,
            max: tau,
        });
    }
    IdentityPath::new(m, x_tau, tau, null_opt, c, omega, s)?.at(t - 1, s)
}

/// Guided DDIM update `t -> t_next` on the augmentation path, returned in
/// plain (not rescaled) form. Uses three predictor evaluations.
#[allow(clippy::too_many_arguments)]
pub fn augmentation_path_step<D: Denoiser + ?Sized>(
    m: &D,
    x_t: &LatentGrid,
    t: usize,
    t_next: usize,
    null_opt: &OptimizedNull,
    c: &ConditionEmbedding,
    g: &GuidanceConfig,
    s: &NoiseSchedule,
) -> Result<LatentGrid> {
    if t_next >= t {
        return Err(Error::Contract(format!(
            "augmentation step must go down in time ({t} -> {t_next})"
        )));
    }
    s.check_step(t, 1)?;
    let eps_null = m.predict(x_t, t, &m.null_embedding())?;
    let eps_sem = m.predict(x_t, t, c)?;
    let eps_id = m.predict(x_t, t, &null_opt.embedding)?;
    let eps = cfg_multi(&eps_null, &eps_sem, &eps_id, g)?;
    ddim_step_with_eps(x_t, &eps, t, t_next, s)
}

/// Everything shared by the augmentations of one image.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    pub trajectory: InversionTrajectory,
    pub null: OptimizedNull,
    pub identity: IdentityPath,
    pub relevance: Option<LatentGrid>,
}

/// Inverts `x0`, optimizes the null embedding at `tau` and, when the mask
/// scheme needs one, computes the relevance map at `(x_tau, tau, c)`.
pub fn prepare<D: Denoiser>(
    m: &D,
    x0: &LatentGrid,
    c: &ConditionEmbedding,
    cfg: &TtgaConfig,
    s: &NoiseSchedule,
    relevance: &dyn RelevanceProvider,
) -> Result<PreparedImage> {
    cfg.validate(s)?;
    let inv_e = match cfg.inversion_embedding {
        InversionEmbedding::Semantic => c.clone(),
        InversionEmbedding::Null => m.null_embedding(),
    };
    let trajectory = ddim_invert(m, x0, cfg.tau, cfg.inversion_interval, &inv_e, s)?;
    let null = optimize_null_text(m, &trajectory, c, cfg.guidance.omega, s, &cfg.null_text)?;
    let identity = IdentityPath::new(m, trajectory.x_tau(), cfg.tau, &null, c, cfg.guidance.omega, s)?;
    let relevance = if cfg.mask_policy.scheme.needs_relevance() {
        Some(relevance.relevance(m, trajectory.x_tau(), cfg.tau, c)?)
    } else {
        None
    };
    Ok(PreparedImage {
        trajectory,
        null,
        identity,
        relevance,
    })
}

/// Where the per-step masks come from.
#[derive(Debug, Clone, Copy)]
pub enum MaskSource<'a> {
    Policy(&'a MaskPolicy),
    Fixed(&'a MaskPair),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub image: LatentGrid,
    pub lambda_r: f64,
    /// Stream of the generator that drew `lambda_r` and the masks.
    pub mask_stream: u64,
    /// First mask used; the only one unless masks are resampled per step.
    pub mask: MaskPair,
}

/// Runs the blended loop from `tau` down to 0 for one augmentation.
pub fn generate_one<D: Denoiser + ?Sized>(
    m: &D,
    prep: &PreparedImage,
    c: &ConditionEmbedding,
    cfg: &TtgaConfig,
    masks: MaskSource<'_>,
    s: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<Augmentation> {
    let lambda_r = cfg.lambda_r_low + (cfg.lambda_r_high - cfg.lambda_r_low) * rng.uniform();
    let g = cfg.guidance.with_lambda_r(lambda_r);
    let tau = prep.identity.tau();
    let (h, w) = (prep.identity.xbar_tau().height(), prep.identity.xbar_tau().width());
    let relevance = prep.relevance.as_ref();
    let draw = |rng: &mut SeededRng| -> Result<MaskPair> {
        match masks {
            MaskSource::Policy(p) => p.sample(h, w, relevance, rng),
            MaskSource::Fixed(pair) => Ok(pair.clone()),
        }
    };
    let resample = matches!(masks, MaskSource::Policy(p) if p.resample_per_step);
    let mut mask = draw(rng)?;
    let first_mask = mask.clone();

    let mut steps = ladder(tau, cfg.club_step)?;
    steps.reverse();
    let mut blended = prep.identity.xbar_tau().clone();
    let mut club_own = blended.clone();
    for pair in steps.windows(2) {
        let (t, t_next) = (pair[0], pair[1]);
        if resample && t != tau {
            mask = draw(rng)?;
        }
        let spade = prep.identity.at(t_next, s)?;
        let club_in = match cfg.club_input {
            ClubInput::Blended => &blended,
            ClubInput::Unblended => &club_own,
        };
        let x_t = s.from_xbar(club_in, t)?;
        let club = augmentation_path_step(m, &x_t, t, t_next, &prep.null, c, &g, s)?;
        let club = s.to_xbar(&club, t_next)?;
        blended = mask.blend(&spade, &club)?;
        club_own = club;
        if !blended.is_finite() {
            return Err(Error::NonFinite { step: t_next });
        }
    }
    Ok(Augmentation {
        image: s.from_xbar(&blended, 0)?,
        lambda_r,
        mask_stream: rng.stream_id(),
        mask: first_mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSet {
    pub original: LatentGrid,
    pub augmented: Vec<Augmentation>,
    /// Final loss of the shared null-text optimization.
    pub null_loss: f64,
    pub null_iterations: usize,
}

impl AugmentationSet {
    pub fn images(&self) -> Vec<&LatentGrid> {
        self.augmented.iter().map(|a| &a.image).collect()
    }
}

/// One inversion and null-text fit, then `n_augment` independent augmentations
/// in parallel. Augmentation `i` draws from stream `i + 1` of `cfg.seed`.
pub fn generate_set<D: Denoiser>(
    m: &D,
    x0: &LatentGrid,
    c: &ConditionEmbedding,
    cfg: &TtgaConfig,
    s: &NoiseSchedule,
    relevance: &dyn RelevanceProvider,
) -> Result<AugmentationSet> {
    let prep = prepare(m, x0, c, cfg, s, relevance)?;
    generate_from(m, &prep, c, cfg, s)
}

pub fn generate_from<D: Denoiser>(
    m: &D,
    prep: &PreparedImage,
    c: &ConditionEmbedding,
    cfg: &TtgaConfig,
    s: &NoiseSchedule,
) -> Result<AugmentationSet> {
    let augmented = (0..cfg.n_augment)
        .into_par_iter()
        .map(|i| {
            let mut rng = SeededRng::new(cfg.seed, i as u64 + 1);
            generate_one(m, prep, c, cfg, MaskSource::Policy(&cfg.mask_policy), s, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AugmentationSet {
        original: prep.trajectory.x0().clone(),
        augmented,
        null_loss: prep.null.final_loss,
        null_iterations: prep.null.iterations_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{GaussianMixtureDenoiser, Projection};
    use crate::error::Shape;
    use crate::grid::BinaryMask;
    use crate::masks::{FixedRelevance, MaskScheme};
    use crate::nulltext::one_step_reconstruct;
    use crate::rng::gaussian_grid;

    fn setup(seed: u64) -> (GaussianMixtureDenoiser, LatentGrid, ConditionEmbedding, NoiseSchedule) {
        let s = NoiseSchedule::default();
        let shape = Shape::new(4, 4, 1);
        let mut rng = SeededRng::new(seed, 0);
        let proj = Projection::signed_permutation(16, 16, 0.3, &mut rng).unwrap();
        let mean = LatentGrid::filled(shape, 0.1);
        let m = GaussianMixtureDenoiser::single(s.clone(), mean, 0.4, proj).unwrap();
        let x0 = gaussian_grid(&mut rng, shape).scale(0.4);
        let c = ConditionEmbedding::semantic((0..16).map(|i| 0.05 * i as f64).collect());
        (m, x0, c, s)
    }

    fn small_cfg() -> TtgaConfig {
        TtgaConfig {
            tau: 60,
            n_augment: 4,
            seed: 5,
            mask_policy: MaskPolicy {
                scheme: MaskScheme::Bernoulli,
                ..MaskPolicy::default()
            },
            ..TtgaConfig::default()
        }
    }

    fn prep(m: &GaussianMixtureDenoiser, x0: &LatentGrid, c: &ConditionEmbedding, cfg: &TtgaConfig, s: &NoiseSchedule) -> PreparedImage {
        let rel = FixedRelevance(LatentGrid::from_fn(Shape::new(4, 4, 1), |y, x, _| (y + x) as f64));
        prepare(m, x0, c, cfg, s, &rel).unwrap()
    }

    #[test]
    fn all_spade_is_the_one_step_reconstruction() {
        let (m, x0, c, s) = setup(1);
        let cfg = small_cfg();
        let p = prep(&m, &x0, &c, &cfg, &s);
        let pair = MaskPair::all_spade(4, 4);
        let out = generate_one(&m, &p, &c, &cfg, MaskSource::Fixed(&pair), &s, &mut SeededRng::new(0, 1))
            .unwrap();
        let want = one_step_reconstruct(&m, p.trajectory.x_tau(), cfg.tau, &c, &p.null.embedding, cfg.guidance.omega, &s)
            .unwrap();
        assert_eq!(out.image, want);
    }

    #[test]
    fn identity_cache_matches_recomputation() {
        let (m, x0, c, s) = setup(2);
        let cfg = small_cfg();
        let p = prep(&m, &x0, &c, &cfg, &s);
        for t in [1, 7, 60] {
            let a = p.identity.at(t - 1, &s).unwrap();
            let b = identity_path_step(&m, p.trajectory.x_tau(), 60, t, &p.null, &c, 2.0, &s).unwrap();
            assert_eq!(a, b);
        }
        assert!(identity_path_step(&m, p.trajectory.x_tau(), 60, 61, &p.null, &c, 2.0, &s).is_err());
        assert!(identity_path_step(&m, p.trajectory.x_tau(), 60, 0, &p.null, &c, 2.0, &s).is_err());
    }

    #[test]
    fn augmentation_step_reductions() {
        let (m, x0, c, s) = setup(3);
        let cfg = small_cfg();
        let p = prep(&m, &x0, &c, &cfg, &s);
        let x = gaussian_grid(&mut SeededRng::new(9, 0), Shape::new(4, 4, 1));
        let cond = GuidanceConfig::new(2.0, 1.0, 0.0).unwrap();
        let got = augmentation_path_step(&m, &x, 40, 39, &p.null, &c, &cond, &s).unwrap();
        let eps = m.predict(&x, 40, &c).unwrap();
        assert_eq!(got, ddim_step_with_eps(&x, &eps, 40, 39, &s).unwrap());
        let uncond = GuidanceConfig::new(2.0, 0.0, 0.0).unwrap();
        let got = augmentation_path_step(&m, &x, 40, 39, &p.null, &c, &uncond, &s).unwrap();
        let eps = m.predict(&x, 40, &m.null_embedding()).unwrap();
        assert_eq!(got, ddim_step_with_eps(&x, &eps, 40, 39, &s).unwrap());
    }

    #[test]
    fn blend_respects_masks_each_step() {
        let (m, x0, c, s) = setup(4);
        let cfg = TtgaConfig {
            lambda_r_low: 1.0,
            lambda_r_high: 1.0,
            ..small_cfg()
        };
        let p = prep(&m, &x0, &c, &cfg, &s);
        let spade = BinaryMask::from_fn(4, 4, |y, x| (y + x) % 2 == 0);
        let pair = MaskPair::from_spade(spade.clone());
        let out = generate_one(&m, &p, &c, &cfg, MaskSource::Fixed(&pair), &s, &mut SeededRng::new(0, 1))
            .unwrap();
        let ident = p.identity.at(0, &s).unwrap();
        let club = generate_one(
            &m,
            &p,
            &c,
            &cfg,
            MaskSource::Fixed(&MaskPair::all_club(4, 4)),
            &s,
            &mut SeededRng::new(0, 1),
        )
        .unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let want = if spade.get(y, x) { ident.get(y, x, 0) } else { club.image.get(y, x, 0) };
                assert_eq!(out.image.get(y, x, 0), want);
            }
        }
    }

    #[test]
    fn sets_are_deterministic_and_ordered() {
        let (m, x0, c, s) = setup(5);
        let cfg = small_cfg();
        let rel = FixedRelevance(LatentGrid::zeros(Shape::new(4, 4, 1)));
        let a = generate_set(&m, &x0, &c, &cfg, &s, &rel).unwrap();
        let b = generate_set(&m, &x0, &c, &cfg, &s, &rel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.augmented.len(), 4);
        let streams: Vec<u64> = a.augmented.iter().map(|x| x.mask_stream).collect();
        assert_eq!(streams, vec![1, 2, 3, 4]);
        for aug in &a.augmented {
            assert!((0.5..=1.5).contains(&aug.lambda_r));
            assert_eq!(aug.image.shape(), x0.shape());
        }
    }

    #[test]
    fn config_validation() {
        let s = NoiseSchedule::default();
        assert!(TtgaConfig::default().validate(&s).is_ok());
        let bad = [
            TtgaConfig { tau: 0, ..TtgaConfig::default() },
            TtgaConfig { tau: 1001, ..TtgaConfig::default() },
            TtgaConfig { n_augment: 0, ..TtgaConfig::default() },
            TtgaConfig { lambda_r_low: 2.0, ..TtgaConfig::default() },
            TtgaConfig { inversion_interval: 0, ..TtgaConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(&s), Err(Error::Config { .. })));
        }
    }
}
