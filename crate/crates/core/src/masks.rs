//! Spatial mask pairs splitting a latent between the identity-preserving
//! path (spade) and the augmentation path (club).

use std::fmt;
use std::str::FromStr;

use crate::denoiser::{ConditionEmbedding, Denoiser};
use crate::error::{Error, Result, Shape};
use crate::grid::{BinaryMask, LatentGrid};
use crate::rng::SeededRng;

/// `spade` and `club` partition the grid: exactly one is set at every pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPair {
    spade: BinaryMask,
    club: BinaryMask,
}

impl MaskPair {
    pub fn from_spade(spade: BinaryMask) -> Self {
        let club = spade.not();
        Self { spade, club }
    }

    pub fn all_spade(height: usize, width: usize) -> Self {
        Self::from_spade(BinaryMask::filled(height, width, true))
    }

    pub fn all_club(height: usize, width: usize) -> Self {
        Self::from_spade(BinaryMask::filled(height, width, false))
    }

    pub fn spade(&self) -> &BinaryMask {
        &self.spade
    }

    pub fn club(&self) -> &BinaryMask {
        &self.club
    }

    pub fn height(&self) -> usize {
        self.spade.height()
    }

    pub fn width(&self) -> usize {
        self.spade.width()
    }

    /// Fraction of pixels assigned to the identity path.
    pub fn spade_fraction(&self) -> f64 {
        self.spade.count() as f64 / self.spade.len() as f64
    }

    /// Per-pixel blend: `a` where spade is set, `b` elsewhere, broadcast over channels.
    pub fn blend(&self, a: &LatentGrid, b: &LatentGrid) -> Result<LatentGrid> {
        crate::error::check_shape(a.shape(), b.shape())?;
        if a.height() != self.height() || a.width() != self.width() {
            return Err(Error::Shape {
                expected: Shape::new(self.height(), self.width(), a.channels()),
                got: a.shape(),
            });
        }
        let c = a.channels();
        let bits = self.spade.bits();
        let values = a
            .values()
            .iter()
            .zip(b.values())
            .enumerate()
            .map(|(i, (&va, &vb))| if bits[i / c] { va } else { vb })
            .collect();
        LatentGrid::from_vec(a.shape(), values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskScheme {
    Bernoulli,
    Attention,
    Hybrid,
}

impl MaskScheme {
    pub fn needs_relevance(self) -> bool {
        !matches!(self, MaskScheme::Bernoulli)
    }
}

impl fmt::Display for MaskScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskScheme::Bernoulli => "bernoulli",
            MaskScheme::Attention => "attention",
            MaskScheme::Hybrid => "hybrid",
        })
    }
}

impl FromStr for MaskScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(MaskScheme::Bernoulli),
            "attention" => Ok(MaskScheme::Attention),
            "hybrid" => Ok(MaskScheme::Hybrid),
            other => Err(Error::config(
                "mask_scheme",
                format!("unknown scheme {other:?} (bernoulli, attention, hybrid)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskPolicy {
    pub scheme: MaskScheme,
    /// Probability that a Bernoulli pixel is assigned to spade.
    pub p_m: f64,
    pub relevance_quantile: f64,
    /// Draw a fresh mask at every loop step instead of once per augmentation.
    pub resample_per_step: bool,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            scheme: MaskScheme::Hybrid,
            p_m: 0.75,
            relevance_quantile: 0.5,
            resample_per_step: false,
        }
    }
}

impl MaskPolicy {
    pub fn validate(&self) -> Result<()> {
        check_probability(self.p_m)?;
        check_quantile(self.relevance_quantile)
    }

    /// Samples one pair under this policy. `relevance` is required by the
    /// attention and hybrid schemes.
    pub fn sample(
        &self,
        height: usize,
        width: usize,
        relevance: Option<&LatentGrid>,
        rng: &mut SeededRng,
    ) -> Result<MaskPair> {
        let attention = || -> Result<MaskPair> {
            let r = relevance.ok_or_else(|| {
                Error::Contract(format!("the {} scheme needs a relevance map", self.scheme))
            })?;
            if r.height() != height || r.width() != width {
                return Err(Error::Shape {
                    expected: Shape::new(height, width, 1),
                    got: r.shape(),
                });
            }
            attention_mask(r, self.relevance_quantile)
        };
        match self.scheme {
            MaskScheme::Bernoulli => bernoulli_mask(height, width, self.p_m, rng),
            MaskScheme::Attention => attention(),
            MaskScheme::Hybrid => {
                let mp = attention()?;
                let mb = bernoulli_mask(height, width, self.p_m, rng)?;
                hybrid_mask(&mb, &mp)
            }
        }
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config("p_m", format!("{p} is outside [0, 1]")))
    }
}

fn check_quantile(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::config("relevance_quantile", format!("{q} is outside (0, 1)")))
    }
}

pub fn bernoulli_mask(height: usize, width: usize, p_m: f64, rng: &mut SeededRng) -> Result<MaskPair> {
    check_probability(p_m)?;
    let spade = BinaryMask::from_fn(height, width, |_, _| rng.bernoulli(p_m));
    Ok(MaskPair::from_spade(spade))
}

/// Linear-interpolation quantile of `values` (sorted copy).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Spade marks pixels whose relevance is at or above the `quantile` of the
/// strictly positive relevance values (of all values when none is positive).
/// A constant map therefore yields an all-spade pair.
pub fn attention_mask(relevance: &LatentGrid, q: f64) -> Result<MaskPair> {
    check_quantile(q)?;
    if relevance.channels() != 1 {
        return Err(Error::Contract(format!(
            "relevance must have one channel, got {}",
            relevance.channels()
        )));
    }
    if !relevance.is_finite() {
        return Err(Error::Contract("relevance map has non-finite values".into()));
    }
    let positive: Vec<f64> = relevance.values().iter().copied().filter(|&v| v > 0.0).collect();
    let pool = if positive.is_empty() {
        relevance.values()
    } else {
        &positive
    };
    let threshold = quantile(pool, q);
    Ok(MaskPair::from_spade(BinaryMask::threshold(relevance, threshold)))
}

/// Spade is set where the Bernoulli and attention spades agree.
pub fn hybrid_mask(mb: &MaskPair, mp: &MaskPair) -> Result<MaskPair> {
    Ok(MaskPair::from_spade(mb.spade().xor(mp.spade())?.not()))
}

/// Source of the per-pixel relevance map used by the attention scheme.
pub trait RelevanceProvider: Send + Sync {
    fn relevance(
        &self,
        m: &dyn Denoiser,
        x: &LatentGrid,
        t: usize,
        e: &ConditionEmbedding,
    ) -> Result<LatentGrid>;
}

/// `|d ||eps(x, t, e)||^2 / dx|` summed over channels and smoothed with a
/// 3x3 box filter.
#[derive(Debug, Clone, Copy, Default)]
pub struct SaliencyRelevance;

impl RelevanceProvider for SaliencyRelevance {
    fn relevance(
        &self,
        m: &dyn Denoiser,
        x: &LatentGrid,
        t: usize,
        e: &ConditionEmbedding,
    ) -> Result<LatentGrid> {
        let eps = m.predict(x, t, e)?;
        let g = m.grad_wrt_input(&eps.scale(2.0), x, t, e)?;
        let (h, w, c) = (x.height(), x.width(), x.channels());
        let mag = LatentGrid::from_fn(Shape::new(h, w, 1), |y, xx, _| {
            (0..c).map(|k| g.get(y, xx, k).abs()).sum()
        });
        Ok(box_filter3(&mag))
    }
}

/// Uses a supplied relevance grid regardless of the latent.
#[derive(Debug, Clone)]
pub struct FixedRelevance(pub LatentGrid);

impl RelevanceProvider for FixedRelevance {
    fn relevance(
        &self,
        _m: &dyn Denoiser,
        x: &LatentGrid,
        _t: usize,
        _e: &ConditionEmbedding,
    ) -> Result<LatentGrid> {
        if self.0.height() != x.height() || self.0.width() != x.width() {
            return Err(Error::Shape {
                expected: Shape::new(x.height(), x.width(), 1),
                got: self.0.shape(),
            });
        }
        Ok(self.0.clone())
    }
}

/// Mean over the in-bounds 3x3 neighbourhood of a single-channel grid.
pub fn box_filter3(g: &LatentGrid) -> LatentGrid {
    let (h, w) = (g.height() as isize, g.width() as isize);
    LatentGrid::from_fn(Shape::new(g.height(), g.width(), 1), |y, x, _| {
        let (mut sum, mut n) = (0.0, 0.0);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                if yy >= 0 && yy < h && xx >= 0 && xx < w {
                    sum += g.get(yy as usize, xx as usize, 0);
                    n += 1.0;
                }
            }
        }
        sum / n
    })
}
