//! Toy segmenters producing per-pixel two-class probabilities.

use ttga_core::adam::{AdamConfig, AdamState};
use ttga_core::{Error, LatentGrid, ProbabilityGrid, Result, SeededRng};

use crate::scene::ToyScene;

/// Side length of the square patch the trained segmenter reads.
pub const PATCH: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum SegmenterModel {
    /// `sigmoid((v - threshold) / temperature)` per pixel.
    Threshold { threshold: f64, temperature: f64 },
    /// Logistic regression on the clamped 3x3 neighbourhood.
    Patch { weights: Vec<f64>, bias: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmenterTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for SegmenterTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.05,
            l2: 1e-3,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn patch(img: &LatentGrid, y: usize, x: usize, out: &mut [f64]) {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let r = (PATCH / 2) as isize;
    let mut k = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            let yy = (y as isize + dy).clamp(0, h - 1) as usize;
            let xx = (x as isize + dx).clamp(0, w - 1) as usize;
            out[k] = img.get(yy, xx, 0);
            k += 1;
        }
    }
}

impl SegmenterModel {
    pub fn threshold(threshold: f64, temperature: f64) -> Self {
        SegmenterModel::Threshold {
            threshold,
            temperature,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SegmenterModel::Threshold { .. } => "threshold",
            SegmenterModel::Patch { .. } => "trained",
        }
    }

    /// Foreground logit at every pixel.
    fn logits(&self, img: &LatentGrid) -> Vec<f64> {
        let (h, w) = (img.height(), img.width());
        match self {
            SegmenterModel::Threshold {
                threshold,
                temperature,
            } => img.values().iter().map(|v| (v - threshold) / temperature).collect(),
            SegmenterModel::Patch { weights, bias } => {
                let mut buf = [0.0; PATCH * PATCH];
                let mut out = Vec::with_capacity(h * w);
                for y in 0..h {
                    for x in 0..w {
                        patch(img, y, x, &mut buf);
                        out.push(bias + weights.iter().zip(&buf).map(|(a, b)| a * b).sum::<f64>());
                    }
                }
                out
            }
        }
    }

    /// Per-pixel background/foreground probabilities.
    pub fn segment(&self, img: &LatentGrid) -> Result<ProbabilityGrid> {
        if img.channels() != 1 {
            return Err(Error::Contract(format!(
                "segmenters read single-channel images, got {}",
                img.shape()
            )));
        }
        let fg = self.foreground(img)?;
        ProbabilityGrid::from_foreground(&fg)
    }

    pub fn foreground(&self, img: &LatentGrid) -> Result<LatentGrid> {
        let p = self.logits(img).into_iter().map(sigmoid).collect();
        LatentGrid::from_vec(ttga_core::Shape::new(img.height(), img.width(), 1), p)
    }

    /// Flat parameter vector: threshold models store `[threshold, temperature]`,
    /// patch models the weights followed by the bias.
    pub fn params(&self) -> Vec<f64> {
        match self {
            SegmenterModel::Threshold {
                threshold,
                temperature,
            } => vec![*threshold, *temperature],
            SegmenterModel::Patch { weights, bias } => {
                let mut p = weights.clone();
                p.push(*bias);
                p
            }
        }
    }

    pub fn from_params(kind: &str, p: &[f64]) -> Result<Self> {
        match (kind, p.len()) {
            ("threshold", 2) => Ok(Self::threshold(p[0], p[1])),
            ("trained", n) if n == PATCH * PATCH + 1 => Ok(SegmenterModel::Patch {
                weights: p[..n - 1].to_vec(),
                bias: p[n - 1],
            }),
            _ => Err(Error::Format(format!(
                "cannot build a {kind:?} segmenter from {} parameters",
                p.len()
            ))),
        }
    }
}

/// Full-batch logistic regression with Adam on every pixel of `scenes`.
pub fn train_segmenter(
    scenes: &[ToyScene],
    config: &SegmenterTrainConfig,
    rng: &mut SeededRng,
) -> Result<SegmenterModel> {
    if scenes.is_empty() {
        return Err(Error::config("train_scenes", "must not be empty"));
    }
    let dim = PATCH * PATCH;
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut buf = [0.0; PATCH * PATCH];
    for s in scenes {
        for y in 0..s.image.height() {
            for x in 0..s.image.width() {
                patch(&s.image, y, x, &mut buf);
                feats.extend_from_slice(&buf);
                labels.push(if s.gt_mask.get(y, x) { 1.0 } else { 0.0 });
            }
        }
    }
    let n = labels.len() as f64;
    let mut params: Vec<f64> = (0..=dim).map(|_| 0.01 * rng.normal()).collect();
    let mut adam = AdamState::new(dim + 1, AdamConfig::with_lr(config.lr));
    for _ in 0..config.epochs {
        let mut grad = vec![0.0; dim + 1];
        for (f, &yv) in feats.chunks_exact(dim).zip(&labels) {
            let z = params[dim] + params[..dim].iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
            let r = sigmoid(z) - yv;
            grad[..dim].iter_mut().zip(f).for_each(|(g, fi)| *g += r * fi);
            grad[dim] += r;
        }
        grad.iter_mut().for_each(|g| *g /= n);
        for (g, p) in grad[..dim].iter_mut().zip(&params[..dim]) {
            *g += config.l2 * p;
        }
        adam.step(&mut params, &grad)?;
    }
    Ok(SegmenterModel::Patch {
        weights: params[..dim].to_vec(),
        bias: params[dim],
    })
}
