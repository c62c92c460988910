//! Per-pixel class probabilities, ensemble averaging and entropy.

use crate::error::{Error, Result, Shape};
use crate::grid::LatentGrid;

const NORMALIZATION_TOL: f64 = 1e-9;

/// `H x W` pixels with a probability vector over `K` classes each,
/// stored pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid {
    height: usize,
    width: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl ProbabilityGrid {
    pub fn new(height: usize, width: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Contract("need at least two classes".into()));
        }
        if probs.len() != height * width * classes {
            return Err(Error::Shape {
                expected: Shape::new(height, width, classes),
                got: Shape::new(probs.len(), 1, 1),
            });
        }
        for (i, px) in probs.chunks_exact(classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Contract(format!(
                    "pixel {i} is not a probability vector: {px:?}"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            classes,
            probs,
        })
    }

    /// Two-class grid from foreground probabilities in channel 0.
    pub fn from_foreground(fg: &LatentGrid) -> Result<Self> {
        let mut probs = Vec::with_capacity(fg.height() * fg.width() * 2);
        for y in 0..fg.height() {
            for x in 0..fg.width() {
                let p = fg.get(y, x, 0);
                probs.push(1.0 - p);
                probs.push(p);
            }
        }
        Self::new(fg.height(), fg.width(), 2, probs)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let i = (y * self.width + x) * self.classes;
        &self.probs[i..i + self.classes]
    }

    /// Probability of the last class (foreground for binary grids).
    pub fn foreground(&self) -> LatentGrid {
        let k = self.classes;
        let values = self.probs.chunks_exact(k).map(|px| px[k - 1]).collect();
        LatentGrid::from_vec(Shape::new(self.height, self.width, 1), values)
            .expect("dimensions are consistent")
    }

    /// Shannon entropy in bits per pixel.
    pub fn entropy(&self) -> LatentGrid {
        let values = self.probs.chunks_exact(self.classes).map(entropy_bits).collect();
        LatentGrid::from_vec(Shape::new(self.height, self.width, 1), values)
            .expect("dimensions are consistent")
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width && self.classes == other.classes
    }
}

/// `-sum p log2 p` with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    let h: f64 = p
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| -q * q.log2())
        .sum();
    h.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub mean_probability: ProbabilityGrid,
    pub entropy_map: LatentGrid,
    pub member_probabilities: Vec<ProbabilityGrid>,
}

/// Arithmetic mean of the members and the entropy of that mean.
pub fn ensemble(members: Vec<ProbabilityGrid>) -> Result<EnsembleResult> {
    let first = members
        .first()
        .ok_or_else(|| Error::Contract("ensemble needs at least one member".into()))?;
    if let Some(bad) = members.iter().find(|m| !m.same_layout(first)) {
        return Err(Error::Shape {
            expected: Shape::new(first.height, first.width, first.classes),
            got: Shape::new(bad.height, bad.width, bad.classes),
        });
    }
    let n = members.len() as f64;
    let mut sum = vec![0.0; first.probs.len()];
    for m in &members {
        sum.iter_mut().zip(&m.probs).for_each(|(a, b)| *a += b);
    }
    let probs = sum.into_iter().map(|v| v / n).collect();
    let mean = ProbabilityGrid::new(first.height, first.width, first.classes, probs)?;
    let entropy_map = mean.entropy();
    Ok(EnsembleResult {
        mean_probability: mean,
        entropy_map,
        member_probabilities: members,
    })
}

/// Entropy normalized by `log2 K` into `[0, 1]`.
pub fn error_estimate_map(result: &EnsembleResult) -> LatentGrid {
    let k = result.mean_probability.classes() as f64;
    result.entropy_map.map(|h| (h / k.log2()).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(ps: &[f64]) -> ProbabilityGrid {
        let fg = LatentGrid::from_vec(Shape::new(1, ps.len(), 1), ps.to_vec()).unwrap();
        ProbabilityGrid::from_foreground(&fg).unwrap()
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy_bits(&[0.5, 0.5]), 1.0);
        assert_eq!(entropy_bits(&[0.0, 1.0]), 0.0);
        assert!((entropy_bits(&[0.25, 0.75]) - 0.811278).abs() < 1e-6);
        assert!((entropy_bits(&[0.25; 4]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn identical_members_are_idempotent() {
        let m = binary(&[0.1, 0.25, 0.9]);
        let r = ensemble(vec![m.clone(); 4]).unwrap();
        assert_eq!(r.mean_probability, m);
        assert_eq!(r.entropy_map, m.entropy());
    }

    #[test]
    fn mean_and_normalized_error() {
        let r = ensemble(vec![binary(&[0.0, 1.0, 0.0]), binary(&[1.0, 1.0, 0.5])]).unwrap();
        assert_eq!(r.mean_probability.foreground().values(), &[0.5, 1.0, 0.25]);
        let e = error_estimate_map(&r);
        assert_eq!(e.values()[0], 1.0);
        assert_eq!(e.values()[1], 0.0);
        assert!((e.values()[2] - 0.811278).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_members() {
        assert!(ensemble(vec![]).is_err());
        assert!(ensemble(vec![binary(&[0.1]), binary(&[0.1, 0.2])]).is_err());
        assert!(ProbabilityGrid::new(1, 1, 2, vec![0.3, 0.3]).is_err());
        assert!(ProbabilityGrid::new(1, 1, 2, vec![1.5, -0.5]).is_err());
    }
}
