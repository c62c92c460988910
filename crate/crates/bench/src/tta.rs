//! Geometric test-time augmentation baseline.

use ttga_core::{ensemble, EnsembleResult, LatentGrid, ProbabilityGrid, Result, SeededRng};

use crate::segmenter::SegmenterModel;

/// One of the eight symmetries of the square: `rot` quarter turns
/// counter-clockwise after an optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dihedral {
    pub flip: bool,
    pub rot: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { flip: false, rot: 0 };

    pub fn all() -> [Dihedral; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            *d = Dihedral {
                flip: i >= 4,
                rot: (i % 4) as u8,
            };
        }
        out
    }

    /// Source pixel read by output pixel `(y, x)` of an `n x n` grid.
    fn source(self, y: usize, x: usize, n: usize) -> (usize, usize) {
        let (mut sy, mut sx) = (y, x);
        for _ in 0..self.rot {
            (sy, sx) = (sx, n - 1 - sy);
        }
        if self.flip {
            sx = n - 1 - sx;
        }
        (sy, sx)
    }

    pub fn apply(self, g: &LatentGrid) -> LatentGrid {
        let n = g.height();
        assert_eq!(n, g.width(), "dihedral transforms need square grids");
        LatentGrid::from_fn(g.shape(), |y, x, c| {
            let (sy, sx) = self.source(y, x, n);
            g.get(sy, sx, c)
        })
    }

    pub fn inverse(self) -> Dihedral {
        if self.flip {
            self
        } else {
            Dihedral {
                flip: false,
                rot: (4 - self.rot) % 4,
            }
        }
    }
}

/// Segments `n_views` transformed copies of `image`, maps each prediction back
/// and ensembles them. View 0 is the untouched image; later views cycle
/// through the non-trivial symmetries with a small random gain and offset.
pub fn tta_baseline(
    seg: &SegmenterModel,
    image: &LatentGrid,
    n_views: usize,
    rng: &mut SeededRng,
) -> Result<EnsembleResult> {
    let transforms = Dihedral::all();
    let mut members: Vec<ProbabilityGrid> = Vec::with_capacity(n_views);
    for v in 0..n_views.max(1) {
        let t = transforms[v % 8];
        let view = if v == 0 {
            image.clone()
        } else {
            let gain = rng.uniform_range(0.95, 1.05);
            let offset = rng.uniform_range(-0.05, 0.05);
            t.apply(image).map(|p| gain * p + offset)
        };
        let fg = seg.foreground(&view)?;
        members.push(ProbabilityGrid::from_foreground(&t.inverse().apply(&fg))?);
    }
    ensemble(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ttga_core::Shape;

    #[test]
    fn inverses_undo_transforms() {
        let g = LatentGrid::from_fn(Shape::new(5, 5, 1), |y, x, _| (y * 5 + x) as f64);
        for d in Dihedral::all() {
            assert_eq!(d.inverse().apply(&d.apply(&g)), g);
        }
        let distinct: std::collections::HashSet<Vec<u64>> = Dihedral::all()
            .iter()
            .map(|d| d.apply(&g).values().iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(distinct.len(), 8);
    }

    #[test]
    fn single_view_is_plain_segmentation() {
        let seg = SegmenterModel::threshold(0.1, 0.2);
        let img = LatentGrid::from_fn(Shape::new(6, 6, 1), |y, x, _| (y as f64 - x as f64) / 6.0);
        let r = tta_baseline(&seg, &img, 1, &mut SeededRng::new(0, 0)).unwrap();
        assert_eq!(r.mean_probability, seg.segment(&img).unwrap());
    }
}
