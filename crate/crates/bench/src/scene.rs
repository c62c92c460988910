//! Synthetic single-disk scenes with occluding bars, blur and noise.

use ttga_core::{BinaryMask, LatentGrid, SeededRng, Shape};

pub const DEFAULT_SIZE: usize = 32;

/// Disk and background intensities at unit contrast.
pub const FOREGROUND: f64 = 0.5;
pub const BACKGROUND: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Difficulty {
    /// Opacity of the occluding bar, 0 disables it.
    pub occlusion: f64,
    /// Gaussian blur sigma in pixels.
    pub blur: f64,
    pub noise: f64,
    /// Scale of the foreground/background separation.
    pub contrast: f64,
    /// Fraction of scenes that receive an occluder when `occlusion > 0`.
    pub occluded_fraction: f64,
}

impl Difficulty {
    pub const CLEAN: Difficulty = Difficulty {
        occlusion: 0.0,
        blur: 0.0,
        noise: 0.0,
        contrast: 1.0,
        occluded_fraction: 1.0,
    };
}

impl Default for Difficulty {
    fn default() -> Self {
        Self::CLEAN
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    /// A point on the disk boundary the bar passes through.
    pub cy: f64,
    pub cx: f64,
    pub angle: f64,
    pub half_width: f64,
    pub half_length: f64,
    pub opacity: f64,
}

impl Occluder {
    fn covers(&self, py: f64, px: f64) -> bool {
        let (dy, dx) = (py - self.cy, px - self.cx);
        let (s, c) = self.angle.sin_cos();
        let along = dx * c + dy * s;
        let across = -dx * s + dy * c;
        along.abs() <= self.half_length && across.abs() <= self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub size: usize,
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
    pub occluder: Option<Occluder>,
    pub blur: f64,
    pub noise: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub id: usize,
    pub image: LatentGrid,
    pub gt_mask: BinaryMask,
    pub params: SceneParams,
}

/// Pixel `(y, x)` belongs to the disk when its centre lies within `radius`.
pub fn rasterize_disk(size: usize, cy: f64, cx: f64, radius: f64) -> BinaryMask {
    BinaryMask::from_fn(size, size, |y, x| {
        let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
        dy * dy + dx * dx <= radius * radius
    })
}

pub fn sample_params(size: usize, d: &Difficulty, rng: &mut SeededRng) -> SceneParams {
    let s = size as f64;
    let radius = rng.uniform_range(0.15 * s, 0.28 * s);
    let margin = radius + 1.0;
    let cy = rng.uniform_range(margin, s - margin);
    let cx = rng.uniform_range(margin, s - margin);
    let occluded = d.occlusion > 0.0 && rng.uniform() < d.occluded_fraction;
    let occluder = occluded.then(|| {
        let theta = rng.uniform_range(0.0, std::f64::consts::TAU);
        Occluder {
            cy: cy + radius * theta.sin(),
            cx: cx + radius * theta.cos(),
            angle: rng.uniform_range(0.0, std::f64::consts::PI),
            half_width: rng.uniform_range(1.5, 3.0),
            half_length: rng.uniform_range(0.6, 1.0) * radius,
            opacity: d.occlusion,
        }
    });
    SceneParams {
        size,
        cy,
        cx,
        radius,
        occluder,
        blur: d.blur,
        noise: d.noise,
        contrast: d.contrast,
    }
}

/// Renders a scene; `rng` only supplies the additive noise.
pub fn render(id: usize, p: &SceneParams, rng: &mut SeededRng) -> ToyScene {
    let gt = rasterize_disk(p.size, p.cy, p.cx, p.radius);
    let bg = BACKGROUND * p.contrast;
    let fg = FOREGROUND * p.contrast;
    let mut img = LatentGrid::from_fn(Shape::new(p.size, p.size, 1), |y, x, _| {
        let mut v = if gt.get(y, x) { fg } else { bg };
        if let Some(o) = &p.occluder {
            if o.covers(y as f64 + 0.5, x as f64 + 0.5) {
                v = (1.0 - o.opacity) * v + o.opacity * bg;
            }
        }
        v
    });
    if p.blur > 0.0 {
        img = gaussian_blur(&img, p.blur);
    }
    if p.noise > 0.0 {
        img.values_mut().iter_mut().for_each(|v| *v += p.noise * rng.normal());
    }
    ToyScene {
        id,
        image: img,
        gt_mask: gt,
        params: *p,
    }
}

/// `n` scenes; scene `i` draws its geometry and noise from stream `i` of `seed`.
pub fn make_dataset(n: usize, size: usize, d: &Difficulty, seed: u64) -> Vec<ToyScene> {
    (0..n)
        .map(|i| {
            let mut rng = SeededRng::new(seed, i as u64);
            let p = sample_params(size, d, &mut rng);
            render(i, &p, &mut rng)
        })
        .collect()
}

/// Separable Gaussian blur with clamped borders, single channel.
pub fn gaussian_blur(img: &LatentGrid, sigma: f64) -> LatentGrid {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= z);
    let (h, w) = (img.height() as isize, img.width() as isize);
    let pass = |src: &LatentGrid, vertical: bool| {
        LatentGrid::from_fn(src.shape(), |y, x, _| {
            k.iter()
                .enumerate()
                .map(|(j, kv)| {
                    let o = j as isize - r;
                    let (yy, xx) = if vertical {
                        ((y as isize + o).clamp(0, h - 1), x as isize)
                    } else {
                        (y as isize, (x as isize + o).clamp(0, w - 1))
                    };
                    kv * src.get(yy as usize, xx as usize, 0)
                })
                .sum()
        })
    };
    pass(&pass(img, false), true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datasets_are_reproducible() {
        let d = Difficulty {
            occlusion: 0.6,
            blur: 1.0,
            noise: 0.1,
            contrast: 0.8,
            occluded_fraction: 0.5,
        };
        assert_eq!(make_dataset(5, 32, &d, 3), make_dataset(5, 32, &d, 3));
        assert_ne!(make_dataset(5, 32, &d, 3), make_dataset(5, 32, &d, 4));
    }

    #[test]
    fn clean_scene_is_two_level() {
        let s = &make_dataset(1, 32, &Difficulty::CLEAN, 1)[0];
        for y in 0..32 {
            for x in 0..32 {
                let want = if s.gt_mask.get(y, x) { FOREGROUND } else { BACKGROUND };
                assert_eq!(s.image.get(y, x, 0), want);
            }
        }
        let p = s.params;
        assert_eq!(s.gt_mask, rasterize_disk(32, p.cy, p.cx, p.radius));
    }

    #[test]
    fn occluder_crosses_the_boundary() {
        let d = Difficulty {
            occlusion: 1.0,
            ..Difficulty::CLEAN
        };
        for s in make_dataset(20, 32, &d, 7) {
            let o = s.params.occluder.unwrap();
            let (mut inside, mut outside) = (false, false);
            for y in 0..32 {
                for x in 0..32 {
                    if o.covers(y as f64 + 0.5, x as f64 + 0.5) {
                        if s.gt_mask.get(y, x) {
                            inside = true;
                        } else {
                            outside = true;
                        }
                    }
                }
            }
            assert!(inside && outside, "scene {}", s.id);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let g = LatentGrid::filled(Shape::new(8, 8, 1), 0.3);
        let b = gaussian_blur(&g, 1.5);
        assert!(b.sub(&g).unwrap().max_abs() < 1e-12);
    }
}
