//! Brute-force metric oracles over all pixel pairs, written without the
//! distance transform.

#![allow(dead_code)]

use ttga_core::{BinaryMask, SeededRng};

pub fn dice(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let mut inter = 0;
    let mut total = 0;
    for (p, g) in a.bits().iter().zip(b.bits()) {
        inter += (*p && *g) as usize;
        total += *p as usize + *g as usize;
    }
    if total == 0 {
        100.0
    } else {
        200.0 * inter as f64 / total as f64
    }
}

/// Fraction of (positive, negative) pairs ranked correctly, ties count half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| !**l).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(100.0 * wins / (pos.len() * neg.len()) as f64)
}

/// Foreground pixels touching the background or the image edge (4-neighbourhood).
pub fn boundary_points(m: &BinaryMask) -> Vec<(i64, i64)> {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let inside = |y: i64, x: i64| y >= 0 && x >= 0 && y < h && x < w && m.get(y as usize, x as usize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if inside(y, x)
                && [(-1, 0), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(dy, dx)| !inside(y + dy, x + dx))
            {
                out.push((y, x));
            }
        }
    }
    out
}

fn nearest(p: (i64, i64), set: &[(i64, i64)]) -> i64 {
    set.iter()
        .map(|q| (p.0 - q.0).pow(2) + (p.1 - q.1).pow(2))
        .min()
        .expect("non-empty set")
}

fn diagonal(m: &BinaryMask) -> f64 {
    ((m.height().pow(2) + m.width().pow(2)) as f64).sqrt()
}

pub fn hd95(a: &BinaryMask, b: &BinaryMask) -> f64 {
    match (a.count() > 0, b.count() > 0) {
        (false, false) => return 0.0,
        (true, true) => {}
        _ => return diagonal(a),
    }
    let (ba, bb) = (boundary_points(a), boundary_points(b));
    let mut d: Vec<f64> = ba.iter().map(|&p| (nearest(p, &bb) as f64).sqrt()).collect();
    d.extend(bb.iter().map(|&p| (nearest(p, &ba) as f64).sqrt()));
    d.sort_by(f64::total_cmp);
    // numpy's default "linear" percentile
    let pos = 0.95 * (d.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    d[lo] + (pos - lo as f64) * (d[hi] - d[lo])
}

pub fn nsd(a: &BinaryMask, b: &BinaryMask, tol: f64) -> f64 {
    match (a.count() > 0, b.count() > 0) {
        (false, false) => return 100.0,
        (true, true) => {}
        _ => return 0.0,
    }
    let (ba, bb) = (boundary_points(a), boundary_points(b));
    let ok = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        from.iter().filter(|&&p| (nearest(p, to) as f64) <= tol * tol).count()
    };
    100.0 * (ok(&ba, &bb) + ok(&bb, &ba)) as f64 / (ba.len() + bb.len()) as f64
}

/// Random mask pair up to 16x16: independent noise, blobs, or empty.
pub fn fixture(seed: u64) -> (BinaryMask, BinaryMask) {
    let mut rng = SeededRng::new(seed, 0);
    let h = 1 + rng.below(16);
    let w = 1 + rng.below(16);
    let one = |rng: &mut SeededRng| -> BinaryMask {
        match rng.below(5) {
            0 => BinaryMask::filled(h, w, false),
            1 | 2 => {
                let p = rng.uniform();
                BinaryMask::from_fn(h, w, |_, _| rng.bernoulli(p))
            }
            _ => {
                let (cy, cx) = (rng.uniform() * h as f64, rng.uniform() * w as f64);
                let r = 0.5 + rng.uniform() * 6.0;
                BinaryMask::from_fn(h, w, |y, x| {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    dy * dy + dx * dx <= r * r
                })
            }
        }
    };
    let a = one(&mut rng);
    let b = one(&mut rng);
    (a, b)
}

/// Scores with deliberate ties for AUC fixtures.
pub fn scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SeededRng::new(seed, 1);
    let levels = 1 + rng.below(8);
    (0..n).map(|_| rng.below(levels) as f64 / levels as f64 + if rng.bernoulli(0.3) { rng.uniform() } else { 0.0 }).collect()
}
