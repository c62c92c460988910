//! Segmentation and error-estimation metrics on binary masks.
//!
//! Boundaries are foreground pixels with at least one 4-neighbour that is
//! background or outside the image. Distances are Euclidean, in pixels.

use ttga_core::{BinaryMask, Error, LatentGrid, Result};

/// `200 |A & B| / (|A| + |B|)`; two empty masks score 100.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.same_size(gt)?;
    let (a, b) = (pred.count(), gt.count());
    if a + b == 0 {
        return Ok(100.0);
    }
    let inter = pred
        .bits()
        .iter()
        .zip(gt.bits())
        .filter(|(p, g)| **p && **g)
        .count();
    Ok(200.0 * inter as f64 / (a + b) as f64)
}

/// Area under the ROC curve in percent, via the Mann-Whitney statistic with
/// midranks for tied scores. `None` when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid * pos as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(100.0 * u / (n_pos as f64 * n_neg as f64))
}

pub fn roc_auc_grid(scores: &LatentGrid, gt: &BinaryMask) -> Result<Option<f64>> {
    if scores.height() != gt.height() || scores.width() != gt.width() || scores.channels() != 1 {
        return Err(Error::Contract(format!(
            "score grid {} does not match a {}x{} mask",
            scores.shape(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(roc_auc(scores.values(), gt.bits()))
}

pub fn boundary(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.height(), mask.width());
    BinaryMask::from_fn(h, w, |y, x| {
        mask.get(y, x)
            && (y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask.get(y - 1, x)
                || !mask.get(y + 1, x)
                || !mask.get(y, x - 1)
                || !mask.get(y, x + 1))
    })
}

/// Squared Euclidean distance from every pixel to the nearest set pixel,
/// by two separable passes of the lower-envelope transform. Infinite when
/// the mask is empty.
pub fn squared_distance_transform(mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = (mask.height(), mask.width());
    let mut d: Vec<f64> = mask
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let mut buf = Vec::new();
    for x in 0..w {
        buf.clear();
        buf.extend((0..h).map(|y| d[y * w + x]));
        let out = envelope_1d(&buf);
        for y in 0..h {
            d[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        let out = envelope_1d(&d[y * w..(y + 1) * w]);
        d[y * w..(y + 1) * w].copy_from_slice(&out);
    }
    d
}

fn envelope_1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sites.is_empty() {
        return vec![f64::INFINITY; n];
    }
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    let cross = |a: usize, b: usize| -> f64 {
        ((f[b] + (b * b) as f64) - (f[a] + (a * a) as f64)) / (2.0 * (b as f64 - a as f64))
    };
    for &q in &sites {
        while let Some(&last) = v.last() {
            if v.len() > 1 && cross(last, q) <= z[z.len() - 1] {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        if v.is_empty() {
            v.push(q);
            z.push(f64::NEG_INFINITY);
        } else {
            z.push(cross(*v.last().unwrap(), q));
            v.push(q);
        }
    }
    let mut out = vec![0.0; n];
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
    out
}

/// Distances from each boundary pixel of `from` to the boundary of `to`.
fn directed_distances(from: &BinaryMask, to_dist2: &[f64]) -> Vec<f64> {
    from.bits()
        .iter()
        .zip(to_dist2)
        .filter(|(b, _)| **b)
        .map(|(_, d)| d.sqrt())
        .collect()
}

/// Linear-interpolation percentile of ascending `sorted`, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn diagonal(mask: &BinaryMask) -> f64 {
    ((mask.height() * mask.height() + mask.width() * mask.width()) as f64).sqrt()
}

/// 95th percentile of the pooled boundary distances in both directions.
/// Two empty masks give 0; exactly one empty mask gives the image diagonal.
pub fn hd95(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    pred.same_size(gt)?;
    match (pred.any(), gt.any()) {
        (false, false) => return Ok(0.0),
        (true, false) | (false, true) => return Ok(diagonal(gt)),
        _ => {}
    }
    let (bp, bg) = (boundary(pred), boundary(gt));
    let mut d = directed_distances(&bp, &squared_distance_transform(&bg));
    d.extend(directed_distances(&bg, &squared_distance_transform(&bp)));
    d.sort_by(|a, b| a.total_cmp(b));
    Ok(percentile(&d, 95.0))
}

/// `max(1, round(0.01 * diagonal))` pixels.
pub fn default_nsd_tolerance(height: usize, width: usize) -> f64 {
    (0.01 * ((height * height + width * width) as f64).sqrt()).round().max(1.0)
}

/// Percentage of boundary pixels of both masks within `tolerance` of the
/// other mask's boundary. Two empty masks give 100, one empty mask 0.
pub fn nsd(pred: &BinaryMask, gt: &BinaryMask, tolerance: f64) -> Result<f64> {
    pred.same_size(gt)?;
    if tolerance < 0.0 || !tolerance.is_finite() {
        return Err(Error::Contract(format!("tolerance {tolerance} must be >= 0")));
    }
    match (pred.any(), gt.any()) {
        (false, false) => return Ok(100.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let (bp, bg) = (boundary(pred), boundary(gt));
    let tol2 = tolerance * tolerance;
    let close = |from: &BinaryMask, to: &BinaryMask| -> usize {
        let dt = squared_distance_transform(to);
        from.bits()
            .iter()
            .zip(&dt)
            .filter(|(b, d)| **b && **d <= tol2)
            .count()
    };
    let within = close(&bp, &bg) + close(&bg, &bp);
    Ok(100.0 * within as f64 / (bp.count() + bg.count()) as f64)
}

/// Pixels where the binarized prediction (`p >= 0.5`) disagrees with `gt`.
pub fn error_ground_truth(pred_prob: &LatentGrid, gt: &BinaryMask) -> Result<BinaryMask> {
    BinaryMask::threshold(pred_prob, 0.5).xor(gt)
}
