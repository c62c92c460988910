//! Sampler behaviour on Gaussian data, checked against closed forms.

use ttga_core::denoiser::{ConditionEmbedding, Denoiser, GaussianMixtureDenoiser, Projection};
use ttga_core::sampler::{ddim_invert, ddim_sample, ddim_step, ddpm_reverse_step};
use ttga_core::{gaussian_grid, LatentGrid, NoiseSchedule, SeededRng, Shape};

/// Cumulative products of `1 - beta_t` for the default linear schedule,
/// computed without the library.
fn alpha_bars() -> Vec<f64> {
    let n = 1000;
    let mut out = vec![1.0];
    let mut acc = 1.0;
    for i in 0..n {
        let beta = 1e-4 + (0.02 - 1e-4) * i as f64 / (n - 1) as f64;
        acc *= 1.0 - beta;
        out.push(acc);
    }
    out
}

fn gaussian_oracle(shape: Shape, mean: LatentGrid, std: f64) -> GaussianMixtureDenoiser {
    let proj = Projection::gaussian(shape.len(), 2, 0.0, &mut SeededRng::new(0, 0));
    GaussianMixtureDenoiser::single(NoiseSchedule::default(), mean, std, proj).unwrap()
}

#[test]
fn schedule_matches_independent_products() {
    let s = NoiseSchedule::default();
    for (t, a) in alpha_bars().iter().enumerate() {
        assert!((s.alpha_bar(t) - a).abs() <= 1e-13, "t={t}");
    }
}

#[test]
fn ddim_step_matches_textbook_form() {
    let ab = alpha_bars();
    let shape = Shape::new(3, 3, 1);
    let mu = gaussian_grid(&mut SeededRng::new(1, 0), shape);
    let std = 0.7;
    let m = gaussian_oracle(shape, mu.clone(), std);
    let e = m.null_embedding();
    let mut x = gaussian_grid(&mut SeededRng::new(1, 1), shape);
    let s = NoiseSchedule::default();
    let mut t: usize = 1000;
    while t > 0 {
        let next = t.saturating_sub(37);
        let got = ddim_step(&m, &x, t, next, &e, &s).unwrap();
        let (a, an): (f64, f64) = (ab[t], ab[next]);
        let k = (1.0 - a).sqrt() / (a * std * std + 1.0 - a);
        let want: Vec<f64> = x
            .values()
            .iter()
            .zip(mu.values())
            .map(|(&xi, &mi)| {
                let eps = k * (xi - a.sqrt() * mi);
                let x0 = (xi - (1.0 - a).sqrt() * eps) / a.sqrt();
                an.sqrt() * x0 + (1.0 - an).sqrt() * eps
            })
            .collect();
        for (g, w) in got.values().iter().zip(&want) {
            assert!((g - w).abs() <= 1e-6 * w.abs().max(1.0), "t={t}: {g} vs {w}");
        }
        x = got;
        t = next;
    }
}

#[test]
fn ddim_tracks_the_marginal_mean() {
    // starting exactly on the marginal mean, every visited latent stays on it
    let ab = alpha_bars();
    let shape = Shape::new(2, 3, 1);
    let mu = gaussian_grid(&mut SeededRng::new(2, 0), shape);
    let m = gaussian_oracle(shape, mu.clone(), 1.3);
    let s = NoiseSchedule::default();
    let e = m.null_embedding();
    let mut x = mu.scale(ab[700].sqrt());
    let mut t: usize = 700;
    while t > 0 {
        let next = t.saturating_sub(10);
        x = ddim_step(&m, &x, t, next, &e, &s).unwrap();
        let want = mu.scale(ab[next].sqrt());
        assert!(x.sub(&want).unwrap().max_abs() <= 1e-6, "t={next}");
        t = next;
    }
}

#[test]
fn ddim_samples_have_the_data_mean() {
    let shape = Shape::new(2, 2, 1);
    let mu = LatentGrid::from_vec(shape, vec![1.0, -0.5, 0.25, 2.0]).unwrap();
    let m = gaussian_oracle(shape, mu.clone(), 1.0);
    let s = NoiseSchedule::default();
    let e = m.null_embedding();
    let n = 1000;
    let mut sum = LatentGrid::zeros(shape);
    for i in 0..n {
        let xt = gaussian_grid(&mut SeededRng::new(3, i), shape);
        let x0 = ddim_sample(&m, &xt, 1000, 20, &e, &s).unwrap();
        sum = sum.add_scaled(&x0, 1.0 / n as f64).unwrap();
    }
    let se = 1.0 / (n as f64).sqrt();
    for (g, w) in sum.values().iter().zip(mu.values()) {
        assert!((g - w).abs() < 3.0 * se, "{g} vs {w}");
    }
}

#[test]
fn ancestral_chain_reproduces_data_statistics() {
    let shape = Shape::new(1, 4, 1);
    let mu = LatentGrid::from_vec(shape, vec![0.5, -1.0, 0.0, 1.5]).unwrap();
    let std = 0.5;
    let m = gaussian_oracle(shape, mu.clone(), std);
    let s = NoiseSchedule::default();
    let e = m.null_embedding();
    let n = 600;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = SeededRng::new(4, i as u64);
        let mut x = gaussian_grid(&mut rng, shape);
        for t in (1..=1000).rev() {
            x = ddpm_reverse_step(&m, &x, t, &e, &s, &mut rng).unwrap();
        }
        samples.push(x);
    }
    for p in 0..shape.len() {
        let v: Vec<f64> = samples.iter().map(|g| g.values()[p]).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - mu.values()[p]).abs() < 3.0 * std / (n as f64).sqrt(), "pixel {p} mean {mean}");
        // sampling sd of a variance estimate is about var * sqrt(2 / n)
        assert!((var / (std * std) - 1.0).abs() < 0.25, "pixel {p} var {var}");
    }
}

#[test]
fn inversion_round_trip_improves_with_finer_ladders() {
    let shape = Shape::new(8, 8, 1);
    let mu = gaussian_grid(&mut SeededRng::new(5, 0), shape).scale(0.3);
    let m = gaussian_oracle(shape, mu.clone(), 0.4);
    let s = NoiseSchedule::default();
    let e = ConditionEmbedding::null(2);
    let mut last = f64::INFINITY;
    for interval in [50, 25, 10, 5] {
        let mut err = 0.0;
        for i in 0..5 {
            let x0 = mu.add_scaled(&gaussian_grid(&mut SeededRng::new(6, i), shape), 0.4).unwrap();
            let tr = ddim_invert(&m, &x0, 300, interval, &e, &s).unwrap();
            let back = ddim_sample(&m, tr.x_tau(), 300, interval, &e, &s).unwrap();
            err += back.sub(&x0).unwrap().l2_norm() / x0.l2_norm();
        }
        assert!(err < last, "interval {interval}: {err} vs {last}");
        last = err;
    }
}
