use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::rng::{gaussian_grid, SeededRng};
use crate::schedule::NoiseSchedule;

use super::net::hwc_to_chw;
use super::{ConditionEmbedding, ConvDenoiser, Denoiser, NetConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Probability of replacing the condition with the null embedding.
    pub drop_prob: f64,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            epochs: 30,
            batch_size: 16,
            drop_prob: 0.1,
            lr: 2e-3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Samples trained with the null embedding substituted.
    pub null_substitutions: usize,
    /// Samples trained with their own condition.
    pub conditional_uses: usize,
    /// Mean epsilon-MSE per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a [`ConvDenoiser`] on `(x0, condition)` pairs with the standard
/// epsilon-prediction objective and classifier-free condition dropout.
pub fn train_toy_denoiser(
    dataset: &[(LatentGrid, ConditionEmbedding)],
    schedule: &NoiseSchedule,
    rng: &mut SeededRng,
    config: &TrainConfig,
) -> Result<(ConvDenoiser, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::config("dataset", "must not be empty"));
    }
    if config.batch_size == 0 {
        return Err(Error::config("batch_size", "must be positive"));
    }
    if !(0.0..=1.0).contains(&config.drop_prob) {
        return Err(Error::config("drop_prob", "must lie in [0, 1]"));
    }
    let mut model = ConvDenoiser::init(config.net, rng)?;
    for (x, e) in dataset {
        model.check_embedding(e)?;
        if x.channels() != config.net.channels {
            return Err(Error::config("dataset", "channel count differs from the network"));
        }
    }
    let null = model.null_embedding();
    let mut adam = AdamState::new(model.params().len(), AdamConfig::with_lr(config.lr));
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for _epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; model.params().len()];
            for &i in batch {
                let (x0, cond) = &dataset[i];
                let e = if rng.bernoulli(config.drop_prob) {
                    report.null_substitutions += 1;
                    &null
                } else {
                    report.conditional_uses += 1;
                    cond
                };
                let t = 1 + rng.below(schedule.total_steps());
                let noise = gaussian_grid(rng, x0.shape());
                let a = schedule.alpha_bar(t);
                let xt = x0.scale(a.sqrt()).add_scaled(&noise, (1.0 - a).sqrt())?;
                let fwd = model.forward(&xt, t, e.values());
                let target = hwc_to_chw(&noise);
                let pred = fwd.tape.value(fwd.out);
                let n = pred.len() as f64;
                let mut loss = 0.0;
                let seed: Vec<f64> = pred
                    .iter()
                    .zip(&target)
                    .map(|(p, z)| {
                        loss += (p - z) * (p - z);
                        2.0 * (p - z) / n
                    })
                    .collect();
                epoch_loss += loss / n;
                let g = model.param_grads(&fwd, seed);
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let k = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= k);
            adam.step(model.params_mut(), &grad)?;
        }
        report.epoch_losses.push(epoch_loss / dataset.len() as f64);
    }
    Ok((model, report))
}

/// Monte-Carlo epsilon-MSE of `model` over `data`, one random `(t, noise)`
/// draw per item per repetition.
pub fn denoising_mse<D: Denoiser + ?Sized>(
    model: &D,
    data: &[(LatentGrid, ConditionEmbedding)],
    schedule: &NoiseSchedule,
    rng: &mut SeededRng,
    repetitions: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..repetitions {
        for (x0, e) in data {
            let t = 1 + rng.below(schedule.total_steps());
            let noise = gaussian_grid(rng, x0.shape());
            let a = schedule.alpha_bar(t);
            let xt = x0.scale(a.sqrt()).add_scaled(&noise, (1.0 - a).sqrt())?;
            total += model.predict(&xt, t, e)?.mse(&noise)?;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Shape;

    fn disks(n: usize, size: usize, rng: &mut SeededRng) -> Vec<(LatentGrid, ConditionEmbedding)> {
        (0..n)
            .map(|_| {
                let cy = size as f64 / 2.0 + rng.uniform_range(-1.5, 1.5);
                let cx = size as f64 / 2.0 + rng.uniform_range(-1.5, 1.5);
                let r = rng.uniform_range(2.0, 4.0);
                let img = LatentGrid::from_fn(Shape::new(size, size, 1), |y, x, _| {
                    let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
                    if d <= r {
                        0.8
                    } else {
                        -0.8
                    }
                });
                (img, ConditionEmbedding::semantic(vec![1.0, 0.0]))
            })
            .collect()
    }

    fn tiny() -> NetConfig {
        NetConfig {
            channels: 1,
            embedding_dim: 2,
            time_features: 4,
            hidden: 12,
            layers: 3,
            zero_init_condition: true,
        }
    }

    #[test]
    fn training_reduces_held_out_error() {
        let schedule = NoiseSchedule::linear(100, 1e-3, 0.2).unwrap();
        let mut rng = SeededRng::new(9, 0);
        let train = disks(120, 8, &mut rng);
        let held = disks(40, 8, &mut rng);
        let cfg = TrainConfig {
            net: tiny(),
            epochs: 12,
            batch_size: 8,
            drop_prob: 0.1,
            lr: 3e-3,
        };
        let untrained = ConvDenoiser::init(cfg.net, &mut SeededRng::new(9, 1)).unwrap();
        let before = denoising_mse(&untrained, &held, &schedule, &mut SeededRng::new(1, 1), 4).unwrap();
        let (model, report) =
            train_toy_denoiser(&train, &schedule, &mut SeededRng::new(9, 1), &cfg).unwrap();
        let after = denoising_mse(&model, &held, &schedule, &mut SeededRng::new(1, 1), 4).unwrap();
        assert!(after < 0.5 * before, "before {before} after {after}");
        assert_eq!(report.epoch_losses.len(), 12);
        assert_eq!(report.null_substitutions + report.conditional_uses, 12 * 120);
    }

    #[test]
    fn drop_prob_zero_never_uses_null() {
        let schedule = NoiseSchedule::linear(50, 1e-3, 0.2).unwrap();
        let mut rng = SeededRng::new(3, 0);
        let data = disks(10, 6, &mut rng);
        let cfg = TrainConfig {
            net: tiny(),
            epochs: 2,
            batch_size: 4,
            drop_prob: 0.0,
            lr: 1e-3,
        };
        let (_, report) = train_toy_denoiser(&data, &schedule, &mut rng, &cfg).unwrap();
        assert_eq!(report.null_substitutions, 0);
        assert_eq!(report.conditional_uses, 20);
    }

    #[test]
    fn drop_prob_one_makes_condition_irrelevant() {
        let schedule = NoiseSchedule::linear(50, 1e-3, 0.2).unwrap();
        let mut rng = SeededRng::new(4, 0);
        let data = disks(10, 6, &mut rng);
        let cfg = TrainConfig {
            net: tiny(),
            epochs: 3,
            batch_size: 4,
            drop_prob: 1.0,
            lr: 1e-2,
        };
        let (model, report) = train_toy_denoiser(&data, &schedule, &mut rng, &cfg).unwrap();
        assert_eq!(report.conditional_uses, 0);
        let cond = ConditionEmbedding::semantic(vec![1.0, 0.0]);
        for (i, (x, _)) in data.iter().enumerate() {
            let t = 1 + 5 * i;
            assert_eq!(
                model.predict(x, t, &cond).unwrap(),
                model.predict(x, t, &model.null_embedding()).unwrap()
            );
        }
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        let schedule = NoiseSchedule::linear(50, 1e-3, 0.2).unwrap();
        let err = train_toy_denoiser(&[], &schedule, &mut SeededRng::new(0, 0), &TrainConfig::default());
        assert!(matches!(err, Err(Error::Config { .. })));
    }
}
