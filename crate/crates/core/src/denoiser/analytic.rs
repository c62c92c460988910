use crate::error::{check_shape, Error, Result, Shape};
use crate::grid::LatentGrid;
use crate::rng::SeededRng;
use crate::schedule::NoiseSchedule;

use super::{ConditionEmbedding, Denoiser};

/// Fixed linear map from embedding space to grid space.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    /// Row-major `rows x cols` matrix.
    Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    },
    /// Column `j` is `scale * signs[j]` at row `targets[j]` and zero elsewhere.
    /// Columns are orthogonal; with `cols == rows` this is a scaled signed
    /// permutation.
    Sparse {
        rows: usize,
        scale: f64,
        targets: Vec<usize>,
        signs: Vec<f64>,
    },
}

impl Projection {
    /// Dense matrix with i.i.d. `N(0, scale^2 / cols)` entries.
    pub fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Self {
        let k = scale / (cols as f64).sqrt();
        let data = (0..rows * cols).map(|_| k * rng.normal()).collect();
        Self::Dense { rows, cols, data }
    }

    /// Random orthogonal pixel code: `cols <= rows` distinct target rows with
    /// random signs.
    pub fn signed_permutation(
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if cols > rows {
            return Err(Error::config(
                "embedding_dim",
                format!("sparse projection needs cols <= rows ({cols} > {rows})"),
            ));
        }
        let mut order: Vec<usize> = (0..rows).collect();
        rng.shuffle(&mut order);
        order.truncate(cols);
        let signs = (0..cols)
            .map(|_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 })
            .collect();
        Ok(Self::Sparse {
            rows,
            scale,
            targets: order,
            signs,
        })
    }

    pub fn rows(&self) -> usize {
        match self {
            Self::Dense { rows, .. } | Self::Sparse { rows, .. } => *rows,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Self::Dense { cols, .. } => *cols,
            Self::Sparse { targets, .. } => targets.len(),
        }
    }

    /// `P e`
    pub fn apply(&self, e: &[f64]) -> Vec<f64> {
        debug_assert_eq!(e.len(), self.cols());
        match self {
            Self::Dense { rows, cols, data } => (0..*rows)
                .map(|r| {
                    data[r * cols..(r + 1) * cols]
                        .iter()
                        .zip(e)
                        .map(|(a, b)| a * b)
                        .sum()
                })
                .collect(),
            Self::Sparse {
                rows,
                scale,
                targets,
                signs,
            } => {
                let mut out = vec![0.0; *rows];
                for ((&t, &s), &v) in targets.iter().zip(signs).zip(e) {
                    out[t] += scale * s * v;
                }
                out
            }
        }
    }

    /// `P^T g`
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.rows());
        match self {
            Self::Dense { rows, cols, data } => {
                let mut out = vec![0.0; *cols];
                for r in 0..*rows {
                    let gr = g[r];
                    if gr == 0.0 {
                        continue;
                    }
                    for (o, a) in out.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
                        *o += a * gr;
                    }
                }
                out
            }
            Self::Sparse {
                scale,
                targets,
                signs,
                ..
            } => targets
                .iter()
                .zip(signs)
                .map(|(&t, &s)| scale * s * g[t])
                .collect(),
        }
    }

    /// Materialized row-major matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let (rows, cols) = (self.rows(), self.cols());
        let mut out = vec![0.0; rows * cols];
        for c in 0..cols {
            let mut unit = vec![0.0; cols];
            unit[c] = 1.0;
            for (r, v) in self.apply(&unit).into_iter().enumerate() {
                out[r * cols + c] = v;
            }
        }
        out
    }
}

/// Exact noise predictor for data drawn from an equal-weight mixture of
/// isotropic Gaussians `N(mu_k, data_std^2 I)`, plus a linear conditioning
/// offset `P e`.
///
/// With marginal variance `v_t = alpha_bar_t * data_std^2 + 1 - alpha_bar_t`
/// and responsibilities `r_k(x)`,
/// `eps(x, t, e) = sqrt(1 - alpha_bar_t) / v_t * (x - sqrt(alpha_bar_t) * sum_k r_k mu_k) + P e`.
/// A single component makes the predictor affine in `x`.
#[derive(Debug, Clone)]
pub struct GaussianMixtureDenoiser {
    schedule: NoiseSchedule,
    shape: Shape,
    means: Vec<Vec<f64>>,
    data_std: f64,
    projection: Projection,
}

impl GaussianMixtureDenoiser {
    pub fn new(
        schedule: NoiseSchedule,
        means: Vec<LatentGrid>,
        data_std: f64,
        projection: Projection,
    ) -> Result<Self> {
        let first = means
            .first()
            .ok_or_else(|| Error::config("means", "at least one mixture component"))?;
        let shape = first.shape();
        for m in &means {
            check_shape(shape, m.shape())?;
        }
        if !(data_std.is_finite() && data_std > 0.0) {
            return Err(Error::config("data_std", "must be positive"));
        }
        if projection.rows() != shape.len() {
            return Err(Error::config(
                "projection",
                format!("{} rows for a grid of {} values", projection.rows(), shape.len()),
            ));
        }
        Ok(Self {
            schedule,
            shape,
            means: means.into_iter().map(LatentGrid::into_values).collect(),
            data_std,
            projection,
        })
    }

    /// Single Gaussian `N(mean, data_std^2 I)`.
    pub fn single(
        schedule: NoiseSchedule,
        mean: LatentGrid,
        data_std: f64,
        projection: Projection,
    ) -> Result<Self> {
        Self::new(schedule, vec![mean], data_std, projection)
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data_std(&self) -> f64 {
        self.data_std
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn components(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, k: usize) -> LatentGrid {
        LatentGrid::from_parts(self.shape, self.means[k].clone())
    }

    fn marginal_variance(&self, t: usize) -> f64 {
        let a = self.schedule.alpha_bar(t);
        a * self.data_std * self.data_std + 1.0 - a
    }

    fn responsibilities(&self, x: &[f64], t: usize) -> Vec<f64> {
        if self.means.len() == 1 {
            return vec![1.0];
        }
        let sa = self.schedule.alpha_bar(t).sqrt();
        let v = self.marginal_variance(t);
        let logits: Vec<f64> = self
            .means
            .iter()
            .map(|mu| {
                let d: f64 = x
                    .iter()
                    .zip(mu)
                    .map(|(xi, mi)| {
                        let r = xi - sa * mi;
                        r * r
                    })
                    .sum();
                -d / (2.0 * v)
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|wi| wi / z).collect()
    }

    fn posterior_component_mean(&self, r: &[f64]) -> Vec<f64> {
        if self.means.len() == 1 {
            return self.means[0].clone();
        }
        let mut m = vec![0.0; self.shape.len()];
        for (mu, &rk) in self.means.iter().zip(r) {
            if rk == 0.0 {
                continue;
            }
            m.iter_mut().zip(mu).for_each(|(a, b)| *a += rk * b);
        }
        m
    }

    fn check_inputs(&self, x: &LatentGrid, t: usize, e: &ConditionEmbedding) -> Result<()> {
        self.check_embedding(e)?;
        check_shape(self.shape, x.shape())?;
        self.schedule.check_step(t, 1)
    }

    /// The unconditioned part `eps*(x, t)`.
    pub fn unconditional_part(&self, x: &LatentGrid, t: usize) -> Result<LatentGrid> {
        check_shape(self.shape, x.shape())?;
        self.schedule.check_step(t, 1)?;
        Ok(self.eps_star(x, t))
    }

    fn eps_star(&self, x: &LatentGrid, t: usize) -> LatentGrid {
        let a = self.schedule.alpha_bar(t);
        let sa = a.sqrt();
        let k = (1.0 - a).sqrt() / self.marginal_variance(t);
        let r = self.responsibilities(x.values(), t);
        let m = self.posterior_component_mean(&r);
        let values = x
            .values()
            .iter()
            .zip(&m)
            .map(|(xi, mi)| k * (xi - sa * mi))
            .collect();
        LatentGrid::from_parts(self.shape, values)
    }
}

impl Denoiser for GaussianMixtureDenoiser {
    fn embedding_dim(&self) -> usize {
        self.projection.cols()
    }

    fn predict(&self, x: &LatentGrid, t: usize, e: &ConditionEmbedding) -> Result<LatentGrid> {
        self.check_inputs(x, t, e)?;
        let mut eps = self.eps_star(x, t);
        let offset = self.projection.apply(e.values());
        eps.values_mut()
            .iter_mut()
            .zip(offset)
            .for_each(|(a, b)| *a += b);
        Ok(eps)
    }

    fn grad_wrt_embedding(
        &self,
        loss_grad: &LatentGrid,
        x: &LatentGrid,
        t: usize,
        e: &ConditionEmbedding,
    ) -> Result<Vec<f64>> {
        self.check_inputs(x, t, e)?;
        check_shape(self.shape, loss_grad.shape())?;
        Ok(self.projection.apply_transpose(loss_grad.values()))
    }

    fn grad_wrt_input(
        &self,
        loss_grad: &LatentGrid,
        x: &LatentGrid,
        t: usize,
        e: &ConditionEmbedding,
    ) -> Result<LatentGrid> {
        self.check_inputs(x, t, e)?;
        check_shape(self.shape, loss_grad.shape())?;
        // J = k (I - a / v * Cov_r(mu)), symmetric
        let a = self.schedule.alpha_bar(t);
        let v = self.marginal_variance(t);
        let k = (1.0 - a).sqrt() / v;
        let u = loss_grad.values();
        let mut out: Vec<f64> = u.iter().map(|ui| k * ui).collect();
        if self.means.len() > 1 {
            let r = self.responsibilities(x.values(), t);
            let m = self.posterior_component_mean(&r);
            for (mu, &rk) in self.means.iter().zip(&r) {
                if rk < 1e-300 {
                    continue;
                }
                let proj: f64 = mu.iter().zip(&m).zip(u).map(|((a, b), c)| (a - b) * c).sum();
                let coef = k * a / v * rk * proj;
                out.iter_mut()
                    .zip(mu.iter().zip(&m))
                    .for_each(|(o, (a, b))| *o -= coef * (a - b));
            }
        }
        Ok(LatentGrid::from_parts(self.shape, out))
    }
}
