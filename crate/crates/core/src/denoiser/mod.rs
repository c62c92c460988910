//! Noise predictors `eps(x_t, t, e)`.
//!
//! Two implementations share the [`Denoiser`] trait: a closed-form Gaussian
//! mixture oracle with linear conditioning ([`GaussianMixtureDenoiser`]) and a
//! small trainable convolutional network ([`ConvDenoiser`]).

mod analytic;
mod checkpoint;
mod net;
mod train;

pub use analytic::{GaussianMixtureDenoiser, Projection};
pub use net::{ConvDenoiser, NetConfig};
pub use train::{denoising_mse, train_toy_denoiser, TrainConfig, TrainReport};

use crate::error::{Error, Result, Shape};
use crate::grid::LatentGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingRole {
    Semantic,
    Null,
    OptimizedNull,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    values: Vec<f64>,
    role: EmbeddingRole,
}

impl ConditionEmbedding {
    pub fn new(values: Vec<f64>, role: EmbeddingRole) -> Self {
        Self { values, role }
    }

    /// Canonical unconditional embedding: the zero vector.
    pub fn null(dim: usize) -> Self {
        Self::new(vec![0.0; dim], EmbeddingRole::Null)
    }

    pub fn semantic(values: Vec<f64>) -> Self {
        Self::new(values, EmbeddingRole::Semantic)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn role(&self) -> EmbeddingRole {
        self.role
    }

    pub fn with_role(mut self, role: EmbeddingRole) -> Self {
        self.role = role;
        self
    }
}

pub trait Denoiser: Send + Sync {
    fn embedding_dim(&self) -> usize;

    /// Predicted noise for `x` at step `t` (`1 <= t <= T`).
    fn predict(&self, x: &LatentGrid, t: usize, e: &ConditionEmbedding) -> Result<LatentGrid>;

    /// Vector-Jacobian product `(d predict / d e)^T loss_grad`.
    fn grad_wrt_embedding(
        &self,
        _loss_grad: &LatentGrid,
        _x: &LatentGrid,
        _t: usize,
        _e: &ConditionEmbedding,
    ) -> Result<Vec<f64>> {
        Err(Error::Capability(
            "this denoiser does not expose embedding gradients".into(),
        ))
    }

    /// Vector-Jacobian product `(d predict / d x)^T loss_grad`.
    fn grad_wrt_input(
        &self,
        _loss_grad: &LatentGrid,
        _x: &LatentGrid,
        _t: usize,
        _e: &ConditionEmbedding,
    ) -> Result<LatentGrid> {
        Err(Error::Capability(
            "this denoiser does not expose input gradients".into(),
        ))
    }

    fn null_embedding(&self) -> ConditionEmbedding {
        ConditionEmbedding::null(self.embedding_dim())
    }

    fn check_embedding(&self, e: &ConditionEmbedding) -> Result<()> {
        if e.dim() == self.embedding_dim() {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "embedding has dim {}, denoiser expects {}",
                e.dim(),
                self.embedding_dim()
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserKind {
    AnalyticGaussian,
    TrainableNet,
}

/// Serializable choice of denoiser.
#[derive(Debug, Clone)]
pub enum DenoiserModel {
    Analytic(GaussianMixtureDenoiser),
    Net(ConvDenoiser),
}

impl DenoiserModel {
    pub fn kind(&self) -> DenoiserKind {
        match self {
            Self::Analytic(_) => DenoiserKind::AnalyticGaussian,
            Self::Net(_) => DenoiserKind::TrainableNet,
        }
    }

    fn inner(&self) -> &dyn Denoiser {
        match self {
            Self::Analytic(m) => m,
            Self::Net(m) => m,
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        checkpoint::write(self, std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        checkpoint::read(std::io::BufReader::new(f))
    }

    pub fn write_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        checkpoint::write(self, w)
    }

    pub fn read_from<R: std::io::Read>(r: R) -> Result<Self> {
        checkpoint::read(r)
    }
}

impl Denoiser for DenoiserModel {
    fn embedding_dim(&self) -> usize {
        self.inner().embedding_dim()
    }

    fn predict(&self, x: &LatentGrid, t: usize, e: &ConditionEmbedding) -> Result<LatentGrid> {
        self.inner().predict(x, t, e)
    }

    fn grad_wrt_embedding(
        &self,
        loss_grad: &LatentGrid,
        x: &LatentGrid,
        t: usize,
        e: &ConditionEmbedding,
    ) -> Result<Vec<f64>> {
        self.inner().grad_wrt_embedding(loss_grad, x, t, e)
    }

    fn grad_wrt_input(
        &self,
        loss_grad: &LatentGrid,
        x: &LatentGrid,
        t: usize,
        e: &ConditionEmbedding,
    ) -> Result<LatentGrid> {
        self.inner().grad_wrt_input(loss_grad, x, t, e)
    }
}

impl From<GaussianMixtureDenoiser> for DenoiserModel {
    fn from(m: GaussianMixtureDenoiser) -> Self {
        Self::Analytic(m)
    }
}

impl From<ConvDenoiser> for DenoiserModel {
    fn from(m: ConvDenoiser) -> Self {
        Self::Net(m)
    }
}

pub(crate) fn check_grid(expected: Option<Shape>, x: &LatentGrid) -> Result<()> {
    match expected {
        Some(s) if s != x.shape() => Err(Error::Shape {
            expected: s,
            got: x.shape(),
        }),
        _ => Ok(()),
    }
}
