//! Model checkpoints.
//!
//! Layout (little-endian): magic `TTGAMODL`, `u32` kind (0 analytic, 1 net),
//! `u32` embedding dim, `u64` parameter count, then that many `f64`.
//!
//! The parameter vector starts with the hyperparameters needed to rebuild the
//! model:
//! - analytic: `T, beta_start, beta_end, H, W, C, K, data_std, proj_kind`,
//!   the projection (dense: `rows, cols, data`; sparse: `rows, cols, scale,
//!   targets, signs`), then the `K` component means.
//! - net: `channels, embedding_dim, time_features, hidden, layers,
//!   zero_init_condition`, then the network weights.

use std::io::{Read, Write};

use crate::error::{Error, Result, Shape};
use crate::grid::LatentGrid;
use crate::schedule::NoiseSchedule;

use super::{ConvDenoiser, Denoiser, DenoiserModel, GaussianMixtureDenoiser, NetConfig, Projection};

const MAGIC: &[u8; 8] = b"TTGAMODL";

pub(super) fn write<W: Write>(model: &DenoiserModel, mut w: W) -> Result<()> {
    let (kind, params) = match model {
        DenoiserModel::Analytic(m) => (0u32, analytic_params(m)),
        DenoiserModel::Net(m) => (1u32, net_params(m)),
    };
    w.write_all(MAGIC)?;
    w.write_all(&kind.to_le_bytes())?;
    w.write_all(&(model.embedding_dim() as u32).to_le_bytes())?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        w.write_all(&p.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub(super) fn read<R: Read>(mut r: R) -> Result<DenoiserModel> {
    let mut header = [0u8; 24];
    r.read_exact(&mut header)?;
    if &header[..8] != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let kind = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let mut cursor = Cursor { data: &params, pos: 0 };
    let model = match kind {
        0 => DenoiserModel::Analytic(read_analytic(&mut cursor)?),
        1 => DenoiserModel::Net(read_net(&mut cursor)?),
        k => return Err(Error::Format(format!("unknown model kind {k}"))),
    };
    if model.embedding_dim() != dim {
        return Err(Error::Format("embedding dim disagrees with header".into()));
    }
    Ok(model)
}

fn analytic_params(m: &GaussianMixtureDenoiser) -> Vec<f64> {
    let s = m.schedule();
    let (b0, b1) = s.beta_range();
    let shape = m.shape();
    let mut p = vec![
        s.total_steps() as f64,
        b0,
        b1,
        shape.height as f64,
        shape.width as f64,
        shape.channels as f64,
        m.components() as f64,
        m.data_std(),
    ];
    match m.projection() {
        Projection::Dense { rows, cols, data } => {
            p.extend([0.0, *rows as f64, *cols as f64]);
            p.extend(data);
        }
        Projection::Sparse {
            rows,
            scale,
            targets,
            signs,
        } => {
            p.extend([1.0, *rows as f64, targets.len() as f64, *scale]);
            p.extend(targets.iter().map(|&t| t as f64));
            p.extend(signs);
        }
    }
    for k in 0..m.components() {
        p.extend(m.mean(k).values());
    }
    p
}

fn net_params(m: &ConvDenoiser) -> Vec<f64> {
    let c = m.config();
    let mut p = vec![
        c.channels as f64,
        c.embedding_dim as f64,
        c.time_features as f64,
        c.hidden as f64,
        c.layers as f64,
        if c.zero_init_condition { 1.0 } else { 0.0 },
    ];
    p.extend(m.params());
    p
}

struct Cursor<'a> {
    data: &'a [f64],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[f64]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn scalar(&mut self) -> Result<f64> {
        Ok(self.take(1)?[0])
    }

    fn count(&mut self) -> Result<usize> {
        let v = self.scalar()?;
        if v < 0.0 || v.fract() != 0.0 || v > 1e12 {
            return Err(Error::Format(format!("bad count {v}")));
        }
        Ok(v as usize)
    }
}

fn read_analytic(c: &mut Cursor) -> Result<GaussianMixtureDenoiser> {
    let steps = c.count()?;
    let (b0, b1) = (c.scalar()?, c.scalar()?);
    let schedule = NoiseSchedule::linear(steps, b0, b1)?;
    let shape = Shape::new(c.count()?, c.count()?, c.count()?);
    let k = c.count()?;
    let std = c.scalar()?;
    let projection = match c.count()? {
        0 => {
            let (rows, cols) = (c.count()?, c.count()?);
            Projection::Dense {
                rows,
                cols,
                data: c.take(rows * cols)?.to_vec(),
            }
        }
        1 => {
            let (rows, cols, scale) = (c.count()?, c.count()?, c.scalar()?);
            let targets = c.take(cols)?.iter().map(|&t| t as usize).collect();
            let signs = c.take(cols)?.to_vec();
            Projection::Sparse {
                rows,
                scale,
                targets,
                signs,
            }
        }
        other => return Err(Error::Format(format!("unknown projection kind {other}"))),
    };
    let means = (0..k)
        .map(|_| LatentGrid::from_vec(shape, c.take(shape.len())?.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    GaussianMixtureDenoiser::new(schedule, means, std, projection)
}

fn read_net(c: &mut Cursor) -> Result<ConvDenoiser> {
    let config = NetConfig {
        channels: c.count()?,
        embedding_dim: c.count()?,
        time_features: c.count()?,
        hidden: c.count()?,
        layers: c.count()?,
        zero_init_condition: c.scalar()? != 0.0,
    };
    let rest = c.take(config.parameter_count())?.to_vec();
    ConvDenoiser::from_params(config, rest)
}
