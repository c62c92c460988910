use crate::autodiff::{Dims, Tape, Var};
use crate::error::{Error, Result, Shape};
use crate::grid::LatentGrid;
use crate::rng::SeededRng;

use super::{check_grid, ConditionEmbedding, Denoiser};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    /// Image channels.
    pub channels: usize,
    pub embedding_dim: usize,
    /// Sinusoidal timestep features (even).
    pub time_features: usize,
    pub hidden: usize,
    /// Convolution layers, including input and output layers.
    pub layers: usize,
    /// Start the weights reading the embedding channels at zero, so an
    /// embedding that is never seen during training has no effect.
    pub zero_init_condition: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            embedding_dim: 8,
            time_features: 8,
            hidden: 48,
            layers: 4,
            zero_init_condition: true,
        }
    }
}

impl NetConfig {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("embedding_dim", self.embedding_dim),
            ("hidden", self.hidden),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.time_features == 0 || self.time_features % 2 != 0 {
            return Err(Error::config("time_features", "must be a positive even number"));
        }
        if !(2..=8).contains(&self.layers) {
            return Err(Error::config("layers", "must be between 2 and 8"));
        }
        Ok(())
    }

    fn input_channels(&self) -> usize {
        self.channels + self.embedding_dim + self.time_features
    }

    /// `(in, out)` channels per convolution.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let cin = if l == 0 { self.input_channels() } else { self.hidden };
                let cout = if l + 1 == self.layers { self.channels } else { self.hidden };
                (cin, cout)
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o * 9 + o).sum()
    }
}

/// Small fully-convolutional noise predictor: `[x, broadcast(e), broadcast(time)]`
/// through 3x3 convolutions with SiLU activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvDenoiser {
    config: NetConfig,
    /// Weights then bias for each layer, flattened.
    params: Vec<f64>,
}

pub(crate) struct Forward {
    pub tape: Tape,
    pub x: Var,
    pub e: Var,
    pub params: Vec<(Var, Var)>,
    pub out: Var,
}

impl ConvDenoiser {
    pub fn init(config: NetConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::with_capacity(config.parameter_count());
        for (l, (cin, cout)) in config.layer_dims().into_iter().enumerate() {
            let fan_in = (cin * 9) as f64;
            let std = if l + 1 == config.layers {
                0.1 / fan_in.sqrt()
            } else {
                (2.0 / fan_in).sqrt()
            };
            for _o in 0..cout {
                for i in 0..cin {
                    let is_condition =
                        l == 0 && i >= config.channels && i < config.channels + config.embedding_dim;
                    for _k in 0..9 {
                        let w = std * rng.normal();
                        params.push(if is_condition && config.zero_init_condition {
                            0.0
                        } else {
                            w
                        });
                    }
                }
            }
            params.extend(std::iter::repeat(0.0).take(cout));
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if params.len() != config.parameter_count() {
            return Err(Error::Format(format!(
                "expected {} network parameters, got {}",
                config.parameter_count(),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_inputs(&self, x: &LatentGrid, e: &ConditionEmbedding) -> Result<()> {
        self.check_embedding(e)?;
        check_grid(None, x)?;
        if x.channels() != self.config.channels {
            return Err(Error::Shape {
                expected: Shape::new(x.height(), x.width(), self.config.channels),
                got: x.shape(),
            });
        }
        Ok(())
    }

    pub(crate) fn time_embedding(&self, t: usize) -> Vec<f64> {
        let half = self.config.time_features / 2;
        let mut out = Vec::with_capacity(2 * half);
        for i in 0..half {
            let freq = (-(1000f64.ln()) * i as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            out.push(arg.sin());
            out.push(arg.cos());
        }
        out
    }

    pub(crate) fn forward(&self, x: &LatentGrid, t: usize, e: &[f64]) -> Forward {
        let (h, w, c) = (x.height(), x.width(), x.channels());
        let mut tape = Tape::new();
        let xv = tape.leaf(Dims::new(c, h, w), hwc_to_chw(x));
        let ev = tape.leaf(Dims::vector(e.len()), e.to_vec());
        let tv = tape.leaf(
            Dims::vector(self.config.time_features),
            self.time_embedding(t),
        );
        let eb = tape.broadcast(ev, h, w);
        let tb = tape.broadcast(tv, h, w);
        let cond = tape.concat(eb, tb);
        let mut act = tape.concat(xv, cond);

        let mut params = Vec::with_capacity(self.config.layers);
        let mut offset = 0;
        let dims = self.config.layer_dims();
        for (l, &(cin, cout)) in dims.iter().enumerate() {
            let nw = cin * cout * 9;
            let wv = tape.leaf(Dims::vector(nw), self.params[offset..offset + nw].to_vec());
            offset += nw;
            let bv = tape.leaf(Dims::vector(cout), self.params[offset..offset + cout].to_vec());
            offset += cout;
            params.push((wv, bv));
            act = tape.conv3x3(act, wv, bv);
            if l + 1 < dims.len() {
                act = tape.silu(act);
            }
        }
        Forward {
            tape,
            x: xv,
            e: ev,
            params,
            out: act,
        }
    }

    /// Flattened parameter gradient in `params` order.
    pub(crate) fn param_grads(&self, fwd: &Forward, seed: Vec<f64>) -> Vec<f64> {
        let mut grads = fwd.tape.backward_with(fwd.out, seed);
        let mut out = Vec::with_capacity(self.params.len());
        for &(wv, bv) in &fwd.params {
            for v in [wv, bv] {
                match grads.take(v) {
                    Some(g) => out.extend(g),
                    None => out.extend(std::iter::repeat(0.0).take(fwd.tape.dims(v).len())),
                }
            }
        }
        out
    }
}

impl Denoiser for ConvDenoiser {
    fn embedding_dim(&self) -> usize {
        self.config.embedding_dim
    }

    fn predict(&self, x: &LatentGrid, t: usize, e: &ConditionEmbedding) -> Result<LatentGrid> {
        self.check_inputs(x, e)?;
        let fwd = self.forward(x, t, e.values());
        Ok(chw_to_hwc(fwd.tape.value(fwd.out), x.shape()))
    }

    fn grad_wrt_embedding(
        &self,
        loss_grad: &LatentGrid,
        x: &LatentGrid,
        t: usize,
        e: &ConditionEmbedding,
    ) -> Result<Vec<f64>> {
        self.check_inputs(x, e)?;
        check_grid(Some(x.shape()), loss_grad)?;
        let fwd = self.forward(x, t, e.values());
        let grads = fwd.tape.backward_with(fwd.out, hwc_to_chw(loss_grad));
        Ok(grads
            .get(fwd.e)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; e.dim()]))
    }

    fn grad_wrt_input(
        &self,
        loss_grad: &LatentGrid,
        x: &LatentGrid,
        t: usize,
        e: &ConditionEmbedding,
    ) -> Result<LatentGrid> {
        self.check_inputs(x, e)?;
        check_grid(Some(x.shape()), loss_grad)?;
        let fwd = self.forward(x, t, e.values());
        let grads = fwd.tape.backward_with(fwd.out, hwc_to_chw(loss_grad));
        let g = grads.get(fwd.x).expect("input always reaches the output");
        Ok(chw_to_hwc(g, x.shape()))
    }
}

pub(crate) fn hwc_to_chw(x: &LatentGrid) -> Vec<f64> {
    let (h, w, c) = (x.height(), x.width(), x.channels());
    let mut out = vec![0.0; h * w * c];
    for (p, px) in x.values().chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[ch * h * w + p] = v;
        }
    }
    out
}

pub(crate) fn chw_to_hwc(v: &[f64], shape: Shape) -> LatentGrid {
    let (hw, c) = (shape.pixels(), shape.channels);
    let mut out = vec![0.0; hw * c];
    for ch in 0..c {
        for p in 0..hw {
            out[p * c + ch] = v[ch * hw + p];
        }
    }
    LatentGrid::from_parts(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_grid;

    fn small() -> NetConfig {
        NetConfig {
            channels: 2,
            embedding_dim: 3,
            time_features: 4,
            hidden: 6,
            layers: 3,
            zero_init_condition: false,
        }
    }

    #[test]
    fn default_has_about_50k_parameters() {
        let n = NetConfig::default().parameter_count();
        assert!((40_000..60_000).contains(&n), "{n}");
    }

    #[test]
    fn predict_is_pure_and_shape_preserving() {
        let net = ConvDenoiser::init(small(), &mut SeededRng::new(1, 0)).unwrap();
        let x = gaussian_grid(&mut SeededRng::new(2, 0), Shape::new(5, 7, 2));
        let e = ConditionEmbedding::semantic(vec![0.5, -1.0, 0.25]);
        let a = net.predict(&x, 17, &e).unwrap();
        let b = net.predict(&x, 17, &e).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), x.shape());
        assert!(a.is_finite());
    }

    #[test]
    fn layout_round_trip() {
        let x = gaussian_grid(&mut SeededRng::new(3, 0), Shape::new(3, 4, 2));
        assert_eq!(chw_to_hwc(&hwc_to_chw(&x), x.shape()), x);
    }

    #[test]
    fn zero_init_ignores_embedding() {
        let cfg = NetConfig {
            zero_init_condition: true,
            ..small()
        };
        let net = ConvDenoiser::init(cfg, &mut SeededRng::new(1, 0)).unwrap();
        let x = gaussian_grid(&mut SeededRng::new(2, 0), Shape::new(4, 4, 2));
        let a = net.predict(&x, 5, &net.null_embedding()).unwrap();
        let b = net
            .predict(&x, 5, &ConditionEmbedding::semantic(vec![1.0, 2.0, 3.0]))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = ConvDenoiser::init(small(), &mut SeededRng::new(4, 0)).unwrap();
        let shape = Shape::new(4, 3, 2);
        let x = gaussian_grid(&mut SeededRng::new(5, 0), shape);
        let u = gaussian_grid(&mut SeededRng::new(6, 0), shape);
        let e = ConditionEmbedding::semantic(vec![0.3, 0.1, -0.2]);
        let g = net.grad_wrt_input(&u, &x, 40, &e).unwrap();
        let f = |x: &LatentGrid| -> f64 {
            let p = net.predict(x, 40, &e).unwrap();
            p.values().iter().zip(u.values()).map(|(a, b)| a * b).sum()
        };
        for i in 0..shape.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.values_mut()[i] += 1e-5;
            xm.values_mut()[i] -= 1e-5;
            let fd = (f(&xp) - f(&xm)) / 2e-5;
            assert!((g.values()[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn rejects_wrong_channels_and_dim() {
        let net = ConvDenoiser::init(small(), &mut SeededRng::new(1, 0)).unwrap();
        let x = LatentGrid::zeros(Shape::new(3, 3, 1));
        assert!(matches!(
            net.predict(&x, 1, &net.null_embedding()),
            Err(Error::Shape { .. })
        ));
        let x = LatentGrid::zeros(Shape::new(3, 3, 2));
        assert!(matches!(
            net.predict(&x, 1, &ConditionEmbedding::null(2)),
            Err(Error::Contract(_))
        ));
    }
}
