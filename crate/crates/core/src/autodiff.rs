//! Minimal tape-based reverse-mode differentiation over small image tensors.
//!
//! Every value on the tape is a `[channels, height, width]` array (vectors are
//! `[n, 1, 1]`). Operations are appended in evaluation order, so walking the
//! tape backwards visits each node after all of its consumers.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn vector(n: usize) -> Self {
        Self::new(n, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    const fn plane(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// 3x3 convolution, zero padding, stride 1.
    Conv3x3 {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Silu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Concat(Var, Var),
    /// `[n, 1, 1]` vector repeated over an `h x w` plane.
    Broadcast(Var),
    MeanSquare(Var),
}

#[derive(Debug, Clone)]
struct Node {
    dims: Dims,
    value: Vec<f64>,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, dims: Dims, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(dims.len(), value.len());
        self.nodes.push(Node { dims, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, dims: Dims, value: Vec<f64>) -> Var {
        assert_eq!(dims.len(), value.len(), "leaf size does not match dims");
        self.push(dims, value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> Dims {
        self.nodes[v.0].dims
    }

    pub fn conv3x3(&mut self, input: Var, weight: Var, bias: Var) -> Var {
        let d = self.dims(input);
        let cout = self.dims(bias).len();
        assert_eq!(self.dims(weight).len(), cout * d.channels * 9, "conv weight size");
        let out_dims = Dims::new(cout, d.height, d.width);
        let mut out = vec![0.0; out_dims.len()];
        {
            let x = self.value(input);
            let w = self.value(weight);
            let b = self.value(bias);
            for o in 0..cout {
                let plane = &mut out[o * d.plane()..(o + 1) * d.plane()];
                plane.iter_mut().for_each(|v| *v = b[o]);
                for i in 0..d.channels {
                    let src = &x[i * d.plane()..(i + 1) * d.plane()];
                    let wk = &w[(o * d.channels + i) * 9..(o * d.channels + i + 1) * 9];
                    conv_accumulate(plane, src, wk, d.height, d.width);
                }
            }
        }
        self.push(
            out_dims,
            out,
            Op::Conv3x3 {
                input,
                weight,
                bias,
            },
        )
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&v| v * sigmoid(v)).collect();
        self.push(self.dims(a), value, Op::Silu(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b));
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        self.push(self.dims(a), value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b));
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        self.push(self.dims(a), value, Op::Sub(a, b))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (da, db) = (self.dims(a), self.dims(b));
        assert_eq!((da.height, da.width), (db.height, db.width));
        let mut value = self.value(a).to_vec();
        value.extend_from_slice(self.value(b));
        let dims = Dims::new(da.channels + db.channels, da.height, da.width);
        self.push(dims, value, Op::Concat(a, b))
    }

    pub fn broadcast(&mut self, v: Var, height: usize, width: usize) -> Var {
        let dv = self.dims(v);
        assert_eq!((dv.height, dv.width), (1, 1), "broadcast expects a vector");
        let plane = height * width;
        let mut value = Vec::with_capacity(dv.channels * plane);
        for &x in self.value(v) {
            value.extend(std::iter::repeat(x).take(plane));
        }
        self.push(Dims::new(dv.channels, height, width), value, Op::Broadcast(v))
    }

    pub fn mean_square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        self.push(Dims::vector(1), vec![m], Op::MeanSquare(a))
    }

    /// Gradient of `output` with respect to every node, seeded with `seed`
    /// (which must have `output`'s size).
    pub fn backward_with(&self, output: Var, seed: Vec<f64>) -> Gradients {
        assert_eq!(seed.len(), self.dims(output).len(), "seed size");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {}
                Op::Conv3x3 {
                    input,
                    weight,
                    bias,
                } => {
                    let d = self.dims(input);
                    let cout = node.dims.channels;
                    let x = self.value(input);
                    let w = self.value(weight);
                    let mut gx = vec![0.0; d.len()];
                    let mut gw = vec![0.0; w.len()];
                    let mut gb = vec![0.0; cout];
                    for o in 0..cout {
                        let go = &g[o * d.plane()..(o + 1) * d.plane()];
                        gb[o] = go.iter().sum();
                        for i in 0..d.channels {
                            let k = (o * d.channels + i) * 9;
                            let src = &x[i * d.plane()..(i + 1) * d.plane()];
                            conv_weight_grad(&mut gw[k..k + 9], go, src, d.height, d.width);
                            let dst = &mut gx[i * d.plane()..(i + 1) * d.plane()];
                            conv_input_grad(dst, go, &w[k..k + 9], d.height, d.width);
                        }
                    }
                    accumulate(&mut grads, input, gx);
                    accumulate(&mut grads, weight, gw);
                    accumulate(&mut grads, bias, gb);
                }
                Op::Silu(a) => {
                    let ga = self
                        .value(a)
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| {
                            let s = sigmoid(v);
                            gv * s * (1.0 + v * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut grads, a, ga);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, b, g.clone());
                    accumulate(&mut grads, a, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, b, g.iter().map(|v| -v).collect());
                    accumulate(&mut grads, a, g.clone());
                }
                Op::Concat(a, b) => {
                    let split = self.dims(a).len();
                    accumulate(&mut grads, b, g[split..].to_vec());
                    accumulate(&mut grads, a, g[..split].to_vec());
                }
                Op::Broadcast(v) => {
                    let plane = node.dims.plane();
                    let gv = g.chunks_exact(plane).map(|c| c.iter().sum()).collect();
                    accumulate(&mut grads, v, gv);
                }
                Op::MeanSquare(a) => {
                    let x = self.value(a);
                    let k = 2.0 * g[0] / x.len() as f64;
                    accumulate(&mut grads, a, x.iter().map(|v| k * v).collect());
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Gradient of a scalar output.
    pub fn backward(&self, output: Var) -> Gradients {
        self.backward_with(output, vec![1.0])
    }
}

pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Valid `(dst_start, src_start, len)` ranges for an offset of `d` in `-1..=1`.
#[inline]
fn span(d: isize, n: usize) -> (usize, usize, usize) {
    match d {
        -1 => (1, 0, n - 1),
        0 => (0, 0, n),
        _ => (0, 1, n - 1),
    }
}

fn conv_accumulate(out: &mut [f64], src: &[f64], w: &[f64], h: usize, wd: usize) {
    for ky in 0..3 {
        let (oy, sy, ny) = span(ky as isize - 1, h);
        for kx in 0..3 {
            let k = w[ky * 3 + kx];
            if k == 0.0 {
                continue;
            }
            let (ox, sx, nx) = span(kx as isize - 1, wd);
            for r in 0..ny {
                let o = &mut out[(oy + r) * wd + ox..(oy + r) * wd + ox + nx];
                let s = &src[(sy + r) * wd + sx..(sy + r) * wd + sx + nx];
                o.iter_mut().zip(s).for_each(|(a, b)| *a += k * b);
            }
        }
    }
}

fn conv_weight_grad(gw: &mut [f64], go: &[f64], src: &[f64], h: usize, wd: usize) {
    for ky in 0..3 {
        let (oy, sy, ny) = span(ky as isize - 1, h);
        for kx in 0..3 {
            let (ox, sx, nx) = span(kx as isize - 1, wd);
            let mut acc = 0.0;
            for r in 0..ny {
                let o = &go[(oy + r) * wd + ox..(oy + r) * wd + ox + nx];
                let s = &src[(sy + r) * wd + sx..(sy + r) * wd + sx + nx];
                acc += o.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
            }
            gw[ky * 3 + kx] += acc;
        }
    }
}

fn conv_input_grad(gx: &mut [f64], go: &[f64], w: &[f64], h: usize, wd: usize) {
    for ky in 0..3 {
        let (oy, sy, ny) = span(ky as isize - 1, h);
        for kx in 0..3 {
            let k = w[ky * 3 + kx];
            if k == 0.0 {
                continue;
            }
            let (ox, sx, nx) = span(kx as isize - 1, wd);
            for r in 0..ny {
                let o = &go[(oy + r) * wd + ox..(oy + r) * wd + ox + nx];
                let s = &mut gx[(sy + r) * wd + sx..(sy + r) * wd + sx + nx];
                s.iter_mut().zip(o).for_each(|(a, b)| *a += k * b);
            }
        }
    }
}
