//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] is recorded fresh for every forward pass. Leaves are either
//! constants, free variables, or copies of entries in a [`ParamSet`];
//! [`Tape::backward`] consumes the tape and returns the gradient of a scalar
//! node with respect to every leaf that requires one.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Variance epsilon of [`Tape::batch_norm`].
pub const BN_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Index of a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            grad: None,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Stores the gradients from a backward pass. Parameters that did not take
    /// part in the graph receive a zero gradient of their own shape.
    pub fn absorb(&mut self, grads: &Gradients<T>) {
        for (i, p) in self.params.iter_mut().enumerate() {
            p.grad = Some(match grads.param(ParamId(i)) {
                Some(g) => g.clone(),
                None => Tensor::zeros(p.value.shape()),
            });
        }
    }

    pub fn clear_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        /// im2col buffers, one `[K, P]` block per batch item.
        cols: Vec<T>,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Sigmoid {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Scale {
        input: Var,
        alpha: T,
    },
    Mse {
        a: Var,
        b: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    leaves: Vec<Option<Tensor<T>>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf recorded with `requires_grad`.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.get(var.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    /// True when no leaf received a gradient.
    pub fn is_empty(&self) -> bool {
        self.leaves.iter().all(Option::is_none)
    }

    pub fn len(&self) -> usize {
        self.leaves.iter().filter(|g| g.is_some()).count()
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(msg: String) -> Error {
    Error::Config(msg)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a copy of a parameter as a differentiable leaf.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        let v = self.push(params.get(id).value.clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// 2-D cross-correlation. `kernel` is `[out, in, kh, kw]`, `bias` is
    /// `[1, out, 1, 1]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).shape();
        let [cout, kcin, kh, kw] = self.value(kernel).shape();
        if kcin != cin {
            return Err(shape_err(format!(
                "conv2d: kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        if self.value(bias).shape() != [1, cout, 1, 1] {
            return Err(shape_err(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                self.value(bias).shape()
            )));
        }
        if stride == 0 {
            return Err(shape_err("conv2d: stride must be >= 1".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(shape_err(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let geo = ConvGeometry {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        };
        let kdim = geo.kdim();
        let p = geo.ho * geo.wo;
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut cols = Vec::with_capacity(n * kdim * p);
        let mut out = Vec::with_capacity(n * cout * p);
        let in_stride = cin * h * w;
        for bi in 0..n {
            geo.im2col(&x[bi * in_stride..(bi + 1) * in_stride], &mut cols);
            for &bv in b {
                out.extend(core::iter::repeat_n(bv, p));
            }
            T::gemm(
                cout,
                kdim,
                p,
                T::one(),
                (k, kdim as isize, 1),
                (&cols[bi * kdim * p..], p as isize, 1),
                T::one(),
                (&mut out[bi * cout * p..], p as isize, 1),
            );
        }
        let value = Tensor::from_vec([n, cout, geo.ho, geo.wo], out)?;
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                cols,
            },
            rg,
        ))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor < 2 {
            return Err(shape_err(format!(
                "upsample_nearest: factor must be >= 2, got {factor}"
            )));
        }
        let [n, c, h, w] = self.value(input).shape();
        let (ho, wo) = (h * factor, w * factor);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in x.chunks_exact(h * w) {
            for oy in 0..ho {
                let row = &plane[(oy / factor) * w..(oy / factor + 1) * w];
                for ox in 0..wo {
                    out.push(row[ox / factor]);
                }
            }
        }
        let value = Tensor::from_vec([n, c, ho, wo], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Upsample { input, factor }, rg))
    }

    /// Per-channel batch normalization using the statistics of the current
    /// batch (no running averages).
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(input).shape();
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [1, c, 1, 1] {
                return Err(shape_err(format!(
                    "batch_norm: {name} shape {:?} does not match {c} channels",
                    self.value(v).shape()
                )));
            }
        }
        let hw = h * w;
        let count = T::from_usize(n * hw).unwrap();
        let eps = T::from_f64_lossy(BN_EPS);
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let planes = (0..n).map(|bi| (bi * c + ch) * hw);
            let mut mean = T::zero();
            for s in planes.clone() {
                mean += x[s..s + hw].iter().fold(T::zero(), |a, &v| a + v);
            }
            mean /= count;
            let mut var = T::zero();
            for s in planes.clone() {
                var += x[s..s + hw]
                    .iter()
                    .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
            }
            var /= count;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[ch] = istd;
            for s in planes {
                for i in s..s + hw {
                    let xh = (x[i] - mean) * istd;
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bt[ch];
                }
            }
        }
        let value = Tensor::from_vec([n, c, h, w], out)?;
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let slope = T::from_f64_lossy(slope);
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { v * slope })
            .collect();
        let value = Tensor::from_vec(x.shape(), data).unwrap();
        let rg = self.rg(input);
        self.push(value, Op::LeakyRelu { input, slope }, rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let data = x
            .data()
            .iter()
            .map(|&v| T::one() / (T::one() + (-v).exp()))
            .collect();
        let value = Tensor::from_vec(x.shape(), data).unwrap();
        let rg = self.rg(input);
        self.push(value, Op::Sigmoid { input }, rg)
    }

    /// Concatenation along the channel axis.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| shape_err("concat: no inputs".into()))?;
        let [n, _, h, w] = self.value(*first).shape();
        let mut c_total = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.value(v).shape();
            if (vn, vh, vw) != (n, h, w) {
                return Err(shape_err(format!(
                    "concat: shape {:?} incompatible with batch {n} and spatial {h}x{w}",
                    self.value(v).shape()
                )));
            }
            c_total += vc;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * c_total * hw);
        for bi in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[1] * hw;
                out.extend_from_slice(&t.data()[bi * chunk..(bi + 1) * chunk]);
            }
        }
        let value = Tensor::from_vec([n, c_total, h, w], out)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        ))
    }

    pub fn scale(&mut self, input: Var, alpha: f64) -> Var {
        let alpha = T::from_f64_lossy(alpha);
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v * alpha).collect();
        let value = Tensor::from_vec(x.shape(), data).unwrap();
        let rg = self.rg(input);
        self.push(value, Op::Scale { input, alpha }, rg)
    }

    /// Mean of squared differences; a scalar node.
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(format!(
                "mse_loss: shapes {:?} and {:?} differ",
                ta.shape(),
                tb.shape()
            )));
        }
        let sum = ta
            .data()
            .iter()
            .zip(tb.data())
            .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        let value = Tensor::scalar(sum / T::from_usize(ta.len()).unwrap());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mse { a, b }, rg))
    }

    /// Back-propagates from the scalar node `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let Tape { nodes } = self;
        if loss.0 >= nodes.len() {
            return Err(Error::state(
                "backward called before a forward pass recorded the loss node",
            ));
        }
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::state(format!(
                "backward needs a scalar loss, node has shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let mut params = BTreeMap::new();
        if nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(T::one()));
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let mut acc = |v: Var, t: Tensor<T>| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {
                    if let Some(id) = node.param {
                        params
                            .entry(id)
                            .and_modify(|p: &mut Tensor<T>| p.add_assign(&g))
                            .or_insert_with(|| g.clone());
                    }
                    leaves[i] = Some(g);
                }
                Op::Conv2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                    cols,
                } => {
                    let xs = nodes[input.0].value.shape();
                    let ks = nodes[kernel.0].value.shape();
                    let geo = ConvGeometry {
                        cin: xs[1],
                        h: xs[2],
                        w: xs[3],
                        kh: ks[2],
                        kw: ks[3],
                        stride: *stride,
                        padding: *padding,
                        ho: node.value.shape()[2],
                        wo: node.value.shape()[3],
                    };
                    let want_gx = nodes[input.0].requires_grad;
                    let (gx, gk, gb) = conv2d_backward(&geo, xs[0], ks[0], &nodes[kernel.0].value, cols, &g, want_gx);
                    if let Some(gx) = gx {
                        acc(*input, gx);
                    }
                    acc(*kernel, gk);
                    acc(*bias, gb);
                }
                Op::Upsample { input, factor } => {
                    let xs = nodes[input.0].value.shape();
                    let (h, w) = (xs[2], xs[3]);
                    let wo = w * factor;
                    let mut gx = vec![T::zero(); nodes[input.0].value.len()];
                    for (plane, gplane) in gx
                        .chunks_exact_mut(h * w)
                        .zip(g.data().chunks_exact(h * factor * wo))
                    {
                        for (oy, grow) in gplane.chunks_exact(wo).enumerate() {
                            let row = &mut plane[(oy / factor) * w..(oy / factor + 1) * w];
                            for (ox, &gv) in grow.iter().enumerate() {
                                row[ox / factor] += gv;
                            }
                        }
                    }
                    acc(*input, Tensor::from_vec(xs, gx).unwrap());
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let [n, c, h, w] = nodes[input.0].value.shape();
                    let hw = h * w;
                    let count = T::from_usize(n * hw).unwrap();
                    let gam = nodes[gamma.0].value.data();
                    let gd = g.data();
                    let mut gx = vec![T::zero(); gd.len()];
                    let mut gg = vec![T::zero(); c];
                    let mut gbeta = vec![T::zero(); c];
                    for ch in 0..c {
                        let planes = (0..n).map(|bi| (bi * c + ch) * hw);
                        let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
                        for s in planes.clone() {
                            for i in s..s + hw {
                                sum_dy += gd[i];
                                sum_dy_xh += gd[i] * xhat[i];
                            }
                        }
                        gg[ch] = sum_dy_xh;
                        gbeta[ch] = sum_dy;
                        let k = gam[ch] * inv_std[ch] / count;
                        for s in planes {
                            for i in s..s + hw {
                                gx[i] = k * (count * gd[i] - sum_dy - xhat[i] * sum_dy_xh);
                            }
                        }
                    }
                    acc(*input, Tensor::from_vec([n, c, h, w], gx).unwrap());
                    acc(*gamma, Tensor::from_vec([1, c, 1, 1], gg).unwrap());
                    acc(*beta, Tensor::from_vec([1, c, 1, 1], gbeta).unwrap());
                }
                Op::LeakyRelu { input, slope } => {
                    let x = nodes[input.0].value.data();
                    let gx = x
                        .iter()
                        .zip(g.data())
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { gv * *slope })
                        .collect();
                    acc(*input, Tensor::from_vec(g.shape(), gx).unwrap());
                }
                Op::Sigmoid { input } => {
                    let gx = node
                        .value
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&y, &gv)| gv * y * (T::one() - y))
                        .collect();
                    acc(*input, Tensor::from_vec(g.shape(), gx).unwrap());
                }
                Op::Concat { inputs } => {
                    let [n, c_total, h, w] = node.value.shape();
                    let hw = h * w;
                    let mut offset = 0;
                    for &v in inputs {
                        let c = nodes[v.0].value.shape()[1];
                        let mut gx = Vec::with_capacity(n * c * hw);
                        for bi in 0..n {
                            let start = (bi * c_total + offset) * hw;
                            gx.extend_from_slice(&g.data()[start..start + c * hw]);
                        }
                        acc(v, Tensor::from_vec([n, c, h, w], gx).unwrap());
                        offset += c;
                    }
                }
                Op::Scale { input, alpha } => {
                    let gx = g.data().iter().map(|&gv| gv * *alpha).collect();
                    acc(*input, Tensor::from_vec(g.shape(), gx).unwrap());
                }
                Op::Mse { a, b } => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let k = g.data()[0] * T::from_f64_lossy(2.0) / T::from_usize(ta.len()).unwrap();
                    let ga: Vec<T> = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(&x, &y)| k * (x - y))
                        .collect();
                    let gb = ga.iter().map(|&v| -v).collect();
                    acc(*a, Tensor::from_vec(ta.shape(), ga).unwrap());
                    acc(*b, Tensor::from_vec(ta.shape(), gb).unwrap());
                }
            }
        }
        Ok(Gradients { leaves, params })
    }
}

struct ConvGeometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeometry {
    fn kdim(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    /// Maps output coordinate and kernel offset to an input coordinate, or
    /// `None` when it falls in the zero padding.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < len)
    }

    /// Output columns `lo..hi` whose input column for kernel offset `kj`
    /// lies inside the image.
    #[inline]
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.padding.saturating_sub(kj).div_ceil(s);
        let hi = (self.w + self.padding).saturating_sub(kj).div_ceil(s).min(self.wo);
        (lo, hi.max(lo))
    }

    /// Appends the `[K, P]` column matrix of one batch item to `cols`.
    fn im2col<T: Real>(&self, x: &[T], cols: &mut Vec<T>) {
        let s = self.stride;
        let zeros = |cols: &mut Vec<T>, n: usize| cols.extend(core::iter::repeat_n(T::zero(), n));
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let (lo, hi) = self.valid_cols(kj);
                    for oy in 0..self.ho {
                        let Some(iy) = Self::src(oy, ki, s, self.padding, self.h) else {
                            zeros(cols, self.wo);
                            continue;
                        };
                        zeros(cols, lo);
                        if lo < hi {
                            let srow = &plane[iy * self.w..(iy + 1) * self.w];
                            let first = lo * s + kj - self.padding;
                            if s == 1 {
                                cols.extend_from_slice(&srow[first..first + hi - lo]);
                            } else {
                                cols.extend(srow[first..].iter().step_by(s).take(hi - lo));
                            }
                        }
                        zeros(cols, self.wo - hi);
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], gx: &mut [T]) {
        let p = self.ho * self.wo;
        let s = self.stride;
        for ci in 0..self.cin {
            let plane = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    let (lo, hi) = self.valid_cols(kj);
                    if lo == hi {
                        continue;
                    }
                    let first = lo * s + kj - self.padding;
                    for oy in 0..self.ho {
                        let Some(iy) = Self::src(oy, ki, s, self.padding, self.h) else {
                            continue;
                        };
                        let srow = &src[oy * self.wo + lo..oy * self.wo + hi];
                        let drow = &mut plane[iy * self.w + first..(iy + 1) * self.w];
                        if s == 1 {
                            for (d, &v) in drow.iter_mut().zip(srow) {
                                *d += v;
                            }
                        } else {
                            for (d, &v) in drow.iter_mut().step_by(s).zip(srow) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a convolution; the input gradient only when `want_gx`.
fn conv2d_backward<T: Real>(
    geo: &ConvGeometry,
    n: usize,
    cout: usize,
    kernel: &Tensor<T>,
    cols: &[T],
    g: &Tensor<T>,
    want_gx: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let kdim = geo.kdim();
    let p = geo.ho * geo.wo;
    let in_len = geo.cin * geo.h * geo.w;
    let mut gk = vec![T::zero(); cout * kdim];
    let mut gb = vec![T::zero(); cout];
    let mut gx = if want_gx { vec![T::zero(); n * in_len] } else { Vec::new() };
    for bi in 0..n {
        let gout = &g.data()[bi * cout * p..(bi + 1) * cout * p];
        let col = &cols[bi * kdim * p..(bi + 1) * kdim * p];
        for (co, row) in gout.chunks_exact(p).enumerate() {
            gb[co] += row.iter().fold(T::zero(), |a, &v| a + v);
        }
        // dK += dY · colsᵀ
        T::gemm(
            cout,
            p,
            kdim,
            T::one(),
            (gout, p as isize, 1),
            (col, 1, p as isize),
            T::one(),
            (&mut gk, kdim as isize, 1),
        );
        if want_gx {
            // dcols = Kᵀ · dY
            let gcols = T::gemm_new(kdim, cout, p, (kernel.data(), 1, kdim as isize), (gout, p as isize, 1));
            geo.col2im(&gcols, &mut gx[bi * in_len..(bi + 1) * in_len]);
        }
    }
    (
        want_gx.then(|| Tensor::from_vec([n, geo.cin, geo.h, geo.w], gx).unwrap()),
        Tensor::from_vec(kernel.shape(), gk).unwrap(),
        Tensor::from_vec([1, cout, 1, 1], gb).unwrap(),
    )
}
