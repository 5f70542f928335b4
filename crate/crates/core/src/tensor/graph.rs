use super::conv::{conv_backward, conv_forward, ConvGeom, Padding};
use super::{Real, Tensor};
use crate::color;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-channel batch statistics from a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance (biased when the reduction has a single element).
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: T,
    },
    Sigmoid(Var),
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Swish(Var),
    Abs(Var),
    LnClamped {
        x: Var,
        eps: T,
    },
    ChannelAvg(Var),
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvg(Var),
    Concat(Vec<Var>),
    PixelShuffle {
        x: Var,
        r: usize,
    },
    Reshape(Var),
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        /// Normalized input (train mode) or `None` in eval mode.
        xhat: Option<Vec<T>>,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Mean(Var),
    Sum(Var),
    DeltaE {
        a: Var,
        b: Var,
        partials: Vec<[f64; 6]>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Affine { .. } => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Swish(_) => "swish",
            Op::Abs(_) => "abs",
            Op::LnClamped { .. } => "ln",
            Op::ChannelAvg(_) => "channel_avg",
            Op::ChannelMax { .. } => "channel_max",
            Op::GlobalAvg(_) => "global_avg",
            Op::Concat(_) => "concat",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::Reshape(_) => "reshape",
            Op::Linear { .. } => "linear",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::DeltaE { .. } => "delta_e2000",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of operations recorded in creation order, which is a topological
/// order; backward walks it in reverse.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::shape(op, format!("rank mismatch {a:?} vs {b:?}")));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => Err(Error::shape(
                op,
                format!("cannot broadcast {a:?} with {b:?}"),
            )),
        })
        .collect()
}

fn bcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Visit every output element with the matching flat offsets into `a` and `b`.
fn for_each_bcast(out: &[usize], a: &[usize], b: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = out.iter().product();
    if a == out && b == out {
        (0..n).for_each(|i| f(i, i, i));
        return;
    }
    let sa = bcast_strides(a, out);
    let sb = bcast_strides(b, out);
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for i in 0..n {
        f(i, oa, ob);
        for d in (0..rank).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Split a rank-4 shape around the channel axis: `(n, c, h*w)`.
fn nc_hw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::shape(
            op,
            format!("expected N x C x H x W, got {shape:?}"),
        )),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), stride, padding)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.o] {
                return Err(Error::shape(
                    "conv2d",
                    format!(
                        "bias shape {:?} for {} output channels",
                        self.shape(b),
                        geom.o
                    ),
                ));
            }
        }
        let out = conv_forward(
            &geom,
            self.value(input).data(),
            self.value(kernel).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(geom.out_shape().to_vec(), out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            &inputs,
        )
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        let out_shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = vec![T::zero(); out_shape.iter().product()];
        for_each_bcast(&out_shape, va.shape(), vb.shape(), |i, ia, ib| {
            out[i] = f(va.data()[ia], vb.data()[ib]);
        });
        Ok(Tensor::new(out_shape, out)?).and_then(|t| {
            let op = match name {
                "add" => Op::Add(a, b),
                "sub" => Op::Sub(a, b),
                _ => Op::Mul(a, b),
            };
            self.push(t, op, &[a, b])
        })
    }

    /// Element-wise sum with size-1 broadcasting on equal-rank shapes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y)
    }

    /// Element-wise product with size-1 broadcasting on equal-rank shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y)
    }

    /// `scale * x + offset`.
    pub fn affine(&mut self, x: Var, scale: T, offset: T) -> Result<Var> {
        let value = self.value(x).map(|v| scale * v + offset);
        self.push(value, Op::Affine { x, scale }, &[x])
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Result<Var> {
        self.affine(x, scale, T::zero())
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let value = self
            .value(x)
            .map(|v| if v >= T::zero() { v } else { slope * v });
        self.push(value, Op::LeakyRelu { x, slope }, &[x])
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v * sigmoid(v));
        self.push(value, Op::Swish(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.abs());
        self.push(value, Op::Abs(x), &[x])
    }

    /// `ln(max(x, eps))`; the gradient is zero where the clamp is active.
    pub fn ln_clamped(&mut self, x: Var, eps: T) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(eps).ln());
        self.push(value, Op::LnClamped { x, eps }, &[x])
    }

    /// Mean across channels: `N x C x H x W -> N x 1 x H x W`.
    pub fn channel_avg(&mut self, x: Var) -> Result<Var> {
        let (n, c, hw) = nc_hw("channel_avg", self.shape(x))?;
        let src = self.value(x).data();
        let inv = T::one() / T::lit(c as f64);
        let mut out = vec![T::zero(); n * hw];
        for ni in 0..n {
            let dst = &mut out[ni * hw..(ni + 1) * hw];
            for ci in 0..c {
                let plane = &src[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                dst.iter_mut().zip(plane).for_each(|(d, &v)| *d += v);
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let mut shape = self.shape(x).to_vec();
        shape[1] = 1;
        self.push(Tensor::new(shape, out)?, Op::ChannelAvg(x), &[x])
    }

    /// Max across channels: `N x C x H x W -> N x 1 x H x W`. Ties route the
    /// gradient to the lowest channel index.
    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (n, c, hw) = nc_hw("channel_max", self.shape(x))?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n * hw];
        let mut argmax = vec![0usize; n * hw];
        for ni in 0..n {
            for p in 0..hw {
                let mut best = src[ni * c * hw + p];
                let mut arg = 0;
                for ci in 1..c {
                    let v = src[(ni * c + ci) * hw + p];
                    if v > best {
                        best = v;
                        arg = ci;
                    }
                }
                out[ni * hw + p] = best;
                argmax[ni * hw + p] = arg;
            }
        }
        let mut shape = self.shape(x).to_vec();
        shape[1] = 1;
        self.push(Tensor::new(shape, out)?, Op::ChannelMax { x, argmax }, &[x])
    }

    /// Spatial mean per channel: `N x C x H x W -> N x C x 1 x 1`.
    pub fn global_avg(&mut self, x: Var) -> Result<Var> {
        let (n, c, hw) = nc_hw("global_avg", self.shape(x))?;
        let src = self.value(x).data();
        let inv = T::one() / T::lit(hw as f64);
        let out: Vec<T> = (0..n * c)
            .map(|i| {
                src[i * hw..(i + 1) * hw]
                    .iter()
                    .fold(T::zero(), |a, &v| a + v)
                    * inv
            })
            .collect();
        self.push(Tensor::new(vec![n, c, 1, 1], out)?, Op::GlobalAvg(x), &[x])
    }

    /// Concatenate rank-4 tensors along the channel axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        };
        let (n, _, hw) = nc_hw("concat", self.shape(first))?;
        let (h, w) = (self.shape(first)[2], self.shape(first)[3]);
        let mut total_c = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != 4 || s[0] != n || s[2] != h || s[3] != w {
                return Err(Error::shape(
                    "concat",
                    format!(
                        "{:?} does not match {:?} outside the channel axis",
                        s,
                        self.shape(first)
                    ),
                ));
            }
            total_c += s[1];
        }
        let mut out = Vec::with_capacity(n * total_c * hw);
        for ni in 0..n {
            for &v in xs {
                let c = self.shape(v)[1];
                out.extend_from_slice(&self.value(v).data()[ni * c * hw..(ni + 1) * c * hw]);
            }
        }
        self.push(
            Tensor::new(vec![n, total_c, h, w], out)?,
            Op::Concat(xs.to_vec()),
            xs,
        )
    }

    /// Sub-pixel rearrangement `N x C*r^2 x H x W -> N x C x rH x rW` with
    /// `out(c, r*y + dy, r*x + dx) = in(c*r^2 + dy*r + dx, y, x)`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let [n, cr, h, w] = *self.shape(x) else {
            return Err(Error::shape("pixel_shuffle", "expected rank 4"));
        };
        if r == 0 || cr % (r * r) != 0 {
            return Err(Error::shape(
                "pixel_shuffle",
                format!("{cr} channels not divisible by r^2 = {}", r * r),
            ));
        }
        let c = cr / (r * r);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        let (oh, ow) = (h * r, w * r);
        for ni in 0..n {
            for ci in 0..c {
                for dy in 0..r {
                    for dx in 0..r {
                        let ic = ci * r * r + dy * r + dx;
                        let plane = &src[((ni * cr + ic) * h) * w..((ni * cr + ic + 1) * h) * w];
                        for y in 0..h {
                            let row = ((ni * c + ci) * oh + r * y + dy) * ow;
                            for xx in 0..w {
                                out[row + r * xx + dx] = plane[y * w + xx];
                            }
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![n, c, oh, ow], out)?,
            Op::PixelShuffle { x, r },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape.to_vec())?;
        self.push(value, Op::Reshape(x), &[x])
    }

    /// Affine map `x W^T + b` for `x: N x in`, `W: out x in`, `b: out`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (&[n, fin], &[fout, win]) = (self.shape(x), self.shape(weight)) else {
            return Err(Error::shape(
                "linear",
                format!(
                    "input {:?} / weight {:?} must be rank 2",
                    self.shape(x),
                    self.shape(weight)
                ),
            ));
        };
        if fin != win || self.shape(bias) != [fout] {
            return Err(Error::shape(
                "linear",
                format!(
                    "input {:?}, weight {:?}, bias {:?}",
                    self.shape(x),
                    self.shape(weight),
                    self.shape(bias)
                ),
            ));
        }
        let mut out = vec![T::zero(); n * fout];
        for ni in 0..n {
            out[ni * fout..(ni + 1) * fout].copy_from_slice(self.value(bias).data());
        }
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            self.value(x).data(),
            fin as isize,
            1,
            self.value(weight).data(),
            1,
            fin as isize,
            T::one(),
            &mut out,
            fout as isize,
            1,
        );
        self.push(
            Tensor::new(vec![n, fout], out)?,
            Op::Linear { x, weight, bias },
            &[x, weight, bias],
        )
    }

    fn check_bn_affine(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (n, c, hw) = nc_hw("batch_norm", self.shape(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape(
                "batch_norm",
                format!("gamma/beta must have shape [{c}]"),
            ));
        }
        Ok((n, c, hw))
    }

    /// Training-mode batch norm over `N, H, W` per channel. Returns the
    /// output and the batch statistics for the running-average update.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>)> {
        let (n, c, hw) = self.check_bn_affine(x, gamma, beta)?;
        let src = self.value(x).data();
        let m = n * hw;
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ci in 0..c {
            let mut s = T::zero();
            for ni in 0..n {
                for &v in &src[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                    s += v;
                }
            }
            let mu = s / T::lit(m as f64);
            let mut ss = T::zero();
            for ni in 0..n {
                for &v in &src[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                    ss += (v - mu) * (v - mu);
                }
            }
            mean[ci] = mu;
            var[ci] = ss / T::lit(m as f64);
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        for ni in 0..n {
            for ci in 0..c {
                let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
                for i in r {
                    let xh = (src[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = xh;
                    out[i] = g[ci] * xh + b[ci];
                }
            }
        }
        let unbias = if m > 1 {
            T::lit(m as f64 / (m - 1) as f64)
        } else {
            T::one()
        };
        let stats = BatchStats {
            mean: mean.clone(),
            var: var.iter().map(|&v| v * unbias).collect(),
        };
        let shape = self.shape(x).to_vec();
        let v = self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: Some(xhat),
                mean,
                inv_std,
            },
            &[x, gamma, beta],
        )?;
        Ok((v, stats))
    }

    /// Inference-mode batch norm using running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (n, c, hw) = self.check_bn_affine(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(
                "batch_norm",
                "running statistics do not match channels",
            ));
        }
        let inv_std: Vec<T> = running_var
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); src.len()];
        for ni in 0..n {
            for ci in 0..c {
                for i in (ni * c + ci) * hw..(ni * c + ci + 1) * hw {
                    out[i] = g[ci] * (src[i] - running_mean[ci]) * inv_std[ci] + b[ci];
                }
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(
            Tensor::new(shape, out)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: None,
                mean: running_mean.to_vec(),
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Mean of all elements as a one-element tensor.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().fold(T::zero(), |a, &v| a + v) / T::lit(t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &v| a + v);
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Per-pixel CIEDE2000 between two sRGB images `N x 3 x H x W` with
    /// values in `[0, 1]`; returns `N x 1 x H x W`.
    ///
    /// Inputs outside `[0, 1]` are clamped and receive zero gradient through
    /// the clamp. Hue-branch selection is piecewise constant in backward.
    pub fn delta_e2000(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa != self.shape(b) || sa.len() != 4 || sa[1] != 3 {
            return Err(Error::shape(
                "delta_e2000",
                format!(
                    "expected matching N x 3 x H x W, got {sa:?} and {:?}",
                    self.shape(b)
                ),
            ));
        }
        let (n, hw) = (sa[0], sa[2] * sa[3]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); n * hw];
        let mut partials = vec![[0.0; 6]; n * hw];
        for ni in 0..n {
            for p in 0..hw {
                let px = |d: &[T], ch: usize| d[(ni * 3 + ch) * hw + p].as_f64();
                let ca = [px(da, 0), px(da, 1), px(da, 2)];
                let cb = [px(db, 0), px(db, 1), px(db, 2)];
                let (de, grad) = color::delta_e2000_rgb_with_grad(ca, cb);
                out[ni * hw + p] = T::lit(de);
                partials[ni * hw + p] = grad;
            }
        }
        self.push(
            Tensor::new(vec![n, 1, sa[2], sa[3]], out)?,
            Op::DeltaE { a, b, partials },
            &[a, b],
        )
    }

    /// Which side of its non-differentiable point every piecewise op
    /// (leaky ReLU, abs, channel max, clamped log) evaluated on. Two graphs
    /// of the same function with equal patterns lie on one smooth piece.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let (x, pivot) = match &node.op {
                Op::LeakyRelu { x, .. } | Op::Abs(x) => (*x, T::zero()),
                Op::LnClamped { x, eps } => (*x, *eps),
                Op::ChannelMax { argmax, .. } => {
                    out.extend_from_slice(argmax);
                    continue;
                }
                _ => continue,
            };
            out.extend(
                self.value(x)
                    .data()
                    .iter()
                    .map(|&v| usize::from(v >= pivot)),
            );
        }
        out
    }

    /// Reverse-mode sweep from a one-element output.
    ///
    /// Every node that (transitively) depends on a `requires_grad` leaf
    /// receives `d output / d node`; gradients into shared inputs add up.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            self.backprop_node(node, &gy, &mut grads);
            grads[i] = Some(gy);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|g| Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, contribution: Vec<T>| match &mut grads[v.0] {
            Some(g) => g.iter_mut().zip(&contribution).for_each(|(a, &c)| *a += c),
            slot @ None => *slot = Some(contribution),
        };
        let val = |v: Var| self.nodes[v.0].value.data();

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let g = conv_backward(
                    geom,
                    val(*input),
                    val(*kernel),
                    gy,
                    self.wants(*input),
                    self.wants(*kernel),
                    bias.is_some_and(|b| self.wants(b)),
                );
                if let Some(dx) = g.input {
                    acc(*input, dx);
                }
                if let Some(dk) = g.kernel {
                    acc(*kernel, dk);
                }
                if let (Some(b), Some(db)) = (bias, g.bias) {
                    acc(*b, db);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let out_shape = node.value.shape();
                let (sa, sb) = (self.shape(a), self.shape(b));
                let is_mul = matches!(node.op, Op::Mul(..));
                let sign_b = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if self.wants(a) {
                    let mut ga = vec![T::zero(); val(a).len()];
                    let vb = val(b);
                    for_each_bcast(out_shape, sa, sb, |i, ia, ib| {
                        ga[ia] += if is_mul { gy[i] * vb[ib] } else { gy[i] };
                    });
                    acc(a, ga);
                }
                if self.wants(b) {
                    let mut gb = vec![T::zero(); val(b).len()];
                    let va = val(a);
                    for_each_bcast(out_shape, sa, sb, |i, ia, ib| {
                        gb[ib] += if is_mul {
                            gy[i] * va[ia]
                        } else {
                            sign_b * gy[i]
                        };
                    });
                    acc(b, gb);
                }
            }
            Op::Affine { x, scale } => acc(*x, gy.iter().map(|&g| g * *scale).collect()),
            Op::Sigmoid(x) => {
                let y = node.value.data();
                acc(
                    *x,
                    gy.iter()
                        .zip(y)
                        .map(|(&g, &s)| g * s * (T::one() - s))
                        .collect(),
                );
            }
            Op::LeakyRelu { x, slope } => {
                let xs = val(*x);
                acc(
                    *x,
                    gy.iter()
                        .zip(xs)
                        .map(|(&g, &v)| if v >= T::zero() { g } else { g * *slope })
                        .collect(),
                );
            }
            Op::Swish(x) => {
                let xs = val(*x);
                acc(
                    *x,
                    gy.iter()
                        .zip(xs)
                        .map(|(&g, &v)| {
                            let s = sigmoid(v);
                            g * (s + v * s * (T::one() - s))
                        })
                        .collect(),
                );
            }
            Op::Abs(x) => {
                let xs = val(*x);
                acc(
                    *x,
                    gy.iter()
                        .zip(xs)
                        .map(|(&g, &v)| {
                            if v > T::zero() {
                                g
                            } else if v < T::zero() {
                                -g
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                );
            }
            Op::LnClamped { x, eps } => {
                let xs = val(*x);
                acc(
                    *x,
                    gy.iter()
                        .zip(xs)
                        .map(|(&g, &v)| if v > *eps { g / v } else { T::zero() })
                        .collect(),
                );
            }
            Op::ChannelAvg(x) => {
                let [n, c, h, w] = *self.shape(*x) else {
                    unreachable!()
                };
                let hw = h * w;
                let inv = T::one() / T::lit(c as f64);
                let mut gx = vec![T::zero(); n * c * hw];
                for ni in 0..n {
                    for ci in 0..c {
                        let dst = &mut gx[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                        dst.iter_mut()
                            .zip(&gy[ni * hw..(ni + 1) * hw])
                            .for_each(|(d, &g)| *d = g * inv);
                    }
                }
                acc(*x, gx);
            }
            Op::ChannelMax { x, argmax } => {
                let [n, c, h, w] = *self.shape(*x) else {
                    unreachable!()
                };
                let hw = h * w;
                let mut gx = vec![T::zero(); n * c * hw];
                for ni in 0..n {
                    for p in 0..hw {
                        gx[(ni * c + argmax[ni * hw + p]) * hw + p] = gy[ni * hw + p];
                    }
                }
                acc(*x, gx);
            }
            Op::GlobalAvg(x) => {
                let [n, c, h, w] = *self.shape(*x) else {
                    unreachable!()
                };
                let hw = h * w;
                let inv = T::one() / T::lit(hw as f64);
                let mut gx = vec![T::zero(); n * c * hw];
                for i in 0..n * c {
                    gx[i * hw..(i + 1) * hw].fill(gy[i] * inv);
                }
                acc(*x, gx);
            }
            Op::Concat(xs) => {
                let s = node.value.shape();
                let (n, total_c, hw) = (s[0], s[1], s[2] * s[3]);
                let mut c_off = 0;
                for &v in xs {
                    let c = self.shape(v)[1];
                    if self.wants(v) {
                        let mut gx = Vec::with_capacity(n * c * hw);
                        for ni in 0..n {
                            let start = (ni * total_c + c_off) * hw;
                            gx.extend_from_slice(&gy[start..start + c * hw]);
                        }
                        acc(v, gx);
                    }
                    c_off += c;
                }
            }
            Op::PixelShuffle { x, r } => {
                let r = *r;
                let [n, cr, h, w] = *self.shape(*x) else {
                    unreachable!()
                };
                let c = cr / (r * r);
                let (oh, ow) = (h * r, w * r);
                let mut gx = vec![T::zero(); gy.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        for dy in 0..r {
                            for dx in 0..r {
                                let ic = ci * r * r + dy * r + dx;
                                for y in 0..h {
                                    let row = ((ni * c + ci) * oh + r * y + dy) * ow;
                                    for xx in 0..w {
                                        gx[((ni * cr + ic) * h + y) * w + xx] =
                                            gy[row + r * xx + dx];
                                    }
                                }
                            }
                        }
                    }
                }
                acc(*x, gx);
            }
            Op::Reshape(x) => acc(*x, gy.to_vec()),
            Op::Linear { x, weight, bias } => {
                let [n, fin] = *self.shape(*x) else {
                    unreachable!()
                };
                let fout = self.shape(*weight)[0];
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); n * fin];
                    T::gemm(
                        n,
                        fout,
                        fin,
                        T::one(),
                        gy,
                        fout as isize,
                        1,
                        val(*weight),
                        fin as isize,
                        1,
                        T::zero(),
                        &mut gx,
                        fin as isize,
                        1,
                    );
                    acc(*x, gx);
                }
                if self.wants(*weight) {
                    let mut gw = vec![T::zero(); fout * fin];
                    T::gemm(
                        fout,
                        n,
                        fin,
                        T::one(),
                        gy,
                        1,
                        fout as isize,
                        val(*x),
                        fin as isize,
                        1,
                        T::zero(),
                        &mut gw,
                        fin as isize,
                        1,
                    );
                    acc(*weight, gw);
                }
                if self.wants(*bias) {
                    let mut gb = vec![T::zero(); fout];
                    for ni in 0..n {
                        gb.iter_mut()
                            .zip(&gy[ni * fout..(ni + 1) * fout])
                            .for_each(|(b, &g)| *b += g);
                    }
                    acc(*bias, gb);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                mean,
                inv_std,
            } => {
                let [n, c, h, w] = *self.shape(*x) else {
                    unreachable!()
                };
                let hw = h * w;
                let m = T::lit((n * hw) as f64);
                let g = val(*gamma);
                let xs = val(*x);
                let xhat_at = |i: usize, ci: usize| match xhat {
                    Some(xh) => xh[i],
                    None => (xs[i] - mean[ci]) * inv_std[ci],
                };
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        for i in (ni * c + ci) * hw..(ni * c + ci + 1) * hw {
                            sum_dy[ci] += gy[i];
                            sum_dy_xhat[ci] += gy[i] * xhat_at(i, ci);
                        }
                    }
                }
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); xs.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let k = g[ci] * inv_std[ci];
                            for i in (ni * c + ci) * hw..(ni * c + ci + 1) * hw {
                                gx[i] = if xhat.is_some() {
                                    k * (gy[i]
                                        - sum_dy[ci] / m
                                        - xhat_at(i, ci) * sum_dy_xhat[ci] / m)
                                } else {
                                    k * gy[i]
                                };
                            }
                        }
                    }
                    acc(*x, gx);
                }
                if self.wants(*gamma) {
                    acc(*gamma, sum_dy_xhat);
                }
                if self.wants(*beta) {
                    acc(*beta, sum_dy);
                }
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                acc(*x, vec![gy[0] / T::lit(n as f64); n]);
            }
            Op::Sum(x) => acc(*x, vec![gy[0]; val(*x).len()]),
            Op::DeltaE { a, b, partials } => {
                let s = self.shape(*a);
                let (n, hw) = (s[0], s[2] * s[3]);
                for (v, off) in [(*a, 0usize), (*b, 3usize)] {
                    if !self.wants(v) {
                        continue;
                    }
                    let mut gx = vec![T::zero(); n * 3 * hw];
                    for ni in 0..n {
                        for p in 0..hw {
                            let gp = gy[ni * hw + p].as_f64();
                            for ch in 0..3 {
                                gx[(ni * 3 + ch) * hw + p] =
                                    T::lit(gp * partials[ni * hw + p][off + ch]);
                            }
                        }
                    }
                    acc(v, gx);
                }
            }
        }
    }
}
