use super::kernels::{self, ConvGeometry};
use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Tape`].
///
/// Handles are only meaningful for the tape that produced them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Value(usize);

impl Value {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Value, Value),
    Sub(Value, Value),
    Mul(Value, Value),
    ScalarMul(Value, f64),
    AddScalar(Value),
    Sum(Value),
    MaskedSum(Value, Vec<usize>),
    /// Element-wise map; stores the local derivative at each element.
    Pointwise(Value, Vec<f64>),
    Conv2d {
        input: Value,
        kernel: Value,
        bias: Value,
        padding: usize,
    },
    MaxPool(Value, Vec<usize>),
    Upsample(Value, usize),
    ConcatChannels(Vec<Value>),
    SelectBatch(Value, usize),
    Reshape(Value),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode recording of a computation over dense tensors.
///
/// Nodes are appended in evaluation order, so every node follows its
/// parents and a reverse sweep over the node list is a valid backward
/// schedule.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when the loss
    /// does not depend on `v`.
    pub fn get(&self, v: Value) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`; zeros when `v` is unreachable.
    pub fn wrt(&self, v: Value) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>, AutodiffError> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else if b.is_scalar() {
        Ok(a.shape().to_vec())
    } else {
        Err(AutodiffError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.shape() == b.shape() {
        a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect()
    } else if a.is_scalar() {
        let x = a.item();
        b.data().iter().map(|y| f(x, *y)).collect()
    } else {
        let y = b.item();
        a.data().iter().map(|x| f(*x, y)).collect()
    }
}

/// Reduces a gradient to the shape of an operand that may have been
/// broadcast from a scalar.
fn reduce_to(operand: &Tensor, grad: Tensor) -> Tensor {
    if operand.is_scalar() && !grad.is_scalar() {
        Tensor::scalar(grad.sum())
    } else {
        grad
    }
}

fn nchw(op: &'static str, t: &Tensor) -> Result<[usize; 4], AutodiffError> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(AutodiffError::Rank {
            op,
            expected: 4,
            shape: t.shape().to_vec(),
        }),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Shorthand for the single element of a scalar node.
    pub fn scalar(&self, v: Value) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Value {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Value(self.nodes.len() - 1)
    }

    fn needs(&self, vs: &[Value]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a trainable input.
    pub fn leaf(&mut self, t: Tensor) -> Value {
        self.push(t, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Value {
        self.push(t, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape("add", ta, tb)?;
        let out = Tensor::new(shape, zip_broadcast(ta, tb, |x, y| x + y))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape("sub", ta, tb)?;
        let out = Tensor::new(shape, zip_broadcast(ta, tb, |x, y| x - y))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape("mul", ta, tb)?;
        let out = Tensor::new(shape, zip_broadcast(ta, tb, |x, y| x * y))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scalar_mul(&mut self, x: Value, factor: f64) -> Value {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        let rg = self.needs(&[x]);
        self.push(out, Op::ScalarMul(x, factor), rg)
    }

    pub fn add_scalar(&mut self, x: Value, offset: f64) -> Value {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v + offset).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        let rg = self.needs(&[x]);
        self.push(out, Op::AddScalar(x), rg)
    }

    /// Sum of all elements as a scalar node.
    pub fn sum(&mut self, x: Value) -> Value {
        let s = self.value(x).sum();
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Sum of the elements at the given flat indices.
    pub fn masked_sum(&mut self, x: Value, indices: &[usize]) -> Result<Value, AutodiffError> {
        let t = self.value(x);
        let data = t.data();
        let mut s = 0.0;
        for &i in indices {
            s += *data.get(i).ok_or(AutodiffError::IndexOutOfRange {
                index: i,
                len: data.len(),
            })?;
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::MaskedSum(x, indices.to_vec()), rg))
    }

    /// Applies `f` element-wise; `f` returns the value and its derivative.
    pub fn pointwise(&mut self, x: Value, f: impl Fn(f64) -> (f64, f64)) -> Value {
        let t = self.value(x);
        let (vals, derivs): (Vec<f64>, Vec<f64>) = t.data().iter().map(|&v| f(v)).unzip();
        let out = Tensor::new(t.shape().to_vec(), vals).expect("shape preserved");
        let rg = self.needs(&[x]);
        self.push(out, Op::Pointwise(x, derivs), rg)
    }

    pub fn sigmoid(&mut self, x: Value) -> Value {
        self.pointwise(x, |v| {
            let s = sigmoid(v);
            (s, s * (1.0 - s))
        })
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(&mut self, x: Value) -> Value {
        self.pointwise(x, |v| (v.max(0.0) + (-v.abs()).exp().ln_1p(), sigmoid(v)))
    }

    pub fn relu(&mut self, x: Value) -> Value {
        self.pointwise(x, |v| if v > 0.0 { (v, 1.0) } else { (0.0, 0.0) })
    }

    pub fn log(&mut self, x: Value) -> Result<Value, AutodiffError> {
        if let Some((index, &value)) = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0))
        {
            return Err(AutodiffError::Domain {
                op: "log",
                index,
                value,
            });
        }
        Ok(self.pointwise(x, |v| (v.ln(), 1.0 / v)))
    }

    /// Stride-1 2-D convolution of `input [N,C,H,W]` with `kernel [F,C,k,k]`
    /// plus per-filter `bias [F]`.
    pub fn conv2d(
        &mut self,
        input: Value,
        kernel: Value,
        bias: Value,
        padding: usize,
    ) -> Result<Value, AutodiffError> {
        let [n, c, h, w] = nchw("conv2d", self.value(input))?;
        let [f, kc, kh, kw] = nchw("conv2d", self.value(kernel))?;
        if kc != c {
            return Err(AutodiffError::ChannelMismatch {
                input: c,
                kernel: kc,
            });
        }
        if kh != kw || kh % 2 == 0 {
            return Err(AutodiffError::InvalidArgument(format!(
                "conv2d kernel must be square with odd size, got {kh}x{kw}"
            )));
        }
        if self.value(bias).shape() != [f] {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv2d bias",
                left: vec![f],
                right: self.value(bias).shape().to_vec(),
            });
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(AutodiffError::InvalidArgument(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})"
            )));
        }
        let g = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel: kh,
            padding,
            out_height: h + 2 * padding - kh + 1,
            out_width: w + 2 * padding - kw + 1,
        };
        let (q, p) = (g.patch_len(), g.out_len());
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; n * f * p];
        let mut cols = vec![0.0; q * p];
        for img in 0..n {
            kernels::im2col(&x[img * c * h * w..(img + 1) * c * h * w], &g, &mut cols);
            let dst = &mut out[img * f * p..(img + 1) * f * p];
            for (fi, plane) in dst.chunks_mut(p).enumerate() {
                plane.fill(b[fi]);
            }
            kernels::gemm(f, q, p, k, false, &cols, false, 1.0, dst);
        }
        let out = Tensor::new(vec![n, f, g.out_height, g.out_width], out)?;
        let rg = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            },
            rg,
        ))
    }

    /// Non-overlapping `size x size` max pooling over `[N,C,H,W]`.
    pub fn maxpool2d(&mut self, x: Value, size: usize) -> Result<Value, AutodiffError> {
        let [n, c, h, w] = nchw("maxpool2d", self.value(x))?;
        if size == 0 || h % size != 0 || w % size != 0 {
            return Err(AutodiffError::InvalidArgument(format!(
                "maxpool2d window {size} does not tile {h}x{w}"
            )));
        }
        let (vals, arg) = kernels::maxpool(self.value(x).data(), n * c, h, w, size);
        let out = Tensor::new(vec![n, c, h / size, w / size], vals)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::MaxPool(x, arg), rg))
    }

    /// Nearest-neighbour upsampling of `[N,C,H,W]` by an integer factor.
    pub fn upsample_nearest(&mut self, x: Value, factor: usize) -> Result<Value, AutodiffError> {
        let [n, c, h, w] = nchw("upsample_nearest", self.value(x))?;
        if factor == 0 {
            return Err(AutodiffError::InvalidArgument("upsample factor 0".into()));
        }
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in src.chunks(h * w) {
            for i in 0..oh {
                let row = &plane[(i / factor) * w..(i / factor + 1) * w];
                for j in 0..ow {
                    out.push(row[j / factor]);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Upsample(x, factor), rg))
    }

    /// Concatenates `[N,C_i,H,W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Value]) -> Result<Value, AutodiffError> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument("concat of zero tensors".into()))?;
        let [n, _, h, w] = nchw("concat_channels", self.value(first))?;
        let mut total_c = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = nchw("concat_channels", self.value(p))?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_channels",
                    left: self.value(first).shape().to_vec(),
                    right: self.value(p).shape().to_vec(),
                });
            }
            total_c += pc;
        }
        let mut out = Vec::with_capacity(n * total_c * h * w);
        for img in 0..n {
            for &p in parts {
                let t = self.value(p);
                let per = t.len() / n;
                out.extend_from_slice(&t.data()[img * per..(img + 1) * per]);
            }
        }
        let out = Tensor::new(vec![n, total_c, h, w], out)?;
        let rg = self.needs(parts);
        Ok(self.push(out, Op::ConcatChannels(parts.to_vec()), rg))
    }

    /// Takes item `index` along the leading axis.
    pub fn select_batch(&mut self, x: Value, index: usize) -> Result<Value, AutodiffError> {
        let t = self.value(x);
        let (&n, rest) = t
            .shape()
            .split_first()
            .ok_or_else(|| AutodiffError::InvalidArgument("select_batch on a scalar".into()))?;
        if index >= n {
            return Err(AutodiffError::IndexOutOfRange { index, len: n });
        }
        let per: usize = rest.iter().product();
        let out = Tensor::new(rest.to_vec(), t.data()[index * per..(index + 1) * per].to_vec())?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::SelectBatch(x, index), rg))
    }

    pub fn reshape(&mut self, x: Value, shape: &[usize]) -> Result<Value, AutodiffError> {
        let out = self.value(x).clone().reshaped(shape)?;
        let rg = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Back-propagates from the scalar `loss` through every recorded node.
    pub fn backward(&self, loss: Value) -> Result<Gradients, AutodiffError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(AutodiffError::NonScalarLoss {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lt.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), AutodiffError> {
        let mut acc = |v: Value, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let like = |v: Value, data: Vec<f64>| Tensor::new(self.value(v).shape().to_vec(), data);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, reduce_to(self.value(*a), g.clone()));
                let gb = Tensor::new(g.shape().to_vec(), g.data().iter().map(|v| sign * v).collect())?;
                acc(*b, reduce_to(self.value(*b), gb));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = Tensor::new(g.shape().to_vec(), zip_broadcast_grad(g, tb))?;
                let gb = Tensor::new(g.shape().to_vec(), zip_broadcast_grad(g, ta))?;
                acc(*a, reduce_to(ta, ga));
                acc(*b, reduce_to(tb, gb));
            }
            Op::ScalarMul(x, factor) => {
                acc(*x, like(*x, g.data().iter().map(|v| v * factor).collect())?);
            }
            Op::AddScalar(x) | Op::Reshape(x) => acc(*x, like(*x, g.data().to_vec())?),
            Op::Sum(x) => {
                let gv = g.item();
                acc(*x, Tensor::filled(self.value(*x).shape(), gv));
            }
            Op::MaskedSum(x, idx) => {
                let gv = g.item();
                let mut t = Tensor::zeros(self.value(*x).shape());
                let d = t.data_mut();
                for &i in idx {
                    d[i] += gv;
                }
                acc(*x, t);
            }
            Op::Pointwise(x, derivs) => {
                let data = g.data().iter().zip(derivs).map(|(a, b)| a * b).collect();
                acc(*x, like(*x, data)?);
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                padding,
            } => {
                let (gi, gk, gb) = self.conv2d_backward(*input, *kernel, *padding, g);
                if let Some(gi) = gi {
                    acc(*input, gi);
                }
                acc(*kernel, gk);
                acc(*bias, gb);
            }
            Op::MaxPool(x, arg) => {
                let mut t = Tensor::zeros(self.value(*x).shape());
                let d = t.data_mut();
                for (gv, &i) in g.data().iter().zip(arg) {
                    d[i] += gv;
                }
                acc(*x, t);
            }
            Op::Upsample(x, factor) => {
                let [_, _, h, w] = nchw("upsample_nearest", self.value(*x))?;
                let (oh, ow) = (h * factor, w * factor);
                let mut t = Tensor::zeros(self.value(*x).shape());
                for (dst, src) in t.data_mut().chunks_mut(h * w).zip(g.data().chunks(oh * ow)) {
                    for i in 0..oh {
                        for j in 0..ow {
                            dst[(i / factor) * w + j / factor] += src[i * ow + j];
                        }
                    }
                }
                acc(*x, t);
            }
            Op::ConcatChannels(parts) => {
                let n = g.shape()[0];
                let per_out = g.len() / n;
                let mut offset = 0;
                for &p in parts {
                    let per = self.value(p).len() / n;
                    let mut data = Vec::with_capacity(per * n);
                    for img in 0..n {
                        let start = img * per_out + offset;
                        data.extend_from_slice(&g.data()[start..start + per]);
                    }
                    offset += per;
                    acc(p, like(p, data)?);
                }
            }
            Op::SelectBatch(x, index) => {
                let mut t = Tensor::zeros(self.value(*x).shape());
                let per = g.len();
                t.data_mut()[index * per..(index + 1) * per].copy_from_slice(g.data());
                acc(*x, t);
            }
        }
        Ok(())
    }

    fn conv2d_backward(
        &self,
        input: Value,
        kernel: Value,
        padding: usize,
        g: &Tensor,
    ) -> (Option<Tensor>, Tensor, Tensor) {
        let xt = self.value(input);
        let kt = self.value(kernel);
        let (n, c, h, w) = (xt.shape()[0], xt.shape()[1], xt.shape()[2], xt.shape()[3]);
        let (f, k) = (kt.shape()[0], kt.shape()[2]);
        let geo = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel: k,
            padding,
            out_height: g.shape()[2],
            out_width: g.shape()[3],
        };
        let (q, p) = (geo.patch_len(), geo.out_len());
        let want_input = self.nodes[input.0].requires_grad;

        let mut gk = Tensor::zeros(kt.shape());
        let mut gb = Tensor::zeros(&[f]);
        let mut gi = want_input.then(|| Tensor::zeros(xt.shape()));
        let mut cols = vec![0.0; q * p];
        let mut dcols = vec![0.0; q * p];
        for img in 0..n {
            let g_img = &g.data()[img * f * p..(img + 1) * f * p];
            for (fi, plane) in g_img.chunks(p).enumerate() {
                gb.data_mut()[fi] += plane.iter().sum::<f64>();
            }
            let x_img = &xt.data()[img * c * h * w..(img + 1) * c * h * w];
            kernels::im2col(x_img, &geo, &mut cols);
            kernels::gemm(f, p, q, g_img, false, &cols, true, 1.0, gk.data_mut());
            if let Some(gi) = gi.as_mut() {
                kernels::gemm(q, f, p, kt.data(), true, g_img, false, 0.0, &mut dcols);
                kernels::col2im(&dcols, &geo, &mut gi.data_mut()[img * c * h * w..(img + 1) * c * h * w]);
            }
        }
        (gi, gk, gb)
    }
}

/// Upstream gradient times the other operand, broadcasting a scalar operand.
fn zip_broadcast_grad(g: &Tensor, other: &Tensor) -> Vec<f64> {
    if other.is_scalar() && !g.is_scalar() {
        let y = other.item();
        g.data().iter().map(|v| v * y).collect()
    } else {
        g.data().iter().zip(other.data()).map(|(a, b)| a * b).collect()
    }
}

/// Logistic function, evaluated on the branch that cannot overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
