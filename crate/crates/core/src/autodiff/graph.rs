use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, Window};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    WeightedSum(Var, Vec<T>),
    Relu(Var),
    Sigmoid(Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        win: Window,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        win: Window,
    },
    MaxPool2x2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Concat(Var, Var),
    SliceChannels {
        input: Var,
        start: usize,
    },
    GlobalAvgPool(Var),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Focal {
        probs: Var,
        labels: Vec<T>,
        gamma: T,
    },
    DiceLoss {
        probs: Var,
        target: Vec<T>,
        channels: usize,
        epsilon: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Probability clamp applied before every logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// Dynamically built computation graph for reverse-mode differentiation.
///
/// A graph is built for one forward pass, differentiated once with
/// [`Graph::backward`], read, and dropped. Nodes are appended in evaluation
/// order, so reverse index order is a valid topological order.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
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

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape mirrors value"))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn nchw(&self, op: &str, v: Var) -> Result<[usize; 4]> {
        match *self.shape(v) {
            [n, c, h, w] => Ok([n, c, h, w]),
            ref s => Err(Error::dim(op, format!("expected [N,C,H,W], got {s:?}"))),
        }
    }

    // ----- elementwise and reductions -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / T::of(t.len() as f64));
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    /// Scalar `sum_i a_i * weights_i`, a fixed linear functional of `a`.
    pub fn weighted_sum(&mut self, a: Var, weights: &Tensor<T>) -> Result<Var> {
        if weights.shape() != self.shape(a) {
            return Err(Error::dim(
                "weighted_sum",
                format!("{:?} vs {:?}", self.shape(a), weights.shape()),
            ));
        }
        let value = Tensor::scalar(self.value(a).dot(weights));
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::WeightedSum(a, weights.data().to_vec()), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    // ----- convolution family -----

    /// Zero-padded 2-D cross-correlation.
    ///
    /// `input` is `[N,Cin,H,W]`, `kernel` is `[Cout,Cin,kh,kw]`, `bias` is `[Cout]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let [n, cin, h, w] = self.nchw("conv2d", input)?;
        let [cout, kcin, kh, kw] = match *self.shape(kernel) {
            [a, b, c, d] => [a, b, c, d],
            ref s => return Err(Error::dim("conv2d", format!("kernel must be rank 4, got {s:?}"))),
        };
        if kcin != cin {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "input {:?} has {cin} channels but kernel {:?} expects {kcin}",
                    self.shape(input),
                    self.shape(kernel)
                ),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::usage("conv2d stride must be at least 1"));
        }
        if kh > h + 2 * padding.0 || kw > w + 2 * padding.1 {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {kh}x{kw} exceeds padded input {h}x{w} (padding {padding:?})"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::dim(
                    "conv2d",
                    format!("bias {:?} does not match {cout} output channels", self.shape(b)),
                ));
            }
        }
        let win = Window {
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: padding.0,
            pw: padding.1,
        };
        let (oh, ow) = win.out_dims(h, w);
        let plane = oh * ow;
        let ckk = cin * kh * kw;
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let mut out = vec![T::zero(); n * cout * plane];
        let mut cols = vec![T::zero(); ckk * plane];
        for s in 0..n {
            im2col(&x[s * cin * h * w..(s + 1) * cin * h * w], cin, h, w, win, &mut cols);
            let dst = &mut out[s * cout * plane..(s + 1) * cout * plane];
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for (co, chunk) in dst.chunks_mut(plane).enumerate() {
                    chunk.iter_mut().for_each(|v| *v = bv[co]);
                }
            }
            gemm_nn(cout, ckk, plane, k, &cols, dst);
        }
        let value = Tensor::new(&[n, cout, oh, ow], out)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.any_grad(&deps);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                win,
            },
            rg,
        ))
    }

    /// Transposed convolution without padding: the adjoint of [`Graph::conv2d`]
    /// with respect to its input. `kernel` is `[Cin,Cout,kh,kw]`.
    pub fn conv2d_transpose(&mut self, input: Var, kernel: Var, stride: (usize, usize)) -> Result<Var> {
        let [n, cin, h, w] = self.nchw("conv2d_transpose", input)?;
        let [kcin, cout, kh, kw] = match *self.shape(kernel) {
            [a, b, c, d] => [a, b, c, d],
            ref s => {
                return Err(Error::dim(
                    "conv2d_transpose",
                    format!("kernel must be rank 4, got {s:?}"),
                ))
            }
        };
        if kcin != cin {
            return Err(Error::dim(
                "conv2d_transpose",
                format!(
                    "input {:?} has {cin} channels but kernel {:?} expects {kcin}",
                    self.shape(input),
                    self.shape(kernel)
                ),
            ));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::usage("conv2d_transpose stride must be at least 1"));
        }
        let win = Window {
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: 0,
            pw: 0,
        };
        let oh = (h - 1) * stride.0 + kh;
        let ow = (w - 1) * stride.1 + kw;
        let ckk = cout * kh * kw;
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let mut out = vec![T::zero(); n * cout * oh * ow];
        let mut cols = vec![T::zero(); ckk * h * w];
        for s in 0..n {
            cols.iter_mut().for_each(|v| *v = T::zero());
            gemm_tn(ckk, cin, h * w, k, &x[s * cin * h * w..(s + 1) * cin * h * w], &mut cols);
            col2im(&cols, cout, oh, ow, win, &mut out[s * cout * oh * ow..(s + 1) * cout * oh * ow]);
        }
        let value = Tensor::new(&[n, cout, oh, ow], out)?;
        let rg = self.any_grad(&[input, kernel]);
        Ok(self.push(value, Op::ConvTranspose2d { input, kernel, win }, rg))
    }

    /// 2x2 max-pool with stride 2. Ties go to the first element in row-major
    /// window order.
    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw("maxpool2d", input)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::dim(
                "maxpool2d",
                format!("spatial dims must be even, got {h}x{w}"),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + (2 * oy) * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::MaxPool2x2 { input, argmax }, rg))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.nchw("concat_channels", a)?;
        let [nb, cb, hb, wb] = self.nchw("concat_channels", b)?;
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(Error::dim(
                "concat_channels",
                format!("{:?} vs {:?} differ outside the channel axis", self.shape(a), self.shape(b)),
            ));
        }
        let plane = ha * wa;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(na * (ca + cb) * plane);
        for s in 0..na {
            out.extend_from_slice(&av[s * ca * plane..(s + 1) * ca * plane]);
            out.extend_from_slice(&bv[s * cb * plane..(s + 1) * cb * plane]);
        }
        let value = Tensor::new(&[na, ca + cb, ha, wa], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Channels `start..start+len` of an `[N,C,H,W]` tensor.
    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.nchw("slice_channels", input)?;
        if len == 0 || start + len > c {
            return Err(Error::dim(
                "slice_channels",
                format!("range {start}..{} outside {c} channels", start + len),
            ));
        }
        let plane = h * w;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(n * len * plane);
        for s in 0..n {
            let from = (s * c + start) * plane;
            out.extend_from_slice(&x[from..from + len * plane]);
        }
        let value = Tensor::new(&[n, len, h, w], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::SliceChannels { input, start }, rg))
    }

    /// `[N,C,H,W]` to `[N,C]` channel means.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let [n, c, h, w] = self.nchw("global_avg_pool", input)?;
        let plane = h * w;
        let inv = T::one() / T::of(plane as f64);
        let x = self.value(input).data();
        let out = x.chunks(plane).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let value = Tensor::new(&[n, c], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::GlobalAvgPool(input), rg))
    }

    /// `x[N,F] * weight[F,G] + bias[G]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, f) = match *self.shape(input) {
            [n, f] => (n, f),
            ref s => return Err(Error::dim("dense", format!("input must be [N,F], got {s:?}"))),
        };
        let g = match *self.shape(weight) {
            [wf, g] if wf == f => g,
            ref s => {
                return Err(Error::dim(
                    "dense",
                    format!("weight {s:?} incompatible with input [{n}, {f}]"),
                ))
            }
        };
        if self.shape(bias) != [g] {
            return Err(Error::dim(
                "dense",
                format!("bias {:?} does not match {g} outputs", self.shape(bias)),
            ));
        }
        let bv = self.value(bias).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| bv.iter().copied()).collect();
        gemm_nn(n, f, g, self.value(input).data(), self.value(weight).data(), &mut out);
        let value = Tensor::new(&[n, g], out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(value, Op::Dense { input, weight, bias }, rg))
    }

    /// Inverted dropout. Identity in eval mode or when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::usage(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let x = self.value(input);
        let mask: Vec<T> = (0..x.len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(x.shape(), data)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(value, Op::Dropout { input, mask }, rg))
    }

    // ----- fused losses -----

    /// Mean focal loss `-(1-p_t)^gamma ln(p_t)` over all elements.
    pub fn focal_loss(&mut self, probs: Var, labels: &Tensor<T>, gamma: T) -> Result<Var> {
        if labels.shape() != self.shape(probs) {
            return Err(Error::dim(
                "focal_loss",
                format!("probs {:?} vs labels {:?}", self.shape(probs), labels.shape()),
            ));
        }
        if gamma < T::zero() {
            return Err(Error::usage("focal gamma must be non-negative"));
        }
        let p = self.value(probs).data();
        let total: T = p
            .iter()
            .zip(labels.data())
            .map(|(&p, &y)| focal_term(p, y, gamma))
            .sum();
        let value = Tensor::scalar(total / T::of(p.len() as f64));
        let rg = self.any_grad(&[probs]);
        Ok(self.push(
            value,
            Op::Focal {
                probs,
                labels: labels.data().to_vec(),
                gamma,
            },
            rg,
        ))
    }

    /// `1 - mean over (N,C) of the epsilon-smoothed dice coefficient`.
    pub fn dice_loss(&mut self, probs: Var, target: &Tensor<T>, epsilon: T) -> Result<Var> {
        let [n, c, h, w] = self.nchw("dice_loss", probs)?;
        if target.shape() != self.shape(probs) {
            return Err(Error::dim(
                "dice_loss",
                format!("probs {:?} vs target {:?}", self.shape(probs), target.shape()),
            ));
        }
        let plane = h * w;
        let p = self.value(probs).data();
        let mut acc = T::zero();
        for (rp, yp) in p.chunks(plane).zip(target.data().chunks(plane)) {
            acc = acc + dice_coefficient(rp, yp, epsilon);
        }
        let value = Tensor::scalar(T::one() - acc / T::of((n * c) as f64));
        let rg = self.any_grad(&[probs]);
        Ok(self.push(
            value,
            Op::DiceLoss {
                probs,
                target: target.data().to_vec(),
                channels: n * c,
                epsilon,
            },
            rg,
        ))
    }

    // ----- reverse pass -----

    /// Discrete choices of the forward pass: the sign of every ReLU input and
    /// the winner of every max-pool window. Two evaluations with equal
    /// patterns lie on the same smooth piece of the function.
    pub fn branch_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => out.extend(self.value(*a).data().iter().map(|&x| (x > T::zero()) as usize)),
                Op::MaxPool2x2 { argmax, .. } => out.extend_from_slice(argmax),
                _ => {}
            }
        }
        out
    }

    /// Populate gradients of `root` with respect to every node that requires them.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::usage(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Err(Error::usage("backward root does not depend on any trainable leaf"));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root.0].grad = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g);
            }
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut [T], &Self)) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let mut buf = self.nodes[v.0]
            .grad
            .take()
            .unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(&mut buf, self);
        self.nodes[v.0].grad = Some(buf);
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        // Temporarily move the op out so the closures can borrow `self`.
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, |buf, _| add_into(buf, g));
                self.accumulate(*b, |buf, _| add_into(buf, g));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |buf, gr| {
                    for ((d, &gv), &bv) in buf.iter_mut().zip(g).zip(gr.value(b).data()) {
                        *d = *d + gv * bv;
                    }
                });
                self.accumulate(b, |buf, gr| {
                    for ((d, &gv), &av) in buf.iter_mut().zip(g).zip(gr.value(a).data()) {
                        *d = *d + gv * av;
                    }
                });
            }
            Op::Scale(a, f) => {
                let f = *f;
                self.accumulate(*a, |buf, _| {
                    for (d, &gv) in buf.iter_mut().zip(g) {
                        *d = *d + gv * f;
                    }
                });
            }
            Op::Sum(a) => {
                self.accumulate(*a, |buf, _| buf.iter_mut().for_each(|d| *d = *d + g[0]));
            }
            Op::Mean(a) => {
                self.accumulate(*a, |buf, _| {
                    let s = g[0] / T::of(buf.len() as f64);
                    buf.iter_mut().for_each(|d| *d = *d + s);
                });
            }
            Op::WeightedSum(a, w) => {
                self.accumulate(*a, |buf, _| {
                    for (d, &wv) in buf.iter_mut().zip(w) {
                        *d = *d + g[0] * wv;
                    }
                });
            }
            Op::Relu(a) => {
                let a = *a;
                self.accumulate(a, |buf, gr| {
                    for ((d, &gv), &x) in buf.iter_mut().zip(g).zip(gr.value(a).data()) {
                        if x > T::zero() {
                            *d = *d + gv;
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let y: Vec<T> = self.nodes[i].value.data().to_vec();
                self.accumulate(*a, |buf, _| {
                    for ((d, &gv), &s) in buf.iter_mut().zip(g).zip(&y) {
                        *d = *d + gv * s * (T::one() - s);
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                win,
            } => self.conv2d_backward(*input, *kernel, *bias, *win, g),
            Op::ConvTranspose2d { input, kernel, win } => {
                self.conv_transpose_backward(*input, *kernel, *win, g, self.nodes[i].value.shape().to_vec())
            }
            Op::MaxPool2x2 { input, argmax } => {
                self.accumulate(*input, |buf, _| {
                    for (&gv, &idx) in g.iter().zip(argmax) {
                        buf[idx] = buf[idx] + gv;
                    }
                });
            }
            Op::Concat(a, b) => {
                let (a, b) = (*a, *b);
                let [n, c, h, w] = to4(self.nodes[i].value.shape());
                let ca = self.shape(a)[1];
                let plane = h * w;
                self.accumulate(a, |buf, _| {
                    for s in 0..n {
                        let src = &g[s * c * plane..(s * c + ca) * plane];
                        add_into(&mut buf[s * ca * plane..(s + 1) * ca * plane], src);
                    }
                });
                let cb = c - ca;
                self.accumulate(b, |buf, _| {
                    for s in 0..n {
                        let src = &g[(s * c + ca) * plane..(s + 1) * c * plane];
                        add_into(&mut buf[s * cb * plane..(s + 1) * cb * plane], src);
                    }
                });
            }
            Op::SliceChannels { input, start } => {
                let input = *input;
                let [n, len, h, w] = to4(self.nodes[i].value.shape());
                let c = self.shape(input)[1];
                let plane = h * w;
                let start = *start;
                self.accumulate(input, |buf, _| {
                    for s in 0..n {
                        let from = (s * c + start) * plane;
                        add_into(&mut buf[from..from + len * plane], &g[s * len * plane..(s + 1) * len * plane]);
                    }
                });
            }
            Op::GlobalAvgPool(a) => {
                let a = *a;
                let [_, _, h, w] = to4(self.shape(a));
                let plane = h * w;
                let inv = T::one() / T::of(plane as f64);
                self.accumulate(a, |buf, _| {
                    for (chunk, &gv) in buf.chunks_mut(plane).zip(g) {
                        let s = gv * inv;
                        chunk.iter_mut().for_each(|d| *d = *d + s);
                    }
                });
            }
            Op::Dense { input, weight, bias } => {
                let (input, weight, bias) = (*input, *weight, *bias);
                let (n, f) = (self.shape(input)[0], self.shape(input)[1]);
                let gdim = self.shape(weight)[1];
                self.accumulate(input, |buf, gr| gemm_nt(n, gdim, f, g, gr.value(weight).data(), buf));
                self.accumulate(weight, |buf, gr| gemm_tn(f, n, gdim, gr.value(input).data(), g, buf));
                self.accumulate(bias, |buf, _| {
                    for row in g.chunks(gdim) {
                        add_into(buf, row);
                    }
                });
            }
            Op::Dropout { input, mask } => {
                self.accumulate(*input, |buf, _| {
                    for ((d, &gv), &m) in buf.iter_mut().zip(g).zip(mask) {
                        *d = *d + gv * m;
                    }
                });
            }
            Op::Focal { probs, labels, gamma } => {
                let probs = *probs;
                let gamma = *gamma;
                self.accumulate(probs, |buf, gr| {
                    let p = gr.value(probs).data();
                    let scale = g[0] / T::of(p.len() as f64);
                    for ((d, &pv), &y) in buf.iter_mut().zip(p).zip(labels) {
                        *d = *d + scale * focal_grad(pv, y, gamma);
                    }
                });
            }
            Op::DiceLoss {
                probs,
                target,
                channels,
                epsilon,
            } => {
                let probs = *probs;
                let eps = *epsilon;
                let channels = *channels;
                self.accumulate(probs, |buf, gr| {
                    let p = gr.value(probs).data();
                    let plane = p.len() / channels;
                    let scale = -g[0] / T::of(channels as f64);
                    for ((bp, rp), yp) in buf.chunks_mut(plane).zip(p.chunks(plane)).zip(target.chunks(plane)) {
                        let mut inter = T::zero();
                        let mut sr = T::zero();
                        let mut sy = T::zero();
                        for (&r, &y) in rp.iter().zip(yp) {
                            inter = inter + r * y;
                            sr = sr + r;
                            sy = sy + y;
                        }
                        let num = T::of(2.0) * inter + eps;
                        let den = sr + sy + eps;
                        if den == T::zero() {
                            continue;
                        }
                        let den2 = den * den;
                        for (d, &y) in bp.iter_mut().zip(yp) {
                            let dd = (T::of(2.0) * y * den - num) / den2;
                            *d = *d + scale * dd;
                        }
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }

    fn conv2d_backward(&mut self, input: Var, kernel: Var, bias: Option<Var>, win: Window, g: &[T]) {
        let [n, cin, h, w] = to4(self.shape(input));
        let cout = self.shape(kernel)[0];
        let (oh, ow) = win.out_dims(h, w);
        let plane = oh * ow;
        let ckk = cin * win.kh * win.kw;
        let img = cin * h * w;
        if let Some(b) = bias {
            self.accumulate(b, |buf, _| {
                for s in 0..n {
                    for (co, chunk) in g[s * cout * plane..(s + 1) * cout * plane].chunks(plane).enumerate() {
                        buf[co] = buf[co] + chunk.iter().copied().sum::<T>();
                    }
                }
            });
        }
        let mut cols = vec![T::zero(); ckk * plane];
        if self.requires_grad(kernel) {
            let mut dk = vec![T::zero(); cout * ckk];
            let x = self.value(input).data();
            for s in 0..n {
                im2col(&x[s * img..(s + 1) * img], cin, h, w, win, &mut cols);
                gemm_nt(cout, plane, ckk, &g[s * cout * plane..(s + 1) * cout * plane], &cols, &mut dk);
            }
            self.accumulate(kernel, |buf, _| add_into(buf, &dk));
        }
        if self.requires_grad(input) {
            let k = self.value(kernel).data().to_vec();
            self.accumulate(input, |buf, _| {
                for s in 0..n {
                    cols.iter_mut().for_each(|v| *v = T::zero());
                    gemm_tn(ckk, cout, plane, &k, &g[s * cout * plane..(s + 1) * cout * plane], &mut cols);
                    col2im(&cols, cin, h, w, win, &mut buf[s * img..(s + 1) * img]);
                }
            });
        }
    }

    fn conv_transpose_backward(&mut self, input: Var, kernel: Var, win: Window, g: &[T], out_shape: Vec<usize>) {
        let [n, cin, h, w] = to4(self.shape(input));
        let [_, cout, oh, ow] = to4(&out_shape);
        let ckk = cout * win.kh * win.kw;
        let out_img = cout * oh * ow;
        let in_img = cin * h * w;
        let mut cols = vec![T::zero(); ckk * h * w];
        let need_x = self.requires_grad(input);
        let need_k = self.requires_grad(kernel);
        let mut dx = if need_x { vec![T::zero(); n * in_img] } else { Vec::new() };
        let mut dk = if need_k { vec![T::zero(); cin * ckk] } else { Vec::new() };
        {
            let x = self.value(input).data();
            let k = self.value(kernel).data();
            for s in 0..n {
                im2col(&g[s * out_img..(s + 1) * out_img], cout, oh, ow, win, &mut cols);
                if need_x {
                    gemm_nn(cin, ckk, h * w, k, &cols, &mut dx[s * in_img..(s + 1) * in_img]);
                }
                if need_k {
                    gemm_nt(cin, h * w, ckk, &x[s * in_img..(s + 1) * in_img], &cols, &mut dk);
                }
            }
        }
        if need_x {
            self.accumulate(input, |buf, _| add_into(buf, &dx));
        }
        if need_k {
            self.accumulate(kernel, |buf, _| add_into(buf, &dk));
        }
    }
}

fn to4(shape: &[usize]) -> [usize; 4] {
    [shape[0], shape[1], shape[2], shape[3]]
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).m_exp())
    } else {
        let e = x.m_exp();
        e / (T::one() + e)
    }
}

#[inline]
fn clamp_prob<T: Scalar>(p: T) -> T {
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    if p < lo {
        lo
    } else if p > hi {
        hi
    } else {
        p
    }
}

/// Focal term for one element, natural log, probability clamped first.
pub(crate) fn focal_term<T: Scalar>(p: T, y: T, gamma: T) -> T {
    let p = clamp_prob(p);
    let pt = if y > T::of(0.5) { p } else { T::one() - p };
    let modulating = if gamma == T::zero() {
        T::one()
    } else {
        (T::one() - pt).m_powf(gamma)
    };
    -modulating * pt.m_ln()
}

/// d focal_term / d p; zero where the clamp is active.
fn focal_grad<T: Scalar>(p: T, y: T, gamma: T) -> T {
    let lo = T::of(PROB_CLAMP);
    if p < lo || p > T::one() - lo {
        return T::zero();
    }
    let positive = y > T::of(0.5);
    let pt = if positive { p } else { T::one() - p };
    let q = T::one() - pt;
    let d_pt = if gamma == T::zero() {
        -T::one() / pt
    } else {
        gamma * q.m_powf(gamma - T::one()) * pt.m_ln() - q.m_powf(gamma) / pt
    };
    if positive {
        d_pt
    } else {
        -d_pt
    }
}

/// `(2 sum r*y + eps) / (sum r + sum y + eps)`; `0/0` is reported as 1.
pub(crate) fn dice_coefficient<T: Scalar>(r: &[T], y: &[T], eps: T) -> T {
    let mut inter = T::zero();
    let mut sr = T::zero();
    let mut sy = T::zero();
    for (&a, &b) in r.iter().zip(y) {
        inter = inter + a * b;
        sr = sr + a;
        sy = sy + b;
    }
    let den = sr + sy + eps;
    if den == T::zero() {
        return T::one();
    }
    (T::of(2.0) * inter + eps) / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let k = g.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = g.constant(Tensor::zeros(&[1]));
        let y = g.conv2d(x, k, Some(b), (1, 1), (0, 0)).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).item(), 9.0);
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..20).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = g.constant(t(&[1, 1, 4, 5], &data));
        let k = g.constant(Tensor::ones(&[1, 1, 1, 1]));
        let y = g.conv2d(x, k, None, (1, 1), (0, 0)).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn conv_output_size_formula() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[2, 3, 9, 7]));
        let k = g.constant(Tensor::ones(&[5, 3, 3, 2]));
        let y = g.conv2d(x, k, None, (2, 3), (1, 1)).unwrap();
        // (9+2-3)/2+1 = 5, (7+2-2)/3+1 = 3
        assert_eq!(g.shape(y), &[2, 5, 5, 3]);
    }

    #[test]
    fn conv_channel_mismatch_reports_both_shapes() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 2, 4, 4]));
        let k = g.constant(Tensor::ones(&[1, 3, 3, 3]));
        let err = g.conv2d(x, k, None, (1, 1), (0, 0)).unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("[1, 2, 4, 4]") && msg.contains("[1, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn transpose_broadcasts_single_pixel() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 1, 1, 1]));
        let k = g.constant(Tensor::ones(&[1, 1, 2, 2]));
        let y = g.conv2d_transpose(x, k, (2, 2)).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[1.0; 4]);

        let x = g.constant(Tensor::ones(&[1, 1, 4, 4]));
        let y = g.conv2d_transpose(x, k, (2, 2)).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 8, 8]);
    }

    #[test]
    fn transpose_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 2, 2, 2]));
        let k = g.constant(Tensor::ones(&[3, 1, 2, 2]));
        assert!(matches!(g.conv2d_transpose(x, k, (2, 2)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn maxpool_single_window_and_ties() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2x2(x).unwrap();
        assert_eq!(g.value(y).item(), 4.0);

        let c = g.param(Tensor::full(&[1, 1, 4, 4], 0.7));
        let p = g.maxpool2x2(c).unwrap();
        assert_eq!(g.value(p).data(), &[0.7; 4]);
        let s = g.sum(p);
        g.backward(s).unwrap();
        let grad = g.grad(c).unwrap();
        let expect = [
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(grad.data(), &expect);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1, 1, 3, 4]));
        assert!(matches!(g.maxpool2x2(x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn small_elementwise_facts() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[1]));
        let s = g.sigmoid(z);
        assert_eq!(g.value(s).item(), 0.5);

        let c = g.constant(Tensor::full(&[2, 3, 4, 4], 1.25));
        let p = g.global_avg_pool(c).unwrap();
        assert_eq!(g.shape(p), &[2, 3]);
        assert!(g.value(p).data().iter().all(|&v| v == 1.25));

        let mut rng = stream_rng(1, 1);
        let x = g.constant(t(&[3], &[1.0, -2.0, 3.0]));
        let d = g.dropout(x, 0.0, true, &mut rng).unwrap();
        assert_eq!(g.value(d), g.value(x));
    }

    #[test]
    fn concat_mismatch_is_dimension_error() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::ones(&[1, 2, 4, 4]));
        let b = g.constant(Tensor::ones(&[1, 2, 4, 2]));
        assert!(matches!(g.concat_channels(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn backward_of_sum_and_square() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_needs_scalar_root() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.relu(x);
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn dropout_is_inverted_and_seeded() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::ones(&[1000]));
        let a = g.dropout(x, 0.25, true, &mut stream_rng(5, 0)).unwrap();
        let b = g.dropout(x, 0.25, true, &mut stream_rng(5, 0)).unwrap();
        assert_eq!(g.value(a), g.value(b));
        let vals = g.value(a).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-15));
        let dropped = vals.iter().filter(|&&v| v == 0.0).count();
        assert!((180..320).contains(&dropped), "{dropped}");
        let e = g.dropout(x, 0.25, false, &mut stream_rng(5, 0)).unwrap();
        assert_eq!(e, x);
    }
}
