//! Dense `f64` tensors and a dynamic reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Leaves created with
//! [`Graph::param`] receive accumulated gradients from [`Graph::backward`];
//! intermediate adjoints live only for the duration of one backward call.

use crate::error::{Error, Result};

/// Row-major dense tensor with positive extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor shape must have positive extents, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Leading extent; the batch dimension for matrices.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all trailing extents.
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "expected a scalar tensor, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Geometry of a stride-1, unpadded 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub out_channels: usize,
    pub kernel_height: usize,
    pub kernel_width: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        self.in_height + 1 - self.kernel_height
    }

    pub fn out_width(&self) -> usize {
        self.in_width + 1 - self.kernel_width
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_height * self.in_width
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.in_channels,
            self.kernel_height,
            self.kernel_width,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.in_height,
            self.in_width,
            self.out_channels,
            self.kernel_height,
            self.kernel_width,
        ];
        if dims.contains(&0)
            || self.kernel_height > self.in_height
            || self.kernel_width > self.in_width
        {
            return Err(Error::Contract(format!("invalid conv geometry {self:?}")));
        }
        Ok(())
    }
}

/// Element-wise primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Exp,
    Log,
    Square,
}

/// Binary element-wise primitives over equal shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Sum(Var),
    Mean(Var),
    AddRowBias(Var, Var),
    AddChannelBias {
        x: Var,
        bias: Var,
        channels: usize,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeometry,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Insertion-ordered tape of primitive operations.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Binary(_, a, b) | Op::AddRowBias(a, b) => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::AddChannelBias { x, bias, .. } => {
                self.requires_grad(*x) || self.requires_grad(*bias)
            }
            Op::Conv2d { input, kernel, .. } => {
                self.requires_grad(*input) || self.requires_grad(*kernel)
            }
            Op::Unary(_, a) | Op::Sum(a) | Op::Mean(a) => self.requires_grad(*a),
            Op::SoftmaxCrossEntropy { logits, .. } => self.requires_grad(*logits),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), "matmul")
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            let name = match op {
                Binary::Add => "add",
                Binary::Mul => "mul",
            };
            return Err(Error::dim(name, ta.shape(), tb.shape()));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| match op {
                Binary::Add => x + y,
                Binary::Mul => x * y,
            })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, Op::Binary(op, a, b), "binary")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if op == Unary::Log {
            if let Some(bad) = ta.data().iter().find(|v| **v <= 0.0) {
                return Err(Error::Domain(format!("log of non-positive entry {bad}")));
            }
        }
        let data = ta
            .data()
            .iter()
            .map(|&x| match op {
                Unary::Relu => x.max(0.0),
                Unary::Exp => x.exp(),
                Unary::Log => x.ln(),
                Unary::Square => x * x,
            })
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, Op::Unary(op, a), "unary")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Square, a)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.len() != tx.shape()[1] {
            return Err(Error::dim("add_row_bias", tx.shape(), tb.shape()));
        }
        let n = tx.shape()[1];
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push(value, Op::AddRowBias(x, bias), "add_row_bias")
    }

    /// `x[batch × channels·spatial] + bias[channels]`, one bias per channel plane.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var, channels: usize) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2
            || tb.len() != channels
            || channels == 0
            || tx.shape()[1] % channels != 0
        {
            return Err(Error::dim("add_channel_bias", tx.shape(), tb.shape()));
        }
        let spatial = tx.shape()[1] / channels;
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(channels * spatial) {
            for (plane, b) in row.chunks_mut(spatial).zip(tb.data()) {
                for v in plane {
                    *v += b;
                }
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        self.push(
            value,
            Op::AddChannelBias { x, bias, channels },
            "add_channel_bias",
        )
    }

    /// Valid (unpadded) stride-1 convolution over flattened NCHW rows.
    pub fn conv2d(&mut self, input: Var, kernel: Var, geom: ConvGeometry) -> Result<Var> {
        geom.validate()?;
        let (ti, tk) = (self.value(input), self.value(kernel));
        if ti.shape().len() != 2 || ti.shape()[1] != geom.input_len() {
            return Err(Error::dim("conv2d", ti.shape(), &[geom.input_len()]));
        }
        if tk.shape() != geom.kernel_shape().as_slice() {
            return Err(Error::dim("conv2d", tk.shape(), &geom.kernel_shape()));
        }
        let batch = ti.shape()[0];
        let out = conv2d_forward(ti.data(), tk.data(), batch, &geom);
        let value = Tensor::matrix(batch, geom.output_len(), out)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                geom,
            },
            "conv2d",
        )
    }

    /// Mean softmax cross-entropy of `logits[batch × classes]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.shape()[0] != labels.len() {
            return Err(Error::dim(
                "softmax_cross_entropy",
                t.shape(),
                &[labels.len()],
            ));
        }
        let classes = t.shape()[1];
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Contract(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let batch = labels.len();
        let mut probs = vec![0.0; batch * classes];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = t.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &v) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            for p in &mut probs[i * classes..(i + 1) * classes] {
                *p /= z;
            }
            total += z.ln() + max - row[y];
        }
        let loss = Tensor::scalar(total / batch as f64);
        self.push(
            loss,
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            "softmax_cross_entropy",
        )
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoint[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(up) = adjoint[i].take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {
                    let node = &mut self.nodes[i];
                    match &mut node.grad {
                        Some(g) => {
                            for (a, b) in g.data_mut().iter_mut().zip(&up) {
                                *a += b;
                            }
                        }
                        None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), up)?),
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.requires_grad(a) {
                        // dA = dC · Bᵀ
                        let mut da = vec![0.0; m * k];
                        for r in 0..m {
                            let up_row = &up[r * n..(r + 1) * n];
                            for c in 0..k {
                                let b_row = &tb.data()[c * n..(c + 1) * n];
                                da[r * k + c] = dot(up_row, b_row);
                            }
                        }
                        accumulate(&mut adjoint, a, da);
                    }
                    if self.requires_grad(b) {
                        // dB = Aᵀ · dC
                        let ta = self.value(a);
                        let mut db = vec![0.0; k * n];
                        for r in 0..m {
                            let up_row = &up[r * n..(r + 1) * n];
                            for c in 0..k {
                                let av = ta.data()[r * k + c];
                                if av != 0.0 {
                                    for (d, u) in db[c * n..(c + 1) * n].iter_mut().zip(up_row) {
                                        *d += av * u;
                                    }
                                }
                            }
                        }
                        accumulate(&mut adjoint, b, db);
                    }
                }
                Op::Binary(kind, a, b) => {
                    let (da, db) = match kind {
                        Binary::Add => (up.clone(), up),
                        Binary::Mul => {
                            let (ta, tb) = (self.value(a).data(), self.value(b).data());
                            let da = up.iter().zip(tb).map(|(u, y)| u * y).collect();
                            let db = up.iter().zip(ta).map(|(u, x)| u * x).collect();
                            (da, db)
                        }
                    };
                    if self.requires_grad(a) {
                        accumulate(&mut adjoint, a, da);
                    }
                    if self.requires_grad(b) {
                        accumulate(&mut adjoint, b, db);
                    }
                }
                Op::Unary(kind, a) => {
                    let x = self.value(a).data();
                    let y = self.nodes[i].value.data();
                    let da = up
                        .iter()
                        .zip(x.iter().zip(y))
                        .map(|(u, (&xv, &yv))| match kind {
                            Unary::Relu => {
                                if xv > 0.0 {
                                    *u
                                } else {
                                    0.0
                                }
                            }
                            Unary::Exp => u * yv,
                            Unary::Log => u / xv,
                            Unary::Square => 2.0 * xv * u,
                        })
                        .collect();
                    accumulate(&mut adjoint, a, da);
                }
                Op::Sum(a) => {
                    let n = self.value(a).len();
                    accumulate(&mut adjoint, a, vec![up[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.value(a).len();
                    accumulate(&mut adjoint, a, vec![up[0] / n as f64; n]);
                }
                Op::AddRowBias(x, bias) => {
                    let n = self.value(bias).len();
                    if self.requires_grad(bias) {
                        let mut db = vec![0.0; n];
                        for row in up.chunks(n) {
                            for (d, u) in db.iter_mut().zip(row) {
                                *d += u;
                            }
                        }
                        accumulate(&mut adjoint, bias, db);
                    }
                    if self.requires_grad(x) {
                        accumulate(&mut adjoint, x, up);
                    }
                }
                Op::AddChannelBias { x, bias, channels } => {
                    if self.requires_grad(bias) {
                        let width = self.value(x).cols();
                        let spatial = width / channels;
                        let mut db = vec![0.0; channels];
                        for row in up.chunks(width) {
                            for (d, plane) in db.iter_mut().zip(row.chunks(spatial)) {
                                *d += plane.iter().sum::<f64>();
                            }
                        }
                        accumulate(&mut adjoint, bias, db);
                    }
                    if self.requires_grad(x) {
                        accumulate(&mut adjoint, x, up);
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    geom,
                } => {
                    let ti = self.value(input);
                    let tk = self.value(kernel);
                    let batch = ti.shape()[0];
                    let (d_in, d_k) = conv2d_backward(
                        ti.data(),
                        tk.data(),
                        &up,
                        batch,
                        &geom,
                        self.requires_grad(input),
                        self.requires_grad(kernel),
                    );
                    if let Some(d) = d_in {
                        accumulate(&mut adjoint, input, d);
                    }
                    if let Some(d) = d_k {
                        accumulate(&mut adjoint, kernel, d);
                    }
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let batch = labels.len();
                    let classes = probs.len() / batch;
                    let scale = up[0] / batch as f64;
                    let mut d = probs;
                    for (r, &y) in labels.iter().enumerate() {
                        d[r * classes + y] -= 1.0;
                    }
                    for v in &mut d {
                        *v *= scale;
                    }
                    accumulate(&mut adjoint, logits, d);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(adjoint: &mut [Option<Vec<f64>>], v: Var, delta: Vec<f64>) {
    match &mut adjoint[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(&delta) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let out_row = &mut out[r * n..(r + 1) * n];
        for c in 0..k {
            let av = a[r * k + c];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out_row.iter_mut().zip(&b[c * n..(c + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn conv2d_forward(input: &[f64], kernel: &[f64], batch: usize, g: &ConvGeometry) -> Vec<f64> {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (ih, iw) = (g.in_height, g.in_width);
    let (kh, kw) = (g.kernel_height, g.kernel_width);
    let mut out = vec![0.0; batch * g.output_len()];
    for b in 0..batch {
        let x = &input[b * g.input_len()..(b + 1) * g.input_len()];
        let y = &mut out[b * g.output_len()..(b + 1) * g.output_len()];
        for co in 0..g.out_channels {
            for ci in 0..g.in_channels {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let w = kernel[((co * g.in_channels + ci) * kh + ky) * kw + kx];
                        if w == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let xrow = &x[(ci * ih + oy + ky) * iw + kx..];
                            let yrow = &mut y[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                            for (ox, yv) in yrow.iter_mut().enumerate() {
                                *yv += w * xrow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    up: &[f64],
    batch: usize,
    g: &ConvGeometry,
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (ih, iw) = (g.in_height, g.in_width);
    let (kh, kw) = (g.kernel_height, g.kernel_width);
    let mut d_in = want_input.then(|| vec![0.0; input.len()]);
    let mut d_k = want_kernel.then(|| vec![0.0; kernel.len()]);
    for b in 0..batch {
        let x = &input[b * g.input_len()..(b + 1) * g.input_len()];
        let dy = &up[b * g.output_len()..(b + 1) * g.output_len()];
        for co in 0..g.out_channels {
            for ci in 0..g.in_channels {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kidx = ((co * g.in_channels + ci) * kh + ky) * kw + kx;
                        let w = kernel[kidx];
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let base = (ci * ih + oy + ky) * iw + kx;
                            let dyrow = &dy[(co * oh + oy) * ow..(co * oh + oy + 1) * ow];
                            for (ox, &dv) in dyrow.iter().enumerate() {
                                acc += dv * x[base + ox];
                                if let Some(di) = d_in.as_mut() {
                                    di[b * g.input_len() + base + ox] += dv * w;
                                }
                            }
                        }
                        if let Some(dk) = d_k.as_mut() {
                            dk[kidx] += acc;
                        }
                    }
                }
            }
        }
    }
    (d_in, d_k)
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_difference_gradient<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        *g = (plus - minus) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}
