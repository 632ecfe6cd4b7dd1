//! Minimal dense tensor with reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks the record once in reverse and fills gradients for the leaves that
//! requested them. Graphs are built per training step and dropped afterwards.
//!
//! Everything is double precision. There is no broadcasting beyond
//! scalar-with-tensor ops ([`Tape::affine`]); shapes must match exactly and
//! mismatches panic with both shapes in the message, as dense tensor
//! libraries usually do.

mod kernels;

pub use kernels::conv_out_len;

use kernels::{col2im, im2col, mm_nn, mm_nt, mm_tn};

/// Dense multi-dimensional array. A scalar has the empty shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Self {
        let shape = shape.into();
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Self { shape, data }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    /// a * x + b; only the slope matters to the backward pass.
    Affine(Var, f64),
    PowScalar(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Column(Var, usize),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
        /// im2col of the padded input, kept for the backward pass.
        cols: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`]. Only leaves
/// created with `requires_grad = true` retain their gradient.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Topologically ordered record of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable leaf; its gradient is retained by `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input (targets, masks, grid coordinates...).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn binary_elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(
            va.shape(),
            vb.shape(),
            "shape mismatch in {name}: {:?} vs {:?}",
            va.shape(),
            vb.shape()
        );
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(value, op, rg)
    }

    fn unary_elementwise(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let vx = &self.nodes[x.0].value;
        let value = Tensor::new(vx.shape().to_vec(), vx.data().iter().map(|&v| f(v)).collect());
        let rg = self.needs_grad(x);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, "minimum", f64::min, Op::Minimum(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary_elementwise(a, b, "maximum", f64::max, Op::Maximum(a, b))
    }

    /// `a * x + b` elementwise; covers negation, scaling and scalar shifts.
    pub fn affine(&mut self, x: Var, a: f64, b: f64) -> Var {
        self.unary_elementwise(x, |v| a * v + b, Op::Affine(x, a))
    }

    pub fn scale(&mut self, x: Var, a: f64) -> Var {
        self.affine(x, a, 0.0)
    }

    /// `x^c` elementwise. Callers keep the base in the op's domain
    /// (positive for fractional exponents); `0^0 = 1`.
    pub fn pow_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary_elementwise(x, |v| v.powf(c), Op::PowScalar(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary_elementwise(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary_elementwise(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary_elementwise(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary_elementwise(x, f64::ln, Op::Log(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary_elementwise(x, f64::abs, Op::Abs(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary_elementwise(x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        let rg = self.needs_grad(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        assert!(!v.is_empty(), "mean of an empty tensor");
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.needs_grad(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// [m,k] @ [k,n] -> [m,n].
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (va.shape(), vb.shape());
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "shape mismatch in matmul: {sa:?} vs {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm_nn(va.data(), vb.data(), m, k, n, &mut out);
        let rg = self.needs_grad(a) || self.needs_grad(b);
        self.push(Tensor::new(vec![m, n], out), Op::Matmul(a, b), rg)
    }

    /// Transpose of a 2D tensor.
    pub fn transpose(&mut self, x: Var) -> Var {
        let v = &self.nodes[x.0].value;
        let s = v.shape();
        assert_eq!(s.len(), 2, "transpose expects a 2D tensor, got {s:?}");
        let (r, c) = (s[0], s[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v.data()[i * c + j];
            }
        }
        let rg = self.needs_grad(x);
        self.push(Tensor::new(vec![c, r], out), Op::Transpose(x), rg)
    }

    /// Same data, new shape (element counts must agree).
    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        let v = &self.nodes[x.0].value;
        assert_eq!(
            v.len(),
            shape.iter().product::<usize>(),
            "shape mismatch in reshape: {:?} -> {:?}",
            v.shape(),
            shape
        );
        let value = Tensor::new(shape, v.data().to_vec());
        let rg = self.needs_grad(x);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Concatenates 2D tensors along rows; all column counts must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.nodes[parts[0].0].value.shape()[1];
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.nodes[p.0].value;
            assert!(
                v.shape().len() == 2 && v.shape()[1] == cols,
                "shape mismatch in concat_rows: {:?} vs [_, {cols}]",
                v.shape()
            );
            rows += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|&p| self.needs_grad(p));
        self.push(
            Tensor::new(vec![rows, cols], data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    /// Gathers rows of a 2D tensor; duplicate indices are allowed.
    pub fn select_rows(&mut self, x: Var, indices: &[usize]) -> Var {
        let v = &self.nodes[x.0].value;
        let s = v.shape();
        assert_eq!(s.len(), 2, "select_rows expects a 2D tensor, got {s:?}");
        let cols = s[1];
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            assert!(i < s[0], "row index {i} out of bounds for {s:?}");
            data.extend_from_slice(&v.data()[i * cols..(i + 1) * cols]);
        }
        let rg = self.needs_grad(x);
        self.push(
            Tensor::new(vec![indices.len(), cols], data),
            Op::SelectRows(x, indices.to_vec()),
            rg,
        )
    }

    /// Extracts column `c` of a 2D tensor as a [rows] vector.
    pub fn column(&mut self, x: Var, c: usize) -> Var {
        let v = &self.nodes[x.0].value;
        let s = v.shape();
        assert!(
            s.len() == 2 && c < s[1],
            "column {c} out of bounds for {s:?}"
        );
        let data: Vec<f64> = (0..s[0]).map(|r| v.data()[r * s[1] + c]).collect();
        let rg = self.needs_grad(x);
        self.push(Tensor::new(vec![s[0]], data), Op::Column(x, c), rg)
    }

    /// 2D convolution with zero padding: input [c_in, h, w], kernel
    /// [c_out, c_in, k, k], bias [c_out] -> [c_out, out_h, out_w].
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Var {
        assert!(stride >= 1, "conv2d stride must be >= 1");
        let (vi, vk, vb) = (
            &self.nodes[input.0].value,
            &self.nodes[kernel.0].value,
            &self.nodes[bias.0].value,
        );
        let (si, sk) = (vi.shape(), vk.shape());
        assert!(
            si.len() == 3 && sk.len() == 4 && si[0] == sk[1] && sk[2] == sk[3],
            "shape mismatch in conv2d: input {si:?} vs kernel {sk:?}"
        );
        let (c_in, h, w) = (si[0], si[1], si[2]);
        let (c_out, k) = (sk[0], sk[2]);
        assert_eq!(
            vb.shape(),
            &[c_out],
            "shape mismatch in conv2d bias: {:?} vs [{c_out}]",
            vb.shape()
        );
        assert!(
            h + 2 * padding >= k && w + 2 * padding >= k,
            "conv2d kernel {k} larger than padded input {h}x{w}+{padding}"
        );
        let oh = conv_out_len(h, k, stride, padding);
        let ow = conv_out_len(w, k, stride, padding);

        let cols = im2col(vi.data(), c_in, h, w, k, stride, padding);
        let mut out = vec![0.0; c_out * oh * ow];
        mm_nn(vk.data(), &cols, c_out, c_in * k * k, oh * ow, &mut out);
        for co in 0..c_out {
            let b = vb.data()[co];
            for o in &mut out[co * oh * ow..(co + 1) * oh * ow] {
                *o += b;
            }
        }
        let rg = self.needs_grad(input) || self.needs_grad(kernel) || self.needs_grad(bias);
        self.push(
            Tensor::new(vec![c_out, oh, ow], out),
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                cols,
            },
            rg,
        )
    }

    /// Reverse pass from a scalar loss. Returns gradients for every
    /// `requires_grad` leaf reachable from `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.nodes[loss.0].value.len(),
            1,
            "backward expects a scalar loss, got shape {:?}",
            self.nodes[loss.0].value.shape()
        );
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let mut result: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            if matches!(self.nodes[id].op, Op::Leaf) {
                result[id] = Some(Tensor::new(self.nodes[id].value.shape().to_vec(), g));
            }
        }
        Gradients { grads: result }
    }

    /// Gradient buffer of `v`, allocated on first touch; `None` when the
    /// node does not participate in differentiation.
    fn grad_buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len]).as_mut_slice())
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (o, &gi) in ga.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for (o, &gi) in gb.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for (o, &gi) in ga.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for (o, &gi) in gb.iter_mut().zip(g) {
                        *o -= gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] * db[i];
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for i in 0..g.len() {
                        gb[i] += g[i] * da[i];
                    }
                }
            }
            Op::Div(a, b) => {
                let (da, db) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for i in 0..g.len() {
                        ga[i] += g[i] / db[i];
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for i in 0..g.len() {
                        gb[i] -= g[i] * da[i] / (db[i] * db[i]);
                    }
                }
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                // Ties route the gradient to the first operand.
                let take_a: Vec<bool> = {
                    let (da, db) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    let is_min = matches!(node.op, Op::Minimum(..));
                    da.iter()
                        .zip(db)
                        .map(|(&x, &y)| if is_min { x <= y } else { x >= y })
                        .collect()
                };
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for i in 0..g.len() {
                        if take_a[i] {
                            ga[i] += g[i];
                        }
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for i in 0..g.len() {
                        if !take_a[i] {
                            gb[i] += g[i];
                        }
                    }
                }
            }
            Op::Affine(x, a) => {
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += a * g[i];
                    }
                }
            }
            Op::PowScalar(x, c) => {
                let dx = self.nodes[x.0].value.data();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    if *c != 0.0 {
                        for i in 0..g.len() {
                            gx[i] += c * dx[i].powf(c - 1.0) * g[i];
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let dx = self.nodes[x.0].value.data();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        if dx[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let out = node.value.data();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += out[i] * (1.0 - out[i]) * g[i];
                    }
                }
            }
            Op::Exp(x) => {
                let out = node.value.data();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += out[i] * g[i];
                    }
                }
            }
            Op::Log(x) => {
                let dx = self.nodes[x.0].value.data();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        gx[i] += g[i] / dx[i];
                    }
                }
            }
            Op::Abs(x) => {
                // Subgradient 0 at the kink.
                let dx = self.nodes[x.0].value.data();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        if dx[i] > 0.0 {
                            gx[i] += g[i];
                        } else if dx[i] < 0.0 {
                            gx[i] -= g[i];
                        }
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                let dx = self.nodes[x.0].value.data();
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for i in 0..g.len() {
                        if dx[i] >= *lo && dx[i] <= *hi {
                            gx[i] += g[i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for o in gx.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.len() as f64;
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for o in gx.iter_mut() {
                        *o += g[0] / n;
                    }
                }
            }
            Op::Matmul(a, b) => {
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    mm_nt(g, vb.data(), m, n, k, ga);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    mm_tn(va.data(), g, k, m, n, gb);
                }
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                let (r, c) = (s[0], s[1]);
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for i in 0..r {
                        for j in 0..c {
                            gx[j * r + i] += g[i * c + j];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (o, &gi) in gx.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = self.grad_buf(grads, p) {
                        for (o, &gi) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *o += gi;
                        }
                    }
                    offset += len;
                }
            }
            Op::SelectRows(x, indices) => {
                let cols = self.nodes[x.0].value.shape()[1];
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (r, &i) in indices.iter().enumerate() {
                        for c in 0..cols {
                            gx[i * cols + c] += g[r * cols + c];
                        }
                    }
                }
            }
            Op::Column(x, c) => {
                let cols = self.nodes[x.0].value.shape()[1];
                if let Some(gx) = self.grad_buf(grads, *x) {
                    for (r, &gi) in g.iter().enumerate() {
                        gx[r * cols + c] += gi;
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                padding,
                cols,
            } => {
                let si = self.nodes[input.0].value.shape().to_vec();
                let sk = self.nodes[kernel.0].value.shape().to_vec();
                let (c_in, h, w) = (si[0], si[1], si[2]);
                let (c_out, k) = (sk[0], sk[2]);
                let spatial = node.value.len() / c_out;

                if let Some(gb) = self.grad_buf(grads, *bias) {
                    for co in 0..c_out {
                        gb[co] += g[co * spatial..(co + 1) * spatial].iter().sum::<f64>();
                    }
                }
                if let Some(gk) = self.grad_buf(grads, *kernel) {
                    // dW = dOut @ cols^T
                    mm_nt(g, cols, c_out, spatial, c_in * k * k, gk);
                }
                if let Some(gi) = self.grad_buf(grads, *input) {
                    let mut dcols = vec![0.0; cols.len()];
                    mm_tn(
                        self.nodes[kernel.0].value.data(),
                        g,
                        c_in * k * k,
                        c_out,
                        spatial,
                        &mut dcols,
                    );
                    col2im(&dcols, c_in, h, w, k, *stride, *padding, gi);
                }
            }
        }
    }
}

/// Max relative error between analytic gradients of `f` at `x` and central
/// finite differences, over up to `max_coords` sampled coordinates.
///
/// `f` must build a scalar from its single argument. The numeric side
/// re-runs the forward pass from perturbed copies of `x`, so it is fully
/// independent of the backward implementation.
pub fn grad_check<F>(
    f: &F,
    x: &Tensor,
    eps: f64,
    max_coords: usize,
    rng: &mut impl rand::Rng,
) -> f64
where
    F: Fn(&mut Tape, Var) -> Var,
{
    assert!(eps > 0.0);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let loss = f(&mut tape, xv);
    let grads = tape.backward(loss);
    let analytic = grads
        .get(xv)
        .expect("grad_check: x did not receive a gradient")
        .clone();

    let eval = |t: &Tensor| -> f64 {
        let mut tape = Tape::new();
        let xv = tape.leaf(t.clone());
        let loss = f(&mut tape, xv);
        tape.value(loss).item()
    };

    let coords: Vec<usize> = if x.len() <= max_coords {
        (0..x.len()).collect()
    } else {
        let mut picked = std::collections::BTreeSet::new();
        while picked.len() < max_coords {
            picked.insert(rng.gen_range(0..x.len()));
        }
        picked.into_iter().collect()
    };

    let mut worst = 0.0f64;
    for i in coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (1e-8f64).max(a.abs() + numeric.abs());
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

#[cfg(test)]
mod tests;
