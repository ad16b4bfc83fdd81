//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its value; [`Graph::backward`] walks the
//! tape in reverse. Gradients are retained only on leaves.

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvDims};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, k: Var, b: Var, dims: ConvDims },
    MaxPool { x: Var, arg: Vec<u32> },
    Resize { x: Var, planes: usize, h: usize, w: usize },
    Concat { a: Var, b: Var, ca: usize, cb: usize, hw: usize },
    LeakyRelu { x: Var, slope: f32 },
    Sigmoid { x: Var },
    /// Scalar whose gradient w.r.t. `x` was computed during the forward pass.
    Reduce { x: Var, local: Vec<f32> },
    Combine { terms: Vec<(Var, f64)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    scalar: Option<f64>,
    grad: Option<Tensor>,
    needs_grad: bool,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, None, false, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, None, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    /// Value of a scalar node at f64 precision.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let n = &self.nodes[v.0];
        match n.scalar {
            Some(s) => Ok(s),
            None if n.value.len() == 1 => Ok(n.value.data()[0] as f64),
            None => Err(TensorError::NotScalar(n.value.shape().to_vec())),
        }
    }

    /// Hash of every piecewise-linear branch taken so far (activation signs,
    /// pooling winners). Equal signatures mean the same linear region.
    pub fn decision_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for (i, n) in self.nodes.iter().enumerate() {
            match &n.op {
                Op::LeakyRelu { x, .. } => {
                    i.hash(&mut h);
                    for &v in self.value(*x).data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool { arg, .. } => {
                    i.hash(&mut h);
                    arg.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, value: Tensor, scalar: Option<f64>, needs_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            scalar,
            grad: None,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn checked(&mut self, value: Tensor, needs_grad: bool, op: Op, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        Ok(self.push(value, None, needs_grad, op))
    }

    /// Same-padded cross-correlation; `k` is `[F, C, K, K]` with odd `K`, `b` is `[F]`.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (f, kc, kh, kw) = self.value(k).dims4()?;
        if kc != c || kh != kw || kh % 2 == 0 {
            return Err(TensorError::Shape(format!(
                "conv2d kernel {:?} does not fit input {:?}",
                self.value(k).shape(),
                self.value(x).shape()
            )));
        }
        if self.value(b).shape() != [f] {
            return Err(TensorError::Shape(format!("conv2d bias {:?}, expected [{f}]", self.value(b).shape())));
        }
        let dims = ConvDims { n, c, h, w, f, k: kh };
        let out = kernels::conv_forward(self.value(x).data(), self.value(k).data(), self.value(b).data(), &dims);
        let needs = self.needs(x) || self.needs(k) || self.needs(b);
        self.checked(Tensor::new(vec![n, f, h, w], out)?, needs, Op::Conv { x, k, b, dims }, "conv2d")
    }

    /// 2×2 max pooling with stride 2.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if h < 2 || w < 2 {
            return Err(TensorError::Shape(format!("maxpool2 needs H, W ≥ 2, got {h}×{w}")));
        }
        let (out, arg) = kernels::maxpool2_forward(self.value(x).data(), n * c, h, w);
        let needs = self.needs(x);
        self.checked(Tensor::new(vec![n, c, h / 2, w / 2], out)?, needs, Op::MaxPool { x, arg }, "maxpool2")
    }

    /// Half-pixel bilinear resize to `oh × ow`.
    pub fn resize(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return Err(TensorError::Shape(format!("resize {h}×{w} → {oh}×{ow}")));
        }
        if (oh, ow) == (h, w) {
            return Ok(x);
        }
        let out = kernels::resize_forward(self.value(x).data(), n * c, h, w, oh, ow);
        let needs = self.needs(x);
        let op = Op::Resize { x, planes: n * c, h, w };
        self.checked(Tensor::new(vec![n, c, oh, ow], out)?, needs, op, "resize")
    }

    /// Channel concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4()?;
        let (nb, cb, hb, wb) = self.value(b).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(TensorError::Shape(format!(
                "concat {:?} with {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            out.extend_from_slice(&self.value(a).data()[i * ca * hw..(i + 1) * ca * hw]);
            out.extend_from_slice(&self.value(b).data()[i * cb * hw..(i + 1) * cb * hw]);
        }
        let needs = self.needs(a) || self.needs(b);
        self.checked(Tensor::new(vec![n, ca + cb, h, w], out)?, needs, Op::Concat { a, b, ca, cb, hw }, "concat")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.needs(x);
        self.checked(value, needs, Op::LeakyRelu { x, slope }, "leaky_relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let needs = self.needs(x);
        self.checked(value, needs, Op::Sigmoid { x }, "sigmoid")
    }

    /// Scalar `Σ wᵢ xᵢ`, accumulated in f64.
    pub fn sum_weighted(&mut self, x: Var, weights: &[f32]) -> Result<Var> {
        let t = self.value(x);
        if weights.len() != t.len() {
            return Err(TensorError::Shape(format!("{} weights for {} values", weights.len(), t.len())));
        }
        let s: f64 = t.data().iter().zip(weights).map(|(&v, &w)| v as f64 * w as f64).sum();
        self.reduce(x, s, weights.to_vec(), "sum_weighted")
    }

    /// Scalar `Σ cᵢ sᵢ` over scalar nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, c) in terms {
            s += c * self.scalar(v)?;
        }
        if !s.is_finite() {
            return Err(TensorError::NonFinite { op: "combine", index: 0 });
        }
        let needs = terms.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(Tensor::scalar(s as f32), Some(s), needs, Op::Combine { terms: terms.to_vec() }))
    }

    /// Scalar node with value `s` and precomputed gradient `local = ∂s/∂x`.
    pub(crate) fn reduce(&mut self, x: Var, s: f64, local: Vec<f32>, op: &'static str) -> Result<Var> {
        if !s.is_finite() {
            return Err(TensorError::NonFinite { op, index: 0 });
        }
        debug_assert_eq!(local.len(), self.value(x).len());
        let needs = self.needs(x);
        Ok(self.push(Tensor::scalar(s as f32), Some(s), needs, Op::Reduce { x, local }))
    }

    fn accumulate(&mut self, v: Var, g: Vec<f32>) -> Result<()> {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return Ok(());
        }
        match node.grad.as_mut() {
            Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
        }
        Ok(())
    }

    /// Reverse pass from a scalar node. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        self.accumulate(loss, vec![1.0])?;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let g = g.into_data();
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(&op, i, &g)?;
            self.nodes[i].op = op;
        }
        Ok(())
    }

    fn propagate(&mut self, op: &Op, i: usize, g: &[f32]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Conv { x, k, b, ref dims } => {
                let need_dx = self.needs(x);
                let grads =
                    kernels::conv_backward(self.value(x).data(), self.value(k).data(), g, dims, need_dx);
                if let Some(dx) = grads.dx {
                    self.accumulate(x, dx)?;
                }
                self.accumulate(k, grads.dk)?;
                self.accumulate(b, grads.dbias)?;
            }
            Op::MaxPool { x, ref arg } => {
                let mut dx = vec![0.0f32; self.value(x).len()];
                for (&a, &gv) in arg.iter().zip(g) {
                    dx[a as usize] += gv;
                }
                self.accumulate(x, dx)?;
            }
            Op::Resize { x, planes, h, w } => {
                let out_shape = self.nodes[i].value.shape();
                let (oh, ow) = (out_shape[2], out_shape[3]);
                let dx = kernels::resize_backward(g, planes, h, w, oh, ow);
                self.accumulate(x, dx)?;
            }
            Op::Concat { a, b, ca, cb, hw } => {
                let n = g.len() / ((ca + cb) * hw);
                let (mut da, mut db) = (Vec::with_capacity(n * ca * hw), Vec::with_capacity(n * cb * hw));
                for item in g.chunks((ca + cb) * hw) {
                    da.extend_from_slice(&item[..ca * hw]);
                    db.extend_from_slice(&item[ca * hw..]);
                }
                self.accumulate(a, da)?;
                self.accumulate(b, db)?;
            }
            Op::LeakyRelu { x, slope } => {
                let dx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { slope * gv })
                    .collect();
                self.accumulate(x, dx)?;
            }
            Op::Sigmoid { x } => {
                let dx = self.nodes[i]
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&s, &gv)| gv * s * (1.0 - s))
                    .collect();
                self.accumulate(x, dx)?;
            }
            Op::Reduce { x, ref local } => {
                let up = g[0];
                self.accumulate(x, local.iter().map(|&l| l * up).collect())?;
            }
            Op::Combine { ref terms } => {
                for &(v, c) in terms {
                    self.accumulate(v, vec![(c * g[0] as f64) as f32])?;
                }
            }
        }
        Ok(())
    }
}
