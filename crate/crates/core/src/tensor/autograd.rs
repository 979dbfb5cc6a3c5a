//! Tape-style reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Var`] eagerly computes its value and, when at least
//! one input requires a gradient, records a node that points back at its
//! inputs. The recorded nodes form a DAG whose reverse topological order is
//! rebuilt by [`Var::backward`]. Operations whose inputs are all constants
//! record nothing, so inference graphs release intermediates as soon as they
//! go out of scope.
//!
//! Leaf gradients accumulate across `backward` calls until
//! [`Var::zero_grad`] clears them.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::dense::{numel, permute_index, Tensor};
use super::kernels::{self, AttnDims, ConvDims, LayerNormCache, MatmulPlan};
use crate::error::{Error, Result};

/// Differentiable handle to a tensor value in a recorded graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    op: Op,
}

enum Op {
    Leaf,
    /// `rhs` either matches `lhs` or matches a trailing suffix of its shape.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Rc<Vec<f64>>),
    Matmul(Var, Var, MatmulPlan),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: LayerNormCache,
    },
    Gelu(Var),
    Abs(Var),
    Sum(Var),
    Reshape(Var),
    Gather(Var, Rc<Vec<usize>>),
    ScatterAdd(Var, Rc<Vec<usize>>),
    Conv3x3 {
        x: Var,
        k: Var,
        bias: Option<Var>,
        dims: ConvDims,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        lse: Vec<f64>,
        scale: f64,
        dims: AttnDims,
    },
}

impl Op {
    fn inputs(&self) -> Vec<&Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b, _) => vec![a, b],
            Op::Scale(a, _)
            | Op::MulConst(a, _)
            | Op::Softmax(a)
            | Op::Gelu(a)
            | Op::Abs(a)
            | Op::Sum(a)
            | Op::Reshape(a)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _) => vec![a],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Conv3x3 { x, k, bias, .. } => {
                let mut v = vec![x, k];
                if let Some(b) = bias {
                    v.push(b);
                }
                v
            }
            Op::Attention { q, k, v, .. } => vec![q, k, v],
        }
    }
}

/// Output of [`Var::attention`].
pub struct AttentionOutput {
    pub out: Var,
    /// `[..., n, n]` row-stochastic weights, present when requested.
    pub probs: Option<Tensor>,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({:?}, requires_grad={})", self.0.value, self.0.requires_grad)
    }
}

fn check_finite(t: &[f64], what: &str) -> Result<()> {
    if t.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite value in {what} input")))
    }
}

impl Var {
    /// A trainable leaf that accumulates gradients.
    pub fn leaf(value: Tensor) -> Var {
        Var::make(value, true, Op::Leaf)
    }

    /// A constant that never receives a gradient.
    pub fn constant(value: Tensor) -> Var {
        Var::make(value, false, Op::Leaf)
    }

    fn make(value: Tensor, requires_grad: bool, op: Op) -> Var {
        Var(Rc::new(Node { value, requires_grad, grad: RefCell::new(None), op }))
    }

    /// Records `op` only when some input needs a gradient.
    fn derive(value: Tensor, op: Op) -> Var {
        if op.inputs().iter().any(|v| v.requires_grad()) {
            Var::make(value, true, op)
        } else {
            Var::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.0.op, Op::Leaf)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.borrow().as_ref().map(|g| Tensor::from_parts(self.shape().to_vec(), g.clone()))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    fn same_shape(&self, other: &Var, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("{what}: shapes {:?} and {:?} differ", self.shape(), other.shape())));
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // elementwise
    // -----------------------------------------------------------------------

    /// `self + rhs`, where `rhs` may also match a trailing suffix of
    /// `self`'s shape (bias and positional-table broadcasting).
    pub fn add(&self, rhs: &Var) -> Result<Var> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if rs.len() > ls.len() || ls[ls.len() - rs.len()..] != *rs {
            return Err(Error::shape(format!("cannot add {rs:?} onto {ls:?}")));
        }
        let r = rhs.value().data();
        let data = self.value().data().chunks(r.len()).flat_map(|c| c.iter().zip(r).map(|(a, b)| a + b)).collect();
        Ok(Var::derive(Tensor::from_parts(ls.to_vec(), data), Op::Add(self.clone(), rhs.clone())))
    }

    pub fn sub(&self, rhs: &Var) -> Result<Var> {
        self.same_shape(rhs, "sub")?;
        let data = self.value().data().iter().zip(rhs.value().data()).map(|(a, b)| a - b).collect();
        Ok(Var::derive(Tensor::from_parts(self.shape().to_vec(), data), Op::Sub(self.clone(), rhs.clone())))
    }

    pub fn mul(&self, rhs: &Var) -> Result<Var> {
        self.same_shape(rhs, "mul")?;
        let data = self.value().data().iter().zip(rhs.value().data()).map(|(a, b)| a * b).collect();
        Ok(Var::derive(Tensor::from_parts(self.shape().to_vec(), data), Op::Mul(self.clone(), rhs.clone())))
    }

    pub fn scale(&self, s: f64) -> Var {
        Var::derive(self.value().map(|x| x * s), Op::Scale(self.clone(), s))
    }

    /// Elementwise product with fixed (non-differentiable) factors.
    pub fn mul_const(&self, factors: Rc<Vec<f64>>) -> Result<Var> {
        if factors.len() != self.value().len() {
            return Err(Error::shape(format!("mul_const: {} factors for shape {:?}", factors.len(), self.shape())));
        }
        let data = self.value().data().iter().zip(factors.iter()).map(|(a, b)| a * b).collect();
        Ok(Var::derive(Tensor::from_parts(self.shape().to_vec(), data), Op::MulConst(self.clone(), factors)))
    }

    pub fn gelu(&self) -> Var {
        Var::derive(self.value().map(kernels::gelu), Op::Gelu(self.clone()))
    }

    pub fn abs(&self) -> Var {
        Var::derive(self.value().map(f64::abs), Op::Abs(self.clone()))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Var {
        Var::derive(Tensor::scalar(self.value().sum()), Op::Sum(self.clone()))
    }

    pub fn mean(&self) -> Var {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Mean absolute difference between `self` and `target`.
    pub fn l1_loss(&self, target: &Var) -> Result<Var> {
        Ok(self.sub(target)?.abs().mean())
    }

    // -----------------------------------------------------------------------
    // linear algebra
    // -----------------------------------------------------------------------

    /// Batched product `[..., m, k] x [..., k, n]`; leading dims broadcast.
    pub fn matmul(&self, rhs: &Var) -> Result<Var> {
        let plan = MatmulPlan::new(self.shape(), rhs.shape())?;
        let data = kernels::matmul_forward(&plan, self.value().data(), rhs.value().data());
        let shape = plan.out_shape.clone();
        Ok(Var::derive(Tensor::from_parts(shape, data), Op::Matmul(self.clone(), rhs.clone(), plan)))
    }

    /// Affine map along the last dim: `x w + b` with `w: [d_in, d_out]`.
    pub fn linear(&self, w: &Var, b: Option<&Var>) -> Result<Var> {
        if w.shape().len() != 2 {
            return Err(Error::shape(format!("linear weight must be 2-D, got {:?}", w.shape())));
        }
        if let Some(b) = b {
            if b.shape() != [w.shape()[1]] {
                return Err(Error::shape(format!("linear bias {:?} does not match weight {:?}", b.shape(), w.shape())));
            }
        }
        let d_in = *self.shape().last().unwrap_or(&0);
        if d_in != w.shape()[0] {
            return Err(Error::shape(format!("linear input {:?} does not match weight {:?}", self.shape(), w.shape())));
        }
        // flatten leading dims so the product is a single GEMM
        let mut out_shape = self.shape().to_vec();
        *out_shape.last_mut().unwrap() = w.shape()[1];
        let rows = self.value().len() / d_in.max(1);
        let y = self.reshape(&[rows, d_in])?.matmul(w)?.reshape(&out_shape)?;
        match b {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    /// Numerically stable softmax over the last dim.
    pub fn softmax_lastdim(&self) -> Result<Var> {
        let v = self.value();
        check_finite(v.data(), "softmax")?;
        let d = *v.shape().last().unwrap_or(&1);
        let data = kernels::softmax_rows(v.data(), d);
        Ok(Var::derive(Tensor::from_parts(v.shape().to_vec(), data), Op::Softmax(self.clone())))
    }

    /// Layer normalization over the last dim with biased variance.
    pub fn layer_norm(&self, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
        let d = *self.shape().last().unwrap_or(&1);
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape(format!(
                "layer norm affine params {:?}/{:?} do not match last dim {d}",
                gamma.shape(),
                beta.shape()
            )));
        }
        let (data, cache) =
            kernels::layer_norm_forward(self.value().data(), gamma.value().data(), beta.value().data(), eps)?;
        Ok(Var::derive(
            Tensor::from_parts(self.shape().to_vec(), data),
            Op::LayerNorm { x: self.clone(), gamma: gamma.clone(), beta: beta.clone(), cache },
        ))
    }

    /// Scaled dot-product attention over `[..., n, d]` operands.
    ///
    /// Weights are `softmax(q k^T * scale)` along the key axis; the output is
    /// the weighted sum of `v` rows. Backward keeps only each row's
    /// log-sum-exp and rebuilds the weights, so memory stays linear in `n`.
    /// The weights are returned when `keep_probs` is set.
    pub fn attention(q: &Var, k: &Var, v: &Var, scale: f64, keep_probs: bool) -> Result<AttentionOutput> {
        let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
        if qs.len() < 2 || qs != ks || vs.len() != qs.len() || vs[..vs.len() - 1] != qs[..qs.len() - 1] {
            return Err(Error::shape(format!("attention operands {qs:?}, {ks:?}, {vs:?} do not conform")));
        }
        let r = qs.len();
        let dims = AttnDims { batch: numel(&qs[..r - 2]), n: qs[r - 2], dk: qs[r - 1], dv: vs[r - 1] };
        let needs_grad = q.requires_grad() || k.requires_grad() || v.requires_grad();
        let (out, lse, probs) =
            kernels::attention_forward(dims, q.value().data(), k.value().data(), v.value().data(), scale, keep_probs);
        let mut probs_shape = qs.to_vec();
        probs_shape[r - 1] = dims.n;
        let returned = probs.map(|p| Tensor::from_parts(probs_shape, p));
        let value = Tensor::from_parts(vs.to_vec(), out);
        let out = if needs_grad {
            Var::make(value, true, Op::Attention { q: q.clone(), k: k.clone(), v: v.clone(), lse, scale, dims })
        } else {
            Var::constant(value)
        };
        Ok(AttentionOutput { out, probs: returned })
    }

    // -----------------------------------------------------------------------
    // convolution and rearrangements
    // -----------------------------------------------------------------------

    /// 3x3 cross-correlation (no kernel flip) with zero padding 1 and stride 1.
    ///
    /// `self: [n, c_in, h, w]`, `k: [c_out, c_in, 3, 3]`, `bias: [c_out]`.
    pub fn conv2d_3x3(&self, k: &Var, bias: Option<&Var>) -> Result<Var> {
        let xs = self.shape();
        let ks = k.shape();
        if xs.len() != 4 {
            return Err(Error::shape(format!("conv input must be [n, c, h, w], got {xs:?}")));
        }
        if ks.len() != 4 || ks[2] != 3 || ks[3] != 3 {
            return Err(Error::Usage(format!("unsupported kernel shape {ks:?}: only 3x3 kernels are supported")));
        }
        if ks[1] != xs[1] {
            return Err(Error::shape(format!("kernel {ks:?} expects {} input channels, got {xs:?}", ks[1])));
        }
        if let Some(b) = bias {
            if b.shape() != [ks[0]] {
                return Err(Error::shape(format!("conv bias {:?} does not match kernel {ks:?}", b.shape())));
            }
        }
        let dims = ConvDims { n: xs[0], ci: xs[1], co: ks[0], h: xs[2], w: xs[3] };
        let data =
            kernels::conv3x3_forward(dims, self.value().data(), k.value().data(), bias.map(|b| b.value().data()));
        let value = Tensor::from_parts(vec![dims.n, dims.co, dims.h, dims.w], data);
        Ok(Var::derive(value, Op::Conv3x3 { x: self.clone(), k: k.clone(), bias: bias.cloned(), dims }))
    }

    pub(crate) fn gather(&self, index: Rc<Vec<usize>>, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != index.len() {
            return Err(Error::shape(format!("gather index of {} for shape {shape:?}", index.len())));
        }
        let data = kernels::gather(self.value().data(), &index);
        Ok(Var::derive(Tensor::new(shape, data)?, Op::Gather(self.clone(), index)))
    }

    /// Adjoint of [`Var::gather`]: sums elements into `shape` positions.
    pub(crate) fn scatter_add(&self, index: Rc<Vec<usize>>, shape: Vec<usize>) -> Result<Var> {
        if index.len() != self.value().len() {
            return Err(Error::shape(format!("scatter index of {} for {} elements", index.len(), self.value().len())));
        }
        let data = kernels::scatter_add(self.value().data(), &index, numel(&shape));
        Ok(Var::derive(Tensor::new(shape, data)?, Op::ScatterAdd(self.clone(), index)))
    }

    /// 3x3 neighbourhood unfolding, `[n, c, h, w] -> [n, 9c, h, w]`.
    ///
    /// Channel block `g = 3 (r + 1) + (q + 1)` for offsets `(r, q)` in
    /// `{-1, 0, 1}^2` (row-major) holds `x[row - r, col - q]`, zero outside
    /// the image. Block 4 is the centre.
    pub fn unfold_3x3(&self) -> Result<Var> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::shape(format!("unfold input must be [n, c, h, w], got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let index = kernels::unfold3x3_index(n, c, h, w);
        self.gather(Rc::new(index), vec![n, 9 * c, h, w])
    }

    /// Sub-pixel rearrangement `[n, c*s^2, h, w] -> [n, c, s*h, s*w]`.
    ///
    /// Input channel `c*s^2 + dy*s + dx` moves to output pixel
    /// `(y*s + dy, x*s + dx)` of channel `c`, so `dx` varies fastest.
    pub fn pixel_shuffle(&self, s: usize) -> Result<Var> {
        let sh = self.shape();
        if sh.len() != 4 || s == 0 || !sh[1].is_multiple_of(s * s) {
            return Err(Error::shape(format!("pixel shuffle by {s} needs [n, c*{s}^2, h, w], got {sh:?}")));
        }
        let (n, c, h, w) = (sh[0], sh[1] / (s * s), sh[2], sh[3]);
        let index = kernels::pixel_shuffle_index(n, c, h, w, s);
        self.gather(Rc::new(index), vec![n, c, h * s, w * s])
    }

    /// Inverse of [`Var::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, s: usize) -> Result<Var> {
        let sh = self.shape();
        if sh.len() != 4 || s == 0 || !sh[2].is_multiple_of(s) || !sh[3].is_multiple_of(s) {
            return Err(Error::shape(format!(
                "pixel unshuffle by {s} needs spatial dims divisible by {s}, got {sh:?}"
            )));
        }
        let (n, c, h, w) = (sh[0], sh[1], sh[2] / s, sh[3] / s);
        let index = kernels::pixel_unshuffle_index(n, c, h, w, s);
        self.gather(Rc::new(index), vec![n, c * s * s, h, w])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let t = self.value().reshape(shape)?;
        Ok(Var::derive(t, Op::Reshape(self.clone())))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var> {
        let (shape, index) = permute_index(self.shape(), perm)?;
        self.gather(Rc::new(index), shape)
    }

    /// Axis permutation followed by a reshape to `shape`.
    pub fn permute_reshape(&self, perm: &[usize], shape: &[usize]) -> Result<Var> {
        let (out_shape, index) = permute_index(self.shape(), perm)?;
        if numel(shape) != numel(&out_shape) {
            return Err(Error::shape(format!("cannot reshape permuted {out_shape:?} into {shape:?}")));
        }
        self.gather(Rc::new(index), shape.to_vec())
    }

    // -----------------------------------------------------------------------
    // backward
    // -----------------------------------------------------------------------

    /// Accumulates `d self / d leaf` into every reachable trainable leaf.
    pub fn backward(&self) -> Result<()> {
        if !self.value().is_scalar() {
            return Err(Error::Usage(format!("backward needs a scalar loss, got shape {:?}", self.shape())));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        let key = |v: &Var| Rc::as_ptr(&v.0) as usize;
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        grads.insert(key(self), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&key(node)) else { continue };
            if node.is_leaf() {
                let mut slot = node.0.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => *slot = Some(g),
                }
                continue;
            }
            for (input, ig) in node.input_grads(&g) {
                if !input.requires_grad() {
                    continue;
                }
                match grads.get_mut(&key(input)) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(key(input), ig);
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable through gradient-requiring edges, inputs first.
    fn topological_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Var, bool)> = vec![(self.clone(), false)];
        while let Some((v, expanded)) = stack.pop() {
            let k = Rc::as_ptr(&v.0) as usize;
            if expanded {
                order.push(v);
                continue;
            }
            if !visited.insert(k) {
                continue;
            }
            stack.push((v.clone(), true));
            for input in v.0.op.inputs() {
                if input.requires_grad() && !visited.contains(&(Rc::as_ptr(&input.0) as usize)) {
                    stack.push((input.clone(), false));
                }
            }
        }
        order
    }

    /// Vector-Jacobian products for each input of this node.
    fn input_grads<'a>(&'a self, g: &[f64]) -> Vec<(&'a Var, Vec<f64>)> {
        let node = &self.0;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => {
                let gb = if a.value().len() == b.value().len() {
                    g.to_vec()
                } else {
                    let mut acc = vec![0.0; b.value().len()];
                    for chunk in g.chunks(acc.len()) {
                        acc.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                    acc
                };
                vec![(a, g.to_vec()), (b, gb)]
            }
            Op::Sub(a, b) => vec![(a, g.to_vec()), (b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => {
                let (av, bv) = (a.value().data(), b.value().data());
                vec![
                    (a, g.iter().zip(bv).map(|(x, y)| x * y).collect()),
                    (b, g.iter().zip(av).map(|(x, y)| x * y).collect()),
                ]
            }
            Op::Scale(a, s) => vec![(a, g.iter().map(|x| x * s).collect())],
            Op::MulConst(a, f) => vec![(a, g.iter().zip(f.iter()).map(|(x, y)| x * y).collect())],
            Op::Matmul(a, b, plan) => {
                let (ga, gb) = kernels::matmul_backward(
                    plan,
                    a.value().data(),
                    b.value().data(),
                    g,
                    a.requires_grad(),
                    b.requires_grad(),
                );
                let mut out = Vec::new();
                if let Some(ga) = ga {
                    out.push((a, ga));
                }
                if let Some(gb) = gb {
                    out.push((b, gb));
                }
                out
            }
            Op::Softmax(a) => {
                let d = *node.value.shape().last().unwrap_or(&1);
                vec![(a, kernels::softmax_backward(node.value.data(), g, d))]
            }
            Op::LayerNorm { x, gamma, beta, cache } => {
                let (gx, gg, gb) = kernels::layer_norm_backward(cache, gamma.value().data(), g);
                vec![(x, gx), (gamma, gg), (beta, gb)]
            }
            Op::Gelu(a) => vec![(a, g.iter().zip(a.value().data()).map(|(x, &v)| x * kernels::gelu_grad(v)).collect())],
            Op::Abs(a) => vec![(a, g.iter().zip(a.value().data()).map(|(x, &v)| x * sign(v)).collect())],
            Op::Sum(a) => vec![(a, vec![g[0]; a.value().len()])],
            Op::Reshape(a) => vec![(a, g.to_vec())],
            Op::Gather(a, index) => vec![(a, kernels::scatter_add(g, index, a.value().len()))],
            Op::ScatterAdd(a, index) => vec![(a, kernels::gather(g, index))],
            Op::Conv3x3 { x, k, bias, dims } => {
                let mut out = Vec::new();
                if x.requires_grad() {
                    out.push((x, kernels::conv3x3_backward_input(*dims, k.value().data(), g)));
                }
                if k.requires_grad() {
                    out.push((k, kernels::conv3x3_backward_kernel(*dims, x.value().data(), g)));
                }
                if let Some(b) = bias {
                    out.push((b, kernels::conv3x3_backward_bias(*dims, g)));
                }
                out
            }
            Op::Attention { q, k, v, lse, scale, dims } => {
                let (gq, gk, gv) = kernels::attention_backward(
                    *dims,
                    q.value().data(),
                    k.value().data(),
                    v.value().data(),
                    lse,
                    *scale,
                    g,
                );
                vec![(q, gq), (k, gk), (v, gv)]
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
