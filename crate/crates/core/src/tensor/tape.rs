//! Graph-tracked tensor operations and reverse-mode backward.

use super::conv::{self, ConvSpec};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Exp(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, T),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    ConvT2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    Reshape(Var),
    Permute {
        x: Var,
        perm: Vec<u32>,
    },
    Sum(Var),
    Mean(Var),
    SqErr(Var, Var),
    PowerNorm(Var),
}

#[derive(Debug)]
struct Node<T> {
    data: Vec<T>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op<T>,
}

/// Wengert tape. Forward ops append nodes; [`Tape::backward`] walks the tape
/// in reverse and accumulates gradients. Gradient buffers are only allocated
/// for nodes on a `requires_grad` path, so inference-mode evaluation carries
/// no gradient state at all.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            data,
            shape,
            requires_grad,
            op,
        });
        Var(self.nodes.len() as u32 - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.idx()].requires_grad
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn leaf(&mut self, data: Vec<T>, shape: Vec<usize>, requires_grad: bool) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::ShapeMismatch {
                op: "leaf",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(self.push(data, shape, requires_grad, Op::Leaf))
    }

    pub fn constant(&mut self, data: Vec<T>, shape: Vec<usize>) -> Result<Var> {
        self.leaf(data, shape, false)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.push(vec![v], vec![1], false, Op::Leaf)
    }

    pub fn leaf_from(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        self.push(
            t.data().to_vec(),
            t.shape().to_vec(),
            requires_grad,
            Op::Leaf,
        )
    }

    // ── Accessors ───────────────────────────────────────────────────────

    pub fn data(&self, v: Var) -> &[T] {
        &self.nodes[v.idx()].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.idx()].shape
    }

    /// Scalar value of a 1-element node.
    pub fn value(&self, v: Var) -> T {
        debug_assert_eq!(self.nodes[v.idx()].data.len(), 1);
        self.nodes[v.idx()].data[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.idx()).and_then(|g| g.as_deref())
    }

    /// True once any gradient buffer has been allocated.
    pub fn has_grad_state(&self) -> bool {
        self.grads.iter().any(|g| g.is_some())
    }

    // ── Elementwise ops ─────────────────────────────────────────────────

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x + y);
        let rq = self.needs(a) || self.needs(b);
        Ok(self.push(data, self.nodes[a.idx()].shape.clone(), rq, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x - y);
        let rq = self.needs(a) || self.needs(b);
        Ok(self.push(data, self.nodes[a.idx()].shape.clone(), rq, Op::Sub(a, b)))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let data = zip_map(self.data(a), self.data(b), |x, y| x * y);
        let rq = self.needs(a) || self.needs(b);
        Ok(self.push(data, self.nodes[a.idx()].shape.clone(), rq, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let data = self.data(a).iter().map(|&x| x * c).collect();
        let rq = self.needs(a);
        self.push(data, self.nodes[a.idx()].shape.clone(), rq, Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| x.exp()).collect();
        let rq = self.needs(a);
        self.push(data, self.nodes[a.idx()].shape.clone(), rq, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| x.tanh()).collect();
        let rq = self.needs(a);
        self.push(data, self.nodes[a.idx()].shape.clone(), rq, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = T::one();
        let data = self
            .data(a)
            .iter()
            .map(|&x| one / (one + (-x).exp()))
            .collect();
        let rq = self.needs(a);
        self.push(data, self.nodes[a.idx()].shape.clone(), rq, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        let data = self
            .data(a)
            .iter()
            .map(|&x| if x > T::zero() { x } else { x * slope })
            .collect();
        let rq = self.needs(a);
        self.push(
            data,
            self.nodes[a.idx()].shape.clone(),
            rq,
            Op::LeakyRelu(a, slope),
        )
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                let b_row = &bd[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o += av * bv;
                }
            }
        }
        let rq = self.needs(a) || self.needs(b);
        Ok(self.push(out, vec![m, n], rq, Op::MatMul { a, b, m, k, n }))
    }

    /// 2-D convolution over a `[C, H, W]` input with a `[OC, IC, KH, KW]`
    /// kernel, zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let spec = ConvSpec::conv(sx[0], sx[1], sx[2], sw[0], sw[2], sw[3], stride, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [spec.out_c] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![spec.out_c],
                });
            }
        }
        let out = conv::conv2d_forward(
            self.data(x),
            self.data(w),
            bias.map(|b| self.data(b)),
            &spec,
        );
        let rq =
            self.needs(x) || self.needs(w) || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(
            out,
            vec![spec.out_c, spec.out_h, spec.out_w],
            rq,
            Op::Conv2d { x, w, bias, spec },
        ))
    }

    /// Transposed 2-D convolution over a `[C, H, W]` input with a
    /// `[IC, OC, KH, KW]` kernel.
    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[0] != sx[0] {
            return Err(Error::ShapeMismatch {
                op: "conv2d_transpose",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let spec = ConvSpec::transposed(sx[0], sx[1], sx[2], sw[1], sw[2], sw[3], stride, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [spec.out_c] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d_transpose",
                    lhs: self.shape(b).to_vec(),
                    rhs: vec![spec.out_c],
                });
            }
        }
        let out = conv::convt2d_forward(
            self.data(x),
            self.data(w),
            bias.map(|b| self.data(b)),
            &spec,
        );
        let rq =
            self.needs(x) || self.needs(w) || bias.map(|b| self.needs(b)).unwrap_or(false);
        Ok(self.push(
            out,
            vec![spec.out_c, spec.out_h, spec.out_w],
            rq,
            Op::ConvT2d { x, w, bias, spec },
        ))
    }

    // ── Shape ops ───────────────────────────────────────────────────────

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.data(a).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let data = self.data(a).to_vec();
        let rq = self.needs(a);
        Ok(self.push(data, shape, rq, Op::Reshape(a)))
    }

    /// Gather permutation: `out[i] = in[perm[i]]`. `perm` must be a
    /// permutation of `0..len`.
    pub fn permute(&mut self, a: Var, perm: Vec<u32>) -> Result<Var> {
        if perm.len() != self.data(a).len() {
            return Err(Error::ShapeMismatch {
                op: "permute",
                lhs: self.shape(a).to_vec(),
                rhs: vec![perm.len()],
            });
        }
        let src = self.data(a);
        let data = perm.iter().map(|&i| src[i as usize]).collect();
        let rq = self.needs(a);
        Ok(self.push(
            data,
            self.nodes[a.idx()].shape.clone(),
            rq,
            Op::Permute { x: a, perm },
        ))
    }

    // ── Reductions ──────────────────────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let s = fixed_sum(self.data(a));
        let rq = self.needs(a);
        self.push(vec![s], vec![1], rq, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = T::from_usize(self.data(a).len());
        let s = fixed_sum(self.data(a)) / n;
        let rq = self.needs(a);
        self.push(vec![s], vec![1], rq, Op::Mean(a))
    }

    /// Sum of squared differences, `Σᵢ (aᵢ - bᵢ)²`.
    pub fn sq_err(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sq_err", a, b)?;
        let (ad, bd) = (self.data(a), self.data(b));
        let mut acc = T::zero();
        for (&x, &y) in ad.iter().zip(bd) {
            let d = x - y;
            acc += d * d;
        }
        let rq = self.needs(a) || self.needs(b);
        Ok(self.push(vec![acc], vec![1], rq, Op::SqErr(a, b)))
    }

    /// Mean squared error, `sq_err / numel`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.data(a).len();
        let se = self.sq_err(a, b)?;
        Ok(self.scale(se, T::one() / T::from_usize(n)))
    }

    /// Scale a signal of `2k` reals so its average complex-symbol power is 1:
    /// `out = x * sqrt(k) / ‖x‖₂`.
    pub fn power_norm(&mut self, a: Var) -> Result<Var> {
        let x = self.data(a);
        debug_assert!(x.len() >= 2 && x.len() % 2 == 0);
        let norm = conv::dot4(x, x).sqrt();
        if norm == T::zero() || !norm.is_finite() {
            return Err(Error::DegenerateSignal);
        }
        let c = T::from_usize(x.len() / 2).sqrt();
        let alpha = c / norm;
        let data = x.iter().map(|&v| v * alpha).collect();
        let rq = self.needs(a);
        Ok(self.push(
            data,
            self.nodes[a.idx()].shape.clone(),
            rq,
            Op::PowerNorm(a),
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Accumulate `d loss / d node` into every `requires_grad` node reachable
    /// from `loss`. Repeated calls accumulate additively; callers zero or
    /// discard the tape between steps.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = &self.nodes[loss.idx()];
        if node.data.len() != 1 {
            return Err(Error::NotScalar {
                op: "backward",
                shape: node.shape.clone(),
            });
        }
        if !node.requires_grad {
            return Ok(());
        }
        // Each pass runs on a fresh buffer and is merged into the persistent
        // store afterwards, so repeated calls accumulate additively.
        let mut pass: Vec<Option<Vec<T>>> = Vec::new();
        pass.resize_with(loss.idx() + 1, || None);
        pass[loss.idx()] = Some(vec![T::one()]);

        let nodes = &self.nodes;
        let grads = &mut pass;
        for i in (0..=loss.idx()).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if nodes[a.idx()].requires_grad {
                        axpy(ensure(grads, *a, nodes), &g, T::one());
                    }
                    if nodes[b.idx()].requires_grad {
                        axpy(ensure(grads, *b, nodes), &g, T::one());
                    }
                }
                Op::Sub(a, b) => {
                    if nodes[a.idx()].requires_grad {
                        axpy(ensure(grads, *a, nodes), &g, T::one());
                    }
                    if nodes[b.idx()].requires_grad {
                        axpy(ensure(grads, *b, nodes), &g, -T::one());
                    }
                }
                Op::Mul(a, b) => {
                    if nodes[a.idx()].requires_grad {
                        let bd = &nodes[b.idx()].data;
                        let slot = ensure(grads, *a, nodes);
                        for ((d, &gv), &bv) in slot.iter_mut().zip(&g).zip(bd) {
                            *d += gv * bv;
                        }
                    }
                    if nodes[b.idx()].requires_grad {
                        let ad = &nodes[a.idx()].data;
                        let slot = ensure(grads, *b, nodes);
                        for ((d, &gv), &av) in slot.iter_mut().zip(&g).zip(ad) {
                            *d += gv * av;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    if nodes[a.idx()].requires_grad {
                        axpy(ensure(grads, *a, nodes), &g, *c);
                    }
                }
                Op::Exp(a) => {
                    if nodes[a.idx()].requires_grad {
                        let out = &nodes[i].data;
                        let slot = ensure(grads, *a, nodes);
                        for ((d, &gv), &e) in slot.iter_mut().zip(&g).zip(out) {
                            *d += gv * e;
                        }
                    }
                }
                Op::Tanh(a) => {
                    if nodes[a.idx()].requires_grad {
                        let out = &nodes[i].data;
                        let slot = ensure(grads, *a, nodes);
                        for ((d, &gv), &t) in slot.iter_mut().zip(&g).zip(out) {
                            *d += gv * (T::one() - t * t);
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    if nodes[a.idx()].requires_grad {
                        let out = &nodes[i].data;
                        let slot = ensure(grads, *a, nodes);
                        for ((d, &gv), &s) in slot.iter_mut().zip(&g).zip(out) {
                            *d += gv * s * (T::one() - s);
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    if nodes[a.idx()].requires_grad {
                        let slope = *slope;
                        let xin = &nodes[a.idx()].data;
                        let slot = ensure(grads, *a, nodes);
                        for ((d, &gv), &x) in slot.iter_mut().zip(&g).zip(xin) {
                            *d += if x > T::zero() { gv } else { gv * slope };
                        }
                    }
                }
                Op::MatMul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    if nodes[a.idx()].requires_grad {
                        // da = g · bᵀ, as axpy over contiguous bᵀ rows.
                        let bd = &nodes[b.idx()].data;
                        let mut bt = vec![T::zero(); n * k];
                        for p in 0..k {
                            for j in 0..n {
                                bt[j * k + p] = bd[p * n + j];
                            }
                        }
                        let da = ensure(grads, *a, nodes);
                        for i2 in 0..m {
                            let g_row = &g[i2 * n..(i2 + 1) * n];
                            let da_row = &mut da[i2 * k..(i2 + 1) * k];
                            for (j, &gv) in g_row.iter().enumerate() {
                                if gv != T::zero() {
                                    for (d, &bv) in da_row.iter_mut().zip(&bt[j * k..(j + 1) * k])
                                    {
                                        *d += gv * bv;
                                    }
                                }
                            }
                        }
                    }
                    if nodes[b.idx()].requires_grad {
                        let ad = &nodes[a.idx()].data;
                        let db = ensure(grads, *b, nodes);
                        for i2 in 0..m {
                            let g_row = &g[i2 * n..(i2 + 1) * n];
                            for p in 0..k {
                                let av = ad[i2 * k + p];
                                for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(g_row) {
                                    *d += av * gv;
                                }
                            }
                        }
                    }
                }
                Op::Conv2d { x, w, bias, spec } => {
                    if nodes[x.idx()].requires_grad {
                        let wd = &nodes[w.idx()].data;
                        conv::conv2d_backward_input(&g, wd, spec, ensure(grads, *x, nodes));
                    }
                    if nodes[w.idx()].requires_grad {
                        let xd = &nodes[x.idx()].data;
                        conv::conv2d_backward_weights(xd, &g, spec, ensure(grads, *w, nodes));
                    }
                    if let Some(b) = bias {
                        if nodes[b.idx()].requires_grad {
                            conv::conv2d_backward_bias(&g, spec, ensure(grads, *b, nodes));
                        }
                    }
                }
                Op::ConvT2d { x, w, bias, spec } => {
                    if nodes[x.idx()].requires_grad {
                        let wd = &nodes[w.idx()].data;
                        conv::convt2d_backward_input(&g, wd, spec, ensure(grads, *x, nodes));
                    }
                    if nodes[w.idx()].requires_grad {
                        let xd = &nodes[x.idx()].data;
                        conv::convt2d_backward_weights(xd, &g, spec, ensure(grads, *w, nodes));
                    }
                    if let Some(b) = bias {
                        if nodes[b.idx()].requires_grad {
                            conv::conv2d_backward_bias(&g, spec, ensure(grads, *b, nodes));
                        }
                    }
                }
                Op::Reshape(a) => {
                    if nodes[a.idx()].requires_grad {
                        axpy(ensure(grads, *a, nodes), &g, T::one());
                    }
                }
                Op::Permute { x, perm } => {
                    if nodes[x.idx()].requires_grad {
                        let slot = ensure(grads, *x, nodes);
                        for (j, &p) in perm.iter().enumerate() {
                            slot[p as usize] += g[j];
                        }
                    }
                }
                Op::Sum(a) => {
                    if nodes[a.idx()].requires_grad {
                        let gv = g[0];
                        ensure(grads, *a, nodes).iter_mut().for_each(|d| *d += gv);
                    }
                }
                Op::Mean(a) => {
                    if nodes[a.idx()].requires_grad {
                        let n = T::from_usize(nodes[a.idx()].data.len());
                        let gv = g[0] / n;
                        ensure(grads, *a, nodes).iter_mut().for_each(|d| *d += gv);
                    }
                }
                Op::SqErr(a, b) => {
                    let two_g = g[0] * T::from_f64(2.0);
                    let (ad, bd) = (&nodes[a.idx()].data, &nodes[b.idx()].data);
                    if nodes[a.idx()].requires_grad {
                        let slot = ensure(grads, *a, nodes);
                        for ((d, &x), &y) in slot.iter_mut().zip(ad).zip(bd) {
                            *d += two_g * (x - y);
                        }
                    }
                    if nodes[b.idx()].requires_grad {
                        let slot = ensure(grads, *b, nodes);
                        for ((d, &x), &y) in slot.iter_mut().zip(ad).zip(bd) {
                            *d -= two_g * (x - y);
                        }
                    }
                }
                Op::PowerNorm(a) => {
                    if nodes[a.idx()].requires_grad {
                        let xd = &nodes[a.idx()].data;
                        let r2 = conv::dot4(xd, xd);
                        let r = r2.sqrt();
                        let c = T::from_usize(xd.len() / 2).sqrt();
                        let alpha = c / r;
                        let xg = conv::dot4(xd, &g);
                        let k2 = xg / r2;
                        let slot = ensure(grads, *a, nodes);
                        for ((d, &gv), &xv) in slot.iter_mut().zip(&g).zip(xd) {
                            *d += alpha * (gv - xv * k2);
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }

        if self.grads.len() < self.nodes.len() {
            self.grads.resize_with(self.nodes.len(), || None);
        }
        for (i, contribution) in pass.into_iter().enumerate() {
            if let Some(c) = contribution {
                match &mut self.grads[i] {
                    Some(g) => {
                        for (a, b) in g.iter_mut().zip(&c) {
                            *a += *b;
                        }
                    }
                    slot => *slot = Some(c),
                }
            }
        }
        Ok(())
    }
}

fn zip_map<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// `dst += c * src`
fn axpy<T: Real>(dst: &mut [T], src: &[T], c: T) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

/// Sum with a fixed 4-way unroll (stable summation order).
fn fixed_sum<T: Real>(a: &[T]) -> T {
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for i in 0..chunks {
        let j = i * 4;
        s0 += a[j];
        s1 += a[j + 1];
        s2 += a[j + 2];
        s3 += a[j + 3];
    }
    let mut tail = T::zero();
    for j in chunks * 4..n {
        tail += a[j];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

fn ensure<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], v: Var, nodes: &[Node<T>]) -> &'a mut [T] {
    let n = nodes[v.idx()].data.len();
    grads[v.idx()]
        .get_or_insert_with(|| vec![T::zero(); n])
        .as_mut_slice()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let mut t = Tape::<f64>::new();
        let eye = t
            .constant(
                vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
                vec![3, 3],
            )
            .unwrap();
        let a_data: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
        let a = t.constant(a_data.clone(), vec![3, 3]).unwrap();
        let y = t.matmul(eye, a).unwrap();
        assert_eq!(t.data(y), a_data.as_slice());
    }

    #[test]
    fn conv_delta_kernel_identity() {
        let mut t = Tape::<f64>::new();
        let x_data: Vec<f64> = (0..2 * 5 * 5).map(|i| (i as f64).sin()).collect();
        let x = t.constant(x_data.clone(), vec![2, 5, 5]).unwrap();
        // 2->2 conv whose kernel routes each channel to itself via a centered 1.
        let mut w = vec![0.0; 2 * 2 * 9];
        w[4] = 1.0; // out 0, in 0
        w[2 * 2 * 9 - 5] = 1.0; // out 1, in 1, center
        let w = t.constant(w, vec![2, 2, 3, 3]).unwrap();
        let y = t.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(t.data(y), x_data.as_slice());
    }

    #[test]
    fn exp_of_zero_is_one() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(vec![0.0; 4], vec![4]).unwrap();
        let y = t.exp(x);
        assert_eq!(t.data(y), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_sum_of_squares() {
        // loss = sum(x ⊙ x), x = [1, 2, 3] → grad = [2, 4, 6]
        let mut t = Tape::<f64>::new();
        let x = t.leaf(vec![1.0, 2.0, 3.0], vec![3], true).unwrap();
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum(sq);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_of_mean() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(vec![5.0, -1.0, 2.0, 0.5], vec![4], true).unwrap();
        let loss = t.mean(x);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(vec![1.0, 2.0], vec![2], true).unwrap();
        let y = t.scale(x, 2.0);
        let err = t.backward(y).unwrap_err();
        assert!(matches!(err, Error::NotScalar { .. }));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(vec![3.0], vec![1], true).unwrap();
        let loss = t.mul(x, x).unwrap();
        t.backward(loss).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[12.0]); // 2 * dx(x²) = 2 * 6
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut t = Tape::<f32>::new();
        let a = t.constant(vec![0.0; 4], vec![4]).unwrap();
        let b = t.constant(vec![0.0; 5], vec![5]).unwrap();
        let err = t.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains('4') && msg.contains('5'), "{msg}");
    }

    #[test]
    fn inference_mode_allocates_no_grad_state() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(vec![1.0, 2.0], vec![2]).unwrap();
        let y = t.sigmoid(x);
        let z = t.sum(y);
        t.backward(z).unwrap(); // loss does not require grad → no-op
        assert!(!t.has_grad_state());
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn power_norm_unit_symbol_power() {
        let mut t = Tape::<f64>::new();
        let raw: Vec<f64> = (0..16).map(|i| (i as f64 - 3.5) * 0.7).collect();
        let x = t.constant(raw, vec![16]).unwrap();
        let y = t.power_norm(x).unwrap();
        let k = 8.0;
        let p: f64 = t.data(y).iter().map(|v| v * v).sum::<f64>() / k;
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn power_norm_rejects_zero_signal() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(vec![0.0; 8], vec![8]).unwrap();
        assert!(matches!(t.power_norm(x), Err(Error::DegenerateSignal)));
    }

    #[test]
    fn permute_roundtrip() {
        let mut t = Tape::<f64>::new();
        let x_data = vec![10.0, 20.0, 30.0, 40.0];
        let x = t.leaf(x_data.clone(), vec![4], true).unwrap();
        let perm = vec![2u32, 0, 3, 1];
        let y = t.permute(x, perm.clone()).unwrap();
        let mut inv = vec![0u32; 4];
        for (j, &p) in perm.iter().enumerate() {
            inv[p as usize] = j as u32;
        }
        let z = t.permute(y, inv).unwrap();
        assert_eq!(t.data(z), x_data.as_slice());
        let loss = t.sum(z);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0; 4]);
    }
}
