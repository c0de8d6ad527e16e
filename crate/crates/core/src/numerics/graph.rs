//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep.

use rand::Rng;

use super::kernels;
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, tb: bool, batched: bool },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: T },
    Transpose { a: Var },
    ConcatRows { parts: Vec<Var> },
    SliceRows { a: Var, start: usize },
    Reshape { a: Var },
    Relu { a: Var },
    Softmax { a: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Dropout { a: Var, mask: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, eps: T, pad: usize, probs: Vec<T>, count: usize },
    SplitHeads { a: Var, heads: usize },
    MergeHeads { a: Var, heads: usize },
    Sum { a: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recorded computation. Build one per forward pass.
pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a[.., k] · b[k, n] -> [.., n]`, or a batched product when both are rank 3.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() == 3 && sb.len() == 3 {
            return self.bmm(a, b, false);
        }
        self.matmul_impl(a, b, false, &sa, &sb)
    }

    /// `a[.., k] · b[n, k]ᵀ -> [.., n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        self.matmul_impl(a, b, true, &sa, &sb)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, tb: bool, sa: &[usize], sb: &[usize]) -> Result<Var> {
        if sb.len() != 2 {
            return Err(Error::shape("matmul", format!("rhs must be rank 2, got {sb:?}")));
        }
        let k = *sa.last().unwrap();
        let (bk, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != bk {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?} (transposed: {tb})")));
        }
        let m = self.value(a).rows();
        let mut out = vec![T::zero(); m * n];
        kernels::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), tb, &mut out, false);
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, tb, batched: false }, &[a, b]))
    }

    /// Batched product `a[B, m, k] · b[B, k, n]` (or `b[B, n, k]ᵀ` when `transpose_b`).
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape("bmm", format!("{sa:?} x {sb:?}")));
        }
        let (count, m, k) = (sa[0], sa[1], sa[2]);
        let (bk, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != bk {
            return Err(Error::shape("bmm", format!("{sa:?} x {sb:?} (transposed: {transpose_b})")));
        }
        let mut out = vec![T::zero(); count * m * n];
        kernels::bmm(count, m, k, n, self.value(a).data(), false, self.value(b).data(), transpose_b, &mut out, false);
        let value = Tensor::new(&[count, m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, tb: transpose_b, batched: true }, &[a, b]))
    }

    /// Elementwise sum. `b` may also match only the trailing axes of `a`,
    /// in which case it is broadcast over the leading ones.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape("add", format!("{sa:?} + {sb:?}")));
        }
        let bd = self.value(b).data();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(bd.len()) {
            chunk.iter_mut().zip(bd).for_each(|(o, &v)| *o += v);
        }
        let value = Tensor::new(self.shape(a), out)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a), out)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let value = self.value(a).map(|v| v * s);
        self.push(value, Op::Scale { a, s }, &[a])
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() < 2 {
            return Err(Error::shape("transpose", format!("rank-1 input {sa:?}")));
        }
        let (r, c) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let out = transpose_blocks(self.value(a).data(), r, c);
        let mut shape = sa.clone();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Transpose { a }, &[a]))
    }

    /// Concatenate along the first axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(Error::shape("concat_rows", format!("{s:?} vs tail {tail:?}")));
            }
            rows += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::ConcatRows { parts: parts.to_vec() }, parts))
    }

    /// Rows `start..start+len` of the first axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if len == 0 || start + len > sa[0] {
            return Err(Error::shape("slice_rows", format!("{start}..{} of {sa:?}", start + len)));
        }
        let inner: usize = sa[1..].iter().product();
        let out = self.value(a).data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = sa;
        shape[0] = len;
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::SliceRows { a, start }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { a }, &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu { a }, &[a])
    }

    /// Softmax along `axis`; only the last axis is supported.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let rank = self.value(a).rank();
        if axis + 1 != rank {
            return Err(Error::shape("softmax", format!("axis {axis} of rank {rank}; only the last axis is supported")));
        }
        if self.value(a).data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("softmax input".into()));
        }
        let mut value = self.value(a).clone();
        let cols = value.cols();
        kernels::softmax_rows(value.data_mut(), cols);
        Ok(self.push(value, Op::Softmax { a }, &[a]))
    }

    /// Layer normalization over the last axis with affine `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).cols();
        if d < 2 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("x {:?}, gain {:?}, bias {:?}", self.shape(x), self.shape(gain), self.shape(bias)),
            ));
        }
        let rows = self.value(x).rows();
        let mut out = vec![T::zero(); rows * d];
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        kernels::layer_norm_rows(
            self.value(x).data(),
            self.value(gain).data(),
            self.value(bias).data(),
            T::of(eps),
            &mut out,
            Some(&mut xhat),
            Some(&mut rstd),
        );
        let value = Tensor::new(self.shape(x), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    /// Gather rows of `table[V, d]`; output is `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 {
            return Err(Error::shape("embedding", format!("table {st:?}")));
        }
        if ids.is_empty() {
            return Err(Error::shape("embedding", "no ids"));
        }
        let (v, d) = (st[0], st[1]);
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::invalid(format!("embedding id {id} out of range for {v} rows")));
            }
            out.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.push(value, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`; identity when not training.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} not in [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let value = Tensor::new(self.shape(a), out)?;
        Ok(self.push(value, Op::Dropout { a, mask }, &[a]))
    }

    /// Label-smoothed cross entropy averaged over positions whose target is not `pad`.
    ///
    /// Per position with `p = softmax(logits)`:
    /// `(1-eps)·(-ln p[y]) + (eps/V)·Σ_v(-ln p[v])`.
    pub fn cross_entropy_ls(&mut self, logits: Var, targets: &[usize], eps: f64, pad: usize) -> Result<Var> {
        if !(0.0..1.0).contains(&eps) {
            return Err(Error::invalid(format!("label smoothing {eps} not in [0, 1)")));
        }
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.rows() != targets.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} vs {} targets", lv.shape(), targets.len()),
            ));
        }
        let v = lv.cols();
        let count = targets.iter().filter(|&&t| t != pad).count();
        if count == 0 {
            return Err(Error::invalid("cross entropy over an all-padding batch"));
        }
        let eps_t = T::of(eps);
        let vf = T::of(v as f64);
        let mut probs = lv.data().to_vec();
        let mut total = T::zero();
        for (row, &y) in probs.chunks_mut(v).zip(targets) {
            if y == pad {
                continue;
            }
            if y >= v {
                return Err(Error::invalid(format!("target id {y} out of range for {v} classes")));
            }
            let lse = kernels::log_sum_exp(row);
            let sum_x: T = row.iter().copied().sum();
            let nll = lse - row[y];
            let all = vf * lse - sum_x;
            total += (T::one() - eps_t) * nll + eps_t / vf * all;
            for x in row.iter_mut() {
                *x = (*x - lse).exp();
            }
        }
        let loss = total / T::of(count as f64);
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross entropy".into()));
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), eps: eps_t, pad, probs, count },
            &[logits],
        ))
    }

    /// `[B, L, H·dh] -> [B·H, L, dh]`.
    pub fn split_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(Error::shape("split_heads", format!("{s:?} into {heads} heads")));
        }
        let (b, l, d) = (s[0], s[1], s[2]);
        let dh = d / heads;
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        permute_heads(src, &mut out, b, l, heads, dh, true);
        let value = Tensor::new(&[b * heads, l, dh], out)?;
        Ok(self.push(value, Op::SplitHeads { a, heads }, &[a]))
    }

    /// `[B·H, L, dh] -> [B, L, H·dh]`.
    pub fn merge_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 {
            return Err(Error::shape("merge_heads", format!("{s:?} from {heads} heads")));
        }
        let (b, l, dh) = (s[0] / heads, s[1], s[2]);
        let src = self.value(a).data();
        let mut out = vec![T::zero(); src.len()];
        permute_heads(src, &mut out, b, l, heads, dh, false);
        let value = Tensor::new(&[b, l, heads * dh], out)?;
        Ok(self.push(value, Op::MergeHeads { a, heads }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum { a }, &[a])
    }

    /// Reverse sweep from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.shape(root), T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backward_node(node, gy.data(), &mut grads)?;
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, tb, batched } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if *batched {
                    let (count, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let n = node.value.shape()[2];
                    if let Some(ga) = self.slot(grads, *a) {
                        kernels::bmm(count, m, n, k, gy, false, bv.data(), !*tb, ga, true);
                    }
                    if let Some(gb) = self.slot(grads, *b) {
                        if *tb {
                            kernels::bmm(count, n, m, k, gy, true, av.data(), false, gb, true);
                        } else {
                            kernels::bmm(count, k, m, n, av.data(), true, gy, false, gb, true);
                        }
                    }
                } else {
                    let (m, k) = (av.rows(), av.cols());
                    let n = node.value.cols();
                    if let Some(ga) = self.slot(grads, *a) {
                        kernels::gemm(m, n, k, gy, false, bv.data(), !*tb, ga, true);
                    }
                    if let Some(gb) = self.slot(grads, *b) {
                        if *tb {
                            kernels::gemm(n, m, k, gy, true, av.data(), false, gb, true);
                        } else {
                            kernels::gemm(k, m, n, av.data(), true, gy, false, gb, true);
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, gy);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    let w = gb.len();
                    for chunk in gy.chunks(w) {
                        add_into(gb, chunk);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((g, &d), &y) in ga.iter_mut().zip(gy).zip(bv) {
                        *g += d * y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((g, &d), &x) in gb.iter_mut().zip(gy).zip(av) {
                        *g += d * x;
                    }
                }
            }
            Op::Scale { a, s } => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().zip(gy).for_each(|(g, &d)| *g += *s * d);
                }
            }
            Op::Transpose { a } => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let back = transpose_blocks(gy, r, c);
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, &back);
                }
            }
            Op::ConcatRows { parts } => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.slot(grads, p) {
                        add_into(gp, &gy[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::SliceRows { a, start } => {
                let inner: usize = node.value.shape()[1..].iter().product();
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(&mut ga[start * inner..start * inner + gy.len()], gy);
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, gy);
                }
            }
            Op::Relu { a } => {
                let x = self.value(*a).data();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((g, &d), &v) in ga.iter_mut().zip(gy).zip(x) {
                        if v > T::zero() {
                            *g += d;
                        }
                    }
                }
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let c = node.value.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((gr, dr), yr) in ga.chunks_mut(c).zip(gy.chunks(c)).zip(y.chunks(c)) {
                        let dotp = kernels::dot(dr, yr);
                        for ((g, &d), &p) in gr.iter_mut().zip(dr).zip(yr) {
                            *g += p * (d - dotp);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = node.value.cols();
                let gain_v = self.value(*gain).data();
                if let Some(gg) = self.slot(grads, *gain) {
                    for (dr, hr) in gy.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += dr[j] * hr[j];
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, *bias) {
                    for dr in gy.chunks(d) {
                        add_into(gb, dr);
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let nf = T::of(d as f64);
                    let mut dxhat = vec![T::zero(); d];
                    for (r, (dr, hr)) in gy.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            dxhat[j] = dr[j] * gain_v[j];
                            s1 += dxhat[j];
                            s2 += dxhat[j] * hr[j];
                        }
                        let k = rstd[r] / nf;
                        let gr = &mut gx[r * d..(r + 1) * d];
                        for j in 0..d {
                            gr[j] += k * (nf * dxhat[j] - s1 - hr[j] * s2);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = node.value.cols();
                if let Some(gt) = self.slot(grads, *table) {
                    for (i, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &gy[i * d..(i + 1) * d]);
                    }
                }
            }
            Op::Dropout { a, mask } => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((g, &d), &m) in ga.iter_mut().zip(gy).zip(mask) {
                        *g += d * m;
                    }
                }
            }
            Op::CrossEntropy { logits, targets, eps, pad, probs, count } => {
                let v = self.value(*logits).cols();
                let scale = gy[0] / T::of(*count as f64);
                let smooth = *eps / T::of(v as f64);
                if let Some(gl) = self.slot(grads, *logits) {
                    for (r, &y) in targets.iter().enumerate() {
                        if y == *pad {
                            continue;
                        }
                        let pr = &probs[r * v..(r + 1) * v];
                        let gr = &mut gl[r * v..(r + 1) * v];
                        for j in 0..v {
                            let mut d = pr[j] - smooth;
                            if j == y {
                                d -= T::one() - *eps;
                            }
                            gr[j] += scale * d;
                        }
                    }
                }
            }
            Op::SplitHeads { a, heads } => {
                let s = self.shape(*a);
                let (b, l, dh) = (s[0], s[1], s[2] / heads);
                let mut back = vec![T::zero(); gy.len()];
                permute_heads(gy, &mut back, b, l, *heads, dh, false);
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, &back);
                }
            }
            Op::MergeHeads { a, heads } => {
                let s = node.value.shape();
                let (b, l, dh) = (s[0], s[1], s[2] / heads);
                let mut back = vec![T::zero(); gy.len()];
                permute_heads(gy, &mut back, b, l, *heads, dh, true);
                if let Some(ga) = self.slot(grads, *a) {
                    add_into(ga, &back);
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = self.slot(grads, *a) {
                    ga.iter_mut().for_each(|g| *g += gy[0]);
                }
            }
        }
        Ok(())
    }

    /// Lazily allocated gradient buffer for `v`, or `None` if `v` takes no gradient.
    fn slot<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut [T]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(
            grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(node.value.shape()))
                .data_mut(),
        )
    }
}

fn add_into<T: Float>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

/// Transpose each `r×c` block of `x`.
fn transpose_blocks<T: Float>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(r * c).zip(out.chunks_mut(r * c)) {
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    out
}

/// Move between `[B, L, H·dh]` (`split = true` reads this layout) and `[B·H, L, dh]`.
fn permute_heads<T: Float>(src: &[T], dst: &mut [T], b: usize, l: usize, heads: usize, dh: usize, split: bool) {
    let d = heads * dh;
    for bi in 0..b {
        for li in 0..l {
            for h in 0..heads {
                let merged = (bi * l + li) * d + h * dh;
                let split_at = ((bi * heads + h) * l + li) * dh;
                let (from, to) = if split { (merged, split_at) } else { (split_at, merged) };
                dst[to..to + dh].copy_from_slice(&src[from..from + dh]);
            }
        }
    }
}
