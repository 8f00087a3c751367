//! Reverse-mode automatic differentiation over a per-forward tape.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes hold their value;
//! `backward` walks the tape in reverse and returns gradients for every node
//! that depends on a parameter.

use std::sync::Arc;

use crate::Real;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, ConvGeom, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Constant sparse matrix stored by output column: column `m` of the result
/// is `sum_k w[k] * input[:, idx[k]]` for `k` in `ptr[m]..ptr[m+1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseCols<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub ptr: Vec<usize>,
    pub idx: Vec<usize>,
    pub w: Vec<T>,
}

impl<T: Real> SparseCols<T> {
    pub fn from_columns(n_in: usize, columns: &[Vec<(usize, T)>]) -> Self {
        let mut ptr = Vec::with_capacity(columns.len() + 1);
        let (mut idx, mut w) = (Vec::new(), Vec::new());
        ptr.push(0);
        for col in columns {
            for &(i, v) in col {
                assert!(i < n_in, "sparse index {i} out of {n_in}");
                idx.push(i);
                w.push(v);
            }
            ptr.push(idx.len());
        }
        Self {
            n_in,
            n_out: columns.len(),
            ptr,
            idx,
            w,
        }
    }

    pub fn nnz(&self) -> usize {
        self.idx.len()
    }

    pub fn cast<U: Real>(&self) -> SparseCols<U> {
        SparseCols {
            n_in: self.n_in,
            n_out: self.n_out,
            ptr: self.ptr.clone(),
            idx: self.idx.clone(),
            w: self.w.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

enum Op<T> {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRowBias(Var, Var),
    AddChanBias(Var, Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom, cols: Vec<T> },
    Upsample2 { x: Var },
    TileCols(Var),
    GatherRows { x: Var, rows: Vec<usize> },
    SpMM { x: Var, s: Arc<SparseCols<T>> },
    SumAll(Var),
    WeightedSum(Vec<(Var, T)>),
    /// Real function of `x` whose gradient was computed in the forward pass.
    Fused { x: Var, local: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Adds parameter gradients into `acc`, one buffer per store entry.
    pub fn accumulate(&self, acc: &mut [Vec<T>]) {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                for (a, b) in acc[pid.0].iter_mut().zip(g) {
                    *a += *b;
                }
            }
        }
    }
}

fn zip_add<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param(_) => true,
            _ => parents.iter().any(|p| self.nodes[p.0].needs_grad),
        };
        debug_assert!(value.all_finite(), "non-finite activation");
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, &[])
    }

    /// An input whose gradient is recorded.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        let v = self.push(t, Op::Input, &[]);
        self.nodes[v.0].needs_grad = true;
        v
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id), &[])
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.binary(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let ta = self.value(a);
        let t = Tensor::from_vec(ta.shape(), ta.data().iter().map(|v| *v * s).collect());
        self.push(t, Op::Scale(a, s), &[a])
    }

    /// `x[m,n] + b[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        let n = tb.len();
        assert_eq!(tx.shape().last(), Some(&n), "row bias width");
        let mut out = tx.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, v) in row.iter_mut().zip(tb.data()) {
                *o += *v;
            }
        }
        self.push(out, Op::AddRowBias(x, b), &[x, b])
    }

    /// `x[c, ...] + b[c]` broadcast over everything after the leading axis.
    pub fn add_chan_bias(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        let (c, p) = tx.rows_cols();
        assert_eq!(c, tb.len(), "channel bias width");
        let mut out = tx.clone();
        for (row, v) in out.data_mut().chunks_mut(p).zip(tb.data()) {
            for o in row {
                *o += *v;
            }
        }
        self.push(out, Op::AddChanBias(x, b), &[x, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        assert_eq!(tb.shape()[0], k, "matmul inner dims {:?} x {:?}", ta.shape(), tb.shape());
        let n = tb.shape()[1];
        let mut out = vec![T::zero(); m * n];
        gemm_nn(m, k, n, ta.data(), tb.data(), &mut out);
        self.push(Tensor::from_vec(&[m, n], out), Op::MatMul(a, b), &[a, b])
    }

    /// `a[m,k] * b[n,k]^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        assert_eq!(tb.shape()[1], k, "matmul_bt inner dims {:?} x {:?}", ta.shape(), tb.shape());
        let n = tb.shape()[0];
        let mut out = vec![T::zero(); m * n];
        gemm_nt(m, k, n, ta.data(), tb.data(), &mut out);
        self.push(Tensor::from_vec(&[m, n], out), Op::MatMulBt(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let (m, n) = ta.rows_cols();
        let src = ta.data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(Tensor::from_vec(&[n, m], out), Op::Transpose(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor::from_vec(ta.shape(), ta.data().iter().map(|v| v.max(T::zero())).collect());
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor::from_vec(ta.shape(), ta.data().iter().map(|v| sigmoid(*v)).collect());
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let n = *ta.shape().last().unwrap();
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(n) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let tx = self.value(x);
        let n = *tx.shape().last().unwrap();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = tx.len() / n;
        let mut xhat = vec![T::zero(); tx.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); tx.len()];
        let nf = T::from_usize(n).unwrap();
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / nf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..n {
                let xh = (row[j] - mean) * rs;
                xhat[r * n + j] = xh;
                out[r * n + j] = xh * g[j] + b[j];
            }
        }
        let t = Tensor::from_vec(tx.shape(), out);
        self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    /// Stacks along the leading axis; trailing shapes must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let tail: Vec<usize> = self.shape(parts[0])[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            assert_eq!(&t.shape()[1..], &tail[..], "concat_rows trailing shape");
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.push(Tensor::from_vec(&shape, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Joins 2D tensors side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.shape(parts[0])[0];
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let s = self.shape(*p);
                assert_eq!((s.len(), s[0]), (2, m), "concat_cols expects [m, n] parts");
                s[1]
            })
            .collect();
        let n: usize = widths.iter().sum();
        let mut out = vec![T::zero(); m * n];
        let mut off = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = self.value(*p).data();
            for i in 0..m {
                out[i * n + off..i * n + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        self.push(Tensor::from_vec(&[m, n], out), Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let t = self.value(x);
        let (m, n) = (t.shape()[0], t.shape()[1]);
        assert!(start < end && end <= n);
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&t.data()[i * n + start..i * n + end]);
        }
        self.push(Tensor::from_vec(&[m, w], out), Op::SliceCols { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let t = self.value(x).clone().reshaped(shape);
        self.push(t, Op::Reshape(x), &[x])
    }

    /// `x[cin,h,w]` convolved with `w[cout,cin,k,k]`, no bias.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Var {
        let (tx, tw) = (self.value(x), self.value(w));
        let xs = tx.shape();
        let ws = tw.shape();
        assert_eq!(xs.len(), 3, "conv input must be [c,h,w], got {xs:?}");
        assert_eq!(ws[1], xs[0], "conv channels {ws:?} vs {xs:?}");
        let geom = ConvGeom {
            cin: xs[0],
            h: xs[1],
            w: xs[2],
            k: ws[2],
            stride,
            pad,
        };
        let (ho, wo) = geom.out_hw();
        let kk = geom.cin * geom.k * geom.k;
        let cols = if geom.k == 1 && stride == 1 && pad == 0 {
            tx.data().to_vec()
        } else {
            geom.im2col(tx.data())
        };
        let mut out = vec![T::zero(); ws[0] * ho * wo];
        gemm_nn(ws[0], kk, ho * wo, tw.data(), &cols, &mut out);
        let t = Tensor::from_vec(&[ws[0], ho, wo], out);
        self.push(t, Op::Conv2d { x, w, geom, cols }, &[x, w])
    }

    /// Nearest-neighbour 2x upsampling cropped to `(h, w)`.
    pub fn upsample2(&mut self, x: Var, h: usize, w: usize) -> Var {
        let t = self.value(x);
        let (c, ih, iw) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        assert!(h.div_ceil(2) <= ih && w.div_ceil(2) <= iw, "upsample target too large");
        let mut out = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[(ch * h + y) * w + xx] = t.data()[(ch * ih + y / 2) * iw + xx / 2];
                }
            }
        }
        self.push(Tensor::from_vec(&[c, h, w], out), Op::Upsample2 { x }, &[x])
    }

    /// Repeats a vector `v[c]` as the columns of a `[c, n]` matrix.
    pub fn tile_cols(&mut self, v: Var, n: usize) -> Var {
        let t = self.value(v);
        let c = t.len();
        let mut out = Vec::with_capacity(c * n);
        for &x in t.data() {
            out.extend(std::iter::repeat(x).take(n));
        }
        self.push(Tensor::from_vec(&[c, n], out), Op::TileCols(v), &[v])
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let t = self.value(x);
        let (_, n) = t.rows_cols();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&t.data()[r * n..(r + 1) * n]);
        }
        self.push(
            Tensor::from_vec(&[rows.len(), n], out),
            Op::GatherRows { x, rows: rows.to_vec() },
            &[x],
        )
    }

    /// `x[c, n_in]` times a constant sparse `[n_in, n_out]` matrix.
    pub fn spmm(&mut self, x: Var, s: Arc<SparseCols<T>>) -> Var {
        let t = self.value(x);
        let (c, n) = t.rows_cols();
        assert_eq!(n, s.n_in, "spmm width");
        let mut out = vec![T::zero(); c * s.n_out];
        for ch in 0..c {
            let src = &t.data()[ch * n..(ch + 1) * n];
            let dst = &mut out[ch * s.n_out..(ch + 1) * s.n_out];
            for (m, o) in dst.iter_mut().enumerate() {
                let mut acc = T::zero();
                for k in s.ptr[m]..s.ptr[m + 1] {
                    acc += s.w[k] * src[s.idx[k]];
                }
                *o = acc;
            }
        }
        let n_out = s.n_out;
        self.push(Tensor::from_vec(&[c, n_out], out), Op::SpMM { x, s }, &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    /// `sum_i w_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut s = T::zero();
        for (v, w) in terms {
            assert_eq!(self.value(*v).len(), 1, "weighted_sum takes scalars");
            s += self.value(*v).data()[0] * *w;
        }
        let parents: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(Tensor::scalar(s), Op::WeightedSum(terms.to_vec()), &parents)
    }

    /// Records a scalar function of `x` with its precomputed gradient.
    pub fn fused_scalar(&mut self, x: Var, value: T, local: Vec<T>) -> Var {
        assert_eq!(local.len(), self.value(x).len());
        self.push(Tensor::scalar(value), Op::Fused { x, local }, &[x])
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one(); self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.backprop(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, nd)| match nd.op {
                Op::Param(p) => Some((p, i)),
                _ => None,
            })
            .collect();
        Gradients { grads, params }
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> Option<&'a mut Vec<T>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.nodes[v.0].value.len();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); len]))
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    zip_add(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    zip_add(gb, g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    zip_add(ga, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (d, s) in gb.iter_mut().zip(g) {
                        *d -= *s;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, s), y) in ga.iter_mut().zip(g).zip(vb) {
                        *d += *s * *y;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((d, s), x) in gb.iter_mut().zip(g).zip(va) {
                        *d += *s * *x;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for (d, v) in ga.iter_mut().zip(g) {
                        *d += *v * *s;
                    }
                }
            }
            Op::AddRowBias(x, b) => {
                let n = self.value(*b).len();
                if let Some(gx) = self.slot(grads, *x) {
                    zip_add(gx, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for row in g.chunks(n) {
                        zip_add(gb, row);
                    }
                }
            }
            Op::AddChanBias(x, b) => {
                let (_, p) = self.value(*x).rows_cols();
                if let Some(gx) = self.slot(grads, *x) {
                    zip_add(gx, g);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for (d, row) in gb.iter_mut().zip(g.chunks(p)) {
                        *d += row.iter().copied().sum::<T>();
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_nt(m, n, k, g, tb.data(), ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_tn(k, m, n, ta.data(), g, gb);
                }
            }
            Op::MatMulBt(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if let Some(ga) = self.slot(grads, *a) {
                    gemm_nn(m, n, k, g, tb.data(), ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    gemm_tn(n, m, k, g, ta.data(), gb);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).rows_cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Relu(a) => {
                let y = node.value.data();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, s), v) in ga.iter_mut().zip(g).zip(y) {
                        if *v > T::zero() {
                            *d += *s;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((d, s), v) in ga.iter_mut().zip(g).zip(y) {
                        *d += *s * *v * (T::one() - *v);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let n = *node.value.shape().last().unwrap();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((dr, gr), yr) in ga.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let inner: T = gr.iter().zip(yr).map(|(a, b)| *a * *b).sum();
                        for j in 0..n {
                            dr[j] += yr[j] * (gr[j] - inner);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let n = *node.value.shape().last().unwrap();
                let gm = self.value(*gamma).data();
                if let Some(gb) = self.slot(grads, *beta) {
                    for row in g.chunks(n) {
                        zip_add(gb, row);
                    }
                }
                if let Some(gg) = self.slot(grads, *gamma) {
                    for (row, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += row[j] * xr[j];
                        }
                    }
                }
                if let Some(gx) = self.slot(grads, *x) {
                    let nf = T::from_usize(n).unwrap();
                    for (r, ((dr, gr), xr)) in gx.chunks_mut(n).zip(g.chunks(n)).zip(xhat.chunks(n)).enumerate() {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..n {
                            let d = gr[j] * gm[j];
                            m1 += d;
                            m2 += d * xr[j];
                        }
                        m1 /= nf;
                        m2 /= nf;
                        for j in 0..n {
                            dr[j] += rstd[r] * (gr[j] * gm[j] - m1 - xr[j] * m2);
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    if let Some(gp) = self.slot(grads, *p) {
                        zip_add(gp, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let mut off = 0;
                for p in parts {
                    let w = self.shape(*p)[1];
                    if let Some(gp) = self.slot(grads, *p) {
                        for i in 0..m {
                            zip_add(&mut gp[i * w..(i + 1) * w], &g[i * n + off..i * n + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let n = self.shape(*x)[1];
                let (m, w) = (node.value.shape()[0], node.value.shape()[1]);
                if let Some(gx) = self.slot(grads, *x) {
                    for i in 0..m {
                        zip_add(&mut gx[i * n + start..i * n + start + w], &g[i * w..(i + 1) * w]);
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    zip_add(gx, g);
                }
            }
            Op::Conv2d { x, w, geom, cols } => {
                let tw = self.value(*w);
                let cout = tw.shape()[0];
                let kk = geom.cin * geom.k * geom.k;
                let (ho, wo) = geom.out_hw();
                let p = ho * wo;
                if let Some(gw) = self.slot(grads, *w) {
                    gemm_nt(cout, p, kk, g, cols, gw);
                }
                if self.nodes[x.0].needs_grad {
                    let mut gcols = vec![T::zero(); kk * p];
                    gemm_tn(kk, cout, p, tw.data(), g, &mut gcols);
                    let gx = self.slot(grads, *x).unwrap();
                    if geom.k == 1 && geom.stride == 1 && geom.pad == 0 {
                        zip_add(gx, &gcols);
                    } else {
                        geom.col2im(&gcols, gx);
                    }
                }
            }
            Op::Upsample2 { x } => {
                let s = self.shape(*x);
                let (c, ih, iw) = (s[0], s[1], s[2]);
                let (h, w) = (node.value.shape()[1], node.value.shape()[2]);
                if let Some(gx) = self.slot(grads, *x) {
                    for ch in 0..c {
                        for y in 0..h {
                            for xx in 0..w {
                                gx[(ch * ih + y / 2) * iw + xx / 2] += g[(ch * h + y) * w + xx];
                            }
                        }
                    }
                }
            }
            Op::TileCols(v) => {
                let n = node.value.shape()[1];
                if let Some(gv) = self.slot(grads, *v) {
                    for (d, row) in gv.iter_mut().zip(g.chunks(n)) {
                        *d += row.iter().copied().sum::<T>();
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                let (_, n) = self.value(*x).rows_cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for (k, &r) in rows.iter().enumerate() {
                        zip_add(&mut gx[r * n..(r + 1) * n], &g[k * n..(k + 1) * n]);
                    }
                }
            }
            Op::SpMM { x, s } => {
                let (c, n) = self.value(*x).rows_cols();
                if let Some(gx) = self.slot(grads, *x) {
                    for ch in 0..c {
                        let go = &g[ch * s.n_out..(ch + 1) * s.n_out];
                        let dst = &mut gx[ch * n..(ch + 1) * n];
                        for (m, gv) in go.iter().enumerate() {
                            for k in s.ptr[m]..s.ptr[m + 1] {
                                dst[s.idx[k]] += s.w[k] * *gv;
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                if let Some(gx) = self.slot(grads, *x) {
                    for d in gx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for (v, w) in terms {
                    if let Some(gv) = self.slot(grads, *v) {
                        gv[0] += g[0] * *w;
                    }
                }
            }
            Op::Fused { x, local } => {
                if let Some(gx) = self.slot(grads, *x) {
                    for (d, l) in gx.iter_mut().zip(local) {
                        *d += g[0] * *l;
                    }
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus<T: Real>(z: T) -> T {
    if z > T::zero() {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
