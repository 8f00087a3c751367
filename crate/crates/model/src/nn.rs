//! Layers built on the graph: each holds parameter handles and records its
//! forward pass onto a caller-supplied [`Graph`].

use crate::Real;
use rand::Rng;

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Weight initialisation scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `sqrt(2 / fan_in)`, for layers followed by a ReLU.
    He,
    /// `sqrt(1 / fan_in)`.
    Lecun,
    Zero,
}

impl Init {
    fn tensor<T: Real, R: Rng>(self, shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
        match self {
            Init::He => Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng),
            Init::Lecun => Tensor::randn(shape, (1.0 / fan_in as f64).sqrt(), rng),
            Init::Zero => Tensor::zeros(shape),
        }
    }
}

/// `y = x W^T + b` over the rows of `x[n, d_in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init.tensor(&[d_out, d_in], d_in, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Self { w, b, d_in, d_out }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let y = g.matmul_bt(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row_bias(y, b)
            }
            None => y,
        }
    }
}

/// Square-kernel 2D convolution over `[c, h, w]` maps.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), init.tensor(&[cout, cin, k, k], cin * k * k, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[cout])));
        Self {
            w,
            b,
            k,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let y = g.conv2d(x, w, self.stride, self.pad);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_chan_bias(y, b)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[d], T::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, T::lit(Self::EPS))
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    /// `d_kv` is the width of the key/value source.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        d_kv: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), d, d, true, Init::Lecun, rng),
            k: Linear::new(store, &format!("{name}.k"), d_kv, d, true, Init::Lecun, rng),
            v: Linear::new(store, &format!("{name}.v"), d_kv, d, true, Init::Lecun, rng),
            o: Linear::new(store, &format!("{name}.o"), d, d, true, Init::Lecun, rng),
            heads,
        }
    }

    /// Returns the output rows and each head's probability matrix.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        queries: Var,
        source: Var,
    ) -> (Var, Vec<Var>) {
        let q = self.q.forward(g, store, queries);
        let k = self.k.forward(g, store, source);
        let v = self.v.forward(g, store, source);
        let d = self.q.d_out;
        let dh = d / self.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (g.slice_cols(q, a, b), g.slice_cols(k, a, b), g.slice_cols(v, a, b))
            };
            let s = g.matmul_bt(qh, kh);
            let s = g.scale(s, scale);
            let p = g.softmax_rows(s);
            probs.push(p);
            outs.push(g.matmul(p, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        (self.o.forward(g, store, cat), probs)
    }
}

/// Attention then feed-forward, each wrapped as `LN(x + f(x))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub attn: Attention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl Block {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        d: usize,
        d_kv: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            attn: Attention::new(store, &format!("{name}.attn"), d, d_kv, heads, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, 2 * d, true, Init::He, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), 2 * d, d, true, Init::Lecun, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
        }
    }

    /// `source = None` makes the block self-attention.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        source: Option<Var>,
    ) -> (Var, Vec<Var>) {
        let (a, probs) = self.attn.forward(g, store, x, source.unwrap_or(x));
        let x = g.add(x, a);
        let x = self.ln1.forward(g, store, x);
        let h = self.ff1.forward(g, store, x);
        let h = g.relu(h);
        let h = self.ff2.forward(g, store, h);
        let x2 = g.add(x, h);
        (self.ln2.forward(g, store, x2), probs)
    }
}
