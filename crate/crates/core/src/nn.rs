//! Layers shared by the forecasting architectures. Weights are stored
//! `[in, out]` so a layer computes `x @ W + b`.

use std::sync::Arc;

use ndarray::{Array2, ArrayD, IxDyn};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Arr, Ctx, Init, ParamId, ParamStore, Tensor};

/// Registration helper: parameters get `prefix.name` names.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> ParamId {
        self.store.init(name, shape, init, self.rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply<'t>(self, x: Tensor<'t>) -> Tensor<'t> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Gelu => x.gelu(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(bld: &mut Builder, name: &str, d_in: usize, d_out: usize, bias: bool) -> Self {
        let w = bld.param(&format!("{name}.weight"), &[d_in, d_out], Init::FanIn);
        let b = bias.then(|| bld.param(&format!("{name}.bias"), &[d_out], Init::FanInOf(d_in)));
        Linear { w, b }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>) -> Tensor<'t> {
        let y = x.matmul(ctx.param(self.w));
        match self.b {
            Some(b) => y + ctx.param(b),
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(bld: &mut Builder, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: bld.param(&format!("{name}.weight"), &[d], Init::Ones),
            beta: bld.param(&format!("{name}.bias"), &[d], Init::Zeros),
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>) -> Tensor<'t> {
        x.layer_norm(ctx.param(self.gamma), ctx.param(self.beta), Self::EPS)
    }
}

/// Lookup table of `n` learned vectors.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(bld: &mut Builder, name: &str, n: usize, d: usize) -> Self {
        Embedding { table: bld.param(&format!("{name}.weight"), &[n, d], Init::Normal(0.02)) }
    }

    /// Rows for `idx`, reshaped to `shape + [d]`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, idx: &[usize], shape: &[usize]) -> Tensor<'t> {
        let t = ctx.param(self.table);
        let d = t.dim(1);
        let mut out_shape = shape.to_vec();
        out_shape.push(d);
        t.index_select(0, idx).reshape(&out_shape)
    }
}

/// Fixed sinusoidal position code `[len, d]` starting at position `offset`.
pub fn sinusoidal(len: usize, d: usize, offset: usize) -> Arr {
    let mut pe = Array2::<f64>::zeros((len, d));
    for p in 0..len {
        let pos = (p + offset) as f64;
        for i in (0..d).step_by(2) {
            let div = (-(i as f64) * (10000f64).ln() / d as f64).exp();
            pe[[p, i]] = (pos * div).sin();
            if i + 1 < d {
                pe[[p, i + 1]] = (pos * div).cos();
            }
        }
    }
    pe.into_dyn()
}

/// Additive causal mask `[len, len]`: position `i` may not see `j > i`.
pub fn causal_mask(len: usize) -> Arc<Arr> {
    Arc::new(ArrayD::from_shape_fn(IxDyn(&[len, len]), |ix| if ix[1] > ix[0] { -1e9 } else { 0.0 }))
}

/// Two-layer position-wise network.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
    pub act: Activation,
}

impl FeedForward {
    pub fn new(bld: &mut Builder, name: &str, d: usize, d_ff: usize, act: Activation, bias: bool) -> Self {
        FeedForward {
            l1: Linear::new(bld, &format!("{name}.fc1"), d, d_ff, bias),
            l2: Linear::new(bld, &format!("{name}.fc2"), d_ff, d, bias),
            act,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>, dropout: f64) -> Tensor<'t> {
        let h = ctx.dropout(self.act.apply(self.l1.forward(ctx, x)), dropout);
        self.l2.forward(ctx, h)
    }
}

/// `[B, L, H·dk]` → `[B, H, L, dk]`.
pub fn split_heads<'t>(x: Tensor<'t>, heads: usize) -> Tensor<'t> {
    let (b, l, w) = (x.dim(0), x.dim(1), x.dim(2));
    x.reshape(&[b, l, heads, w / heads]).permute(&[0, 2, 1, 3])
}

/// `[B, H, L, dk]` → `[B, L, H·dk]`.
pub fn merge_heads(x: Tensor<'_>) -> Tensor<'_> {
    let (b, h, l, dk) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    x.permute(&[0, 2, 1, 3]).reshape(&[b, l, h * dk])
}

/// Query/key/value/output projections around an attention kernel.
#[derive(Debug, Clone)]
pub struct AttentionProj {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub d_k: usize,
}

impl AttentionProj {
    pub fn new(bld: &mut Builder, name: &str, d: usize, heads: usize, d_k: usize) -> Self {
        AttentionProj {
            q: Linear::new(bld, &format!("{name}.query"), d, heads * d_k, true),
            k: Linear::new(bld, &format!("{name}.key"), d, heads * d_k, true),
            v: Linear::new(bld, &format!("{name}.value"), d, heads * d_k, true),
            o: Linear::new(bld, &format!("{name}.out"), heads * d_k, d, true),
            heads,
            d_k,
        }
    }

    /// Projected heads `[B, H, L, dk]` for queries, keys, values.
    pub fn qkv<'t>(&self, ctx: &Ctx<'t>, q_in: Tensor<'t>, kv_in: Tensor<'t>) -> [Tensor<'t>; 3] {
        [
            split_heads(self.q.forward(ctx, q_in), self.heads),
            split_heads(self.k.forward(ctx, kv_in), self.heads),
            split_heads(self.v.forward(ctx, kv_in), self.heads),
        ]
    }

    pub fn out<'t>(&self, ctx: &Ctx<'t>, heads: Tensor<'t>) -> Tensor<'t> {
        self.o.forward(ctx, merge_heads(heads))
    }

    /// Full scaled dot-product multi-head attention.
    pub fn full<'t>(&self, ctx: &Ctx<'t>, q_in: Tensor<'t>, kv_in: Tensor<'t>, mask: Option<Arc<Arr>>) -> Tensor<'t> {
        let [q, k, v] = self.qkv(ctx, q_in, kv_in);
        let o = q.attention(k, v, mask, 1.0 / (self.d_k as f64).sqrt());
        self.out(ctx, o)
    }
}

/// Single-layer LSTM with one bias vector per gate (order i, f, g, o).
#[derive(Debug, Clone)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(bld: &mut Builder, name: &str, d_in: usize, hidden: usize) -> Self {
        Lstm {
            w_ih: bld.param(&format!("{name}.weight_ih"), &[d_in, 4 * hidden], Init::FanInOf(hidden)),
            w_hh: bld.param(&format!("{name}.weight_hh"), &[hidden, 4 * hidden], Init::FanInOf(hidden)),
            bias: bld.param(&format!("{name}.bias"), &[4 * hidden], Init::FanInOf(hidden)),
            hidden,
        }
    }

    /// Runs over `[B, L, d_in]`; returns the hidden state after every step.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>) -> Vec<Tensor<'t>> {
        let (b, l) = (x.dim(0), x.dim(1));
        let h_n = self.hidden;
        let xw = x.matmul(ctx.param(self.w_ih)) + ctx.param(self.bias);
        let w_hh = ctx.param(self.w_hh);
        let mut h = ctx.constant(ArrayD::zeros(IxDyn(&[b, h_n])));
        let mut c = h;
        let mut states = Vec::with_capacity(l);
        for t in 0..l {
            let gates = xw.narrow(1, t, 1).reshape(&[b, 4 * h_n]);
            let gates = if t == 0 { gates } else { gates + h.matmul(w_hh) };
            let i = gates.narrow(1, 0, h_n).sigmoid();
            let f = gates.narrow(1, h_n, h_n).sigmoid();
            let g = gates.narrow(1, 2 * h_n, h_n).tanh();
            let o = gates.narrow(1, 3 * h_n, h_n).sigmoid();
            c = if t == 0 { i * g } else { f * c + i * g };
            h = o * c.tanh();
            states.push(h);
        }
        states
    }
}

/// Single-layer GRU (gate order r, z, n) with input and hidden biases.
#[derive(Debug, Clone)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl Gru {
    pub fn new(bld: &mut Builder, name: &str, d_in: usize, hidden: usize) -> Self {
        let init = Init::FanInOf(hidden);
        Gru {
            w_ih: bld.param(&format!("{name}.weight_ih"), &[d_in, 3 * hidden], init),
            w_hh: bld.param(&format!("{name}.weight_hh"), &[hidden, 3 * hidden], init),
            b_ih: bld.param(&format!("{name}.bias_ih"), &[3 * hidden], init),
            b_hh: bld.param(&format!("{name}.bias_hh"), &[3 * hidden], init),
            hidden,
        }
    }

    /// Runs over `[B, L, d_in]`; returns the hidden state after every step.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>) -> Vec<Tensor<'t>> {
        let (b, l) = (x.dim(0), x.dim(1));
        let h_n = self.hidden;
        let xw = x.matmul(ctx.param(self.w_ih)) + ctx.param(self.b_ih);
        let (w_hh, b_hh) = (ctx.param(self.w_hh), ctx.param(self.b_hh));
        let mut h = ctx.constant(ArrayD::zeros(IxDyn(&[b, h_n])));
        let mut states = Vec::with_capacity(l);
        for t in 0..l {
            let xg = xw.narrow(1, t, 1).reshape(&[b, 3 * h_n]);
            let hg = h.matmul(w_hh) + b_hh;
            let r = (xg.narrow(1, 0, h_n) + hg.narrow(1, 0, h_n)).sigmoid();
            let z = (xg.narrow(1, h_n, h_n) + hg.narrow(1, h_n, h_n)).sigmoid();
            let n = (xg.narrow(1, 2 * h_n, h_n) + r * hg.narrow(1, 2 * h_n, h_n)).tanh();
            // h' = (1 - z) n + z h = n + z (h - n)
            h = n + z * (h - n);
            states.push(h);
        }
        states
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{GemmPrecision, Tape};
    use rand::SeedableRng;

    #[test]
    fn linear_8_to_4_has_36_parameters() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Linear::new(&mut Builder { store: &mut store, rng: &mut rng }, "fc", 8, 4, true);
        assert_eq!(store.num_scalars(), 36);
    }

    #[test]
    fn lstm_core_count_closed_form() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Lstm::new(&mut Builder { store: &mut store, rng: &mut rng }, "lstm", 8, 32);
        assert_eq!(store.num_scalars(), 4 * ((8 + 32) * 32 + 32));
        assert_eq!(store.num_scalars(), 5248);
    }

    #[test]
    fn causal_mask_blocks_future() {
        let m = causal_mask(3);
        assert_eq!(m[[0, 1]], -1e9);
        assert_eq!(m[[2, 1]], 0.0);
    }

    #[test]
    fn gru_and_lstm_step_shapes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bld = Builder { store: &mut store, rng: &mut rng };
        let lstm = Lstm::new(&mut bld, "l", 3, 5);
        let gru = Gru::new(&mut bld, "g", 3, 4);
        let tape = Tape::new(GemmPrecision::F64);
        let ctx = Ctx::new(&tape, &store, false, 0);
        let x = ctx.constant(ArrayD::ones(IxDyn(&[2, 6, 3])));
        let hs = lstm.forward(&ctx, x);
        assert_eq!((hs.len(), hs[5].shape()), (6, vec![2, 5]));
        assert_eq!(gru.forward(&ctx, x)[5].shape(), vec![2, 4]);
    }
}
