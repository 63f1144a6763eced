use ndarray::{ArrayD, Axis, Ix2, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::transformer::{TransformerConfig, TransformerNet};
use super::Inputs;
use crate::autograd::{Ctx, Init, PadMode, ParamId, Tensor};
use crate::data::WindowSpec;
use crate::error::{Error, Result};
use crate::nn::{Builder, LayerNorm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InformerConfig {
    #[serde(flatten)]
    pub base: TransformerConfig,
    /// Sampling factor `c`: the top `c·⌈ln L_Q⌉` queries are kept.
    pub factor: usize,
    /// Halve the sequence between encoder layers with conv + max-pool.
    pub distil: bool,
}

impl Default for InformerConfig {
    fn default() -> Self {
        InformerConfig { base: TransformerConfig::default(), factor: 5, distil: true }
    }
}

impl InformerConfig {
    pub fn toy() -> Self {
        InformerConfig { base: TransformerConfig::toy(), factor: 1, distil: true }
    }
}

fn ln_budget(factor: usize, len: usize) -> usize {
    (factor * (len as f64).ln().ceil() as usize).clamp(1, len)
}

/// ProbSparse self-attention over `[B, H, L, dk]` heads.
///
/// Each query is scored against a random sample of keys by the sparsity
/// measure `max_j(q·k_j) − mean_j(q·k_j)`. The top `c·⌈ln L_Q⌉` queries
/// attend over all keys; every other query returns the mean of the values.
/// Key samples come from `ctx`'s generator and are shared across the batch.
pub fn prob_attention<'t>(ctx: &Ctx<'t>, q: Tensor<'t>, k: Tensor<'t>, v: Tensor<'t>, factor: usize) -> Tensor<'t> {
    let (b, h, lq, dk) = (q.dim(0), q.dim(1), q.dim(2), q.dim(3));
    let (lk, dv) = (k.dim(2), v.dim(3));
    let n = b * h;
    let n_top = ln_budget(factor, lq);
    let n_sample = ln_budget(factor, lk);
    let samples: Vec<Vec<usize>> =
        ctx.with_rng(|rng| (0..lq).map(|_| (0..n_sample).map(|_| rng.random_range(0..lk)).collect()).collect());

    let q3 = q.reshape(&[n, lq, dk]);
    let k3 = k.reshape(&[n, lk, dk]);
    let v3 = v.reshape(&[n, lk, dv]);
    let (qv, kv) = (q3.value(), k3.value());
    let top: Vec<Vec<usize>> = (0..n)
        .map(|ni| {
            let qn = qv.index_axis(Axis(0), ni).into_dimensionality::<Ix2>().expect("[L, dk]");
            let kn = kv.index_axis(Axis(0), ni).into_dimensionality::<Ix2>().expect("[L, dk]");
            let mut scored: Vec<(f64, usize)> = (0..lq)
                .map(|i| {
                    let qi = qn.index_axis(Axis(0), i);
                    let dots = samples[i].iter().map(|&j| qi.dot(&kn.index_axis(Axis(0), j)));
                    let (max, sum) = dots.fold((f64::NEG_INFINITY, 0.0), |(m, s), d| (m.max(d), s + d));
                    (max - sum / n_sample as f64, i)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut keep: Vec<usize> = scored[..n_top].iter().map(|s| s.1).collect();
            keep.sort_unstable();
            keep
        })
        .collect();

    let lazy = v3.mean_axis(1, true) + ctx.constant(ArrayD::zeros(IxDyn(&[n, lq, dv])));
    let active = q3.gather_rows(&top).attention(k3, v3, None, 1.0 / (dk as f64).sqrt());
    lazy.scatter_rows(active, &top).reshape(&[b, h, lq, dv])
}

/// Conv (kernel 3, circular) → LayerNorm → ELU → max-pool (3, stride 2).
struct DistilLayer {
    w: ParamId,
    b: ParamId,
    norm: LayerNorm,
}

impl DistilLayer {
    fn forward<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>) -> Tensor<'t> {
        let y = x.pad(1, 1, 1, PadMode::Circular).conv1d(ctx.param(self.w), 3) + ctx.param(self.b);
        self.norm.forward(ctx, y).elu().max_pool1d(3, 2, 1)
    }
}

/// Transformer with ProbSparse encoder self-attention and self-attention
/// distilling between encoder layers.
pub(crate) struct InformerNet {
    core: TransformerNet,
    distil: Vec<DistilLayer>,
    factor: usize,
}

impl InformerNet {
    pub fn new(c: &InformerConfig, window: WindowSpec, bld: &mut Builder) -> Result<Self> {
        if c.factor == 0 {
            return Err(Error::hp("factor must be >= 1"));
        }
        let core = TransformerNet::new(&c.base, window, bld)?;
        let d = c.base.d_model;
        let n_distil = if c.distil { c.base.encoder_layers - 1 } else { 0 };
        let distil = (0..n_distil)
            .map(|i| DistilLayer {
                w: bld.param(&format!("distil.{i}.conv.weight"), &[3 * d, d], Init::FanIn),
                b: bld.param(&format!("distil.{i}.conv.bias"), &[d], Init::FanInOf(3 * d)),
                norm: LayerNorm::new(bld, &format!("distil.{i}.norm"), d),
            })
            .collect();
        Ok(InformerNet { core, distil, factor: c.factor })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>) -> Tensor<'t> {
        let t = &self.core;
        let mut x = t.embed_encoder(ctx, inp);
        for (i, layer) in t.encoder.iter().enumerate() {
            x = layer.forward(ctx, x, t.dropout, |attn, x| {
                let [q, k, v] = attn.qkv(ctx, x, x);
                attn.out(ctx, prob_attention(ctx, q, k, v, self.factor))
            });
            if let Some(d) = self.distil.get(i) {
                x = d.forward(ctx, x);
            }
        }
        let mem = t.enc_norm.forward(ctx, x);
        t.decode(ctx, inp, mem)
    }
}
