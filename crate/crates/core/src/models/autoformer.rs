use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{check_positive, EmbeddingBlock, Inputs, N_CONTINUOUS};
use crate::autograd::{Ctx, Init, PadMode, ParamId, Tensor};
use crate::data::WindowSpec;
use crate::error::{Error, Result};
use crate::nn::{Activation, AttentionProj, Builder, FeedForward, LayerNorm, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_ff: usize,
    /// Odd moving-average window of the series decomposition.
    pub moving_avg: usize,
    /// Delay budget: the top `⌊factor · ln L⌋` lags are aggregated.
    pub factor: f64,
    pub activation: Activation,
    pub dropout: f64,
    pub label_len: Option<usize>,
}

impl Default for AutoformerConfig {
    fn default() -> Self {
        AutoformerConfig {
            d_model: 128,
            heads: 4,
            encoder_layers: 3,
            decoder_layers: 3,
            d_ff: 512,
            moving_avg: 25,
            factor: 5.0,
            activation: Activation::Gelu,
            dropout: 0.1,
            label_len: None,
        }
    }
}

impl AutoformerConfig {
    pub fn toy() -> Self {
        AutoformerConfig {
            d_model: 8,
            heads: 2,
            encoder_layers: 2,
            decoder_layers: 1,
            d_ff: 16,
            moving_avg: 5,
            factor: 1.0,
            ..Default::default()
        }
    }
}

/// Splits `[B, L, C]` into `(seasonal, trend)` with a replicate-padded
/// moving average; `seasonal + trend` reproduces the input.
pub fn decompose<'t>(x: Tensor<'t>, window: usize) -> (Tensor<'t>, Tensor<'t>) {
    let trend = x.moving_avg(window);
    (x - trend, trend)
}

fn top_delays(corr: &ArrayD<f64>, k: usize) -> Vec<Vec<usize>> {
    corr.outer_iter()
        .map(|row| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        })
        .collect()
}

/// Auto-correlation attention: period-based dependencies from the
/// FFT-computed autocorrelation of queries and keys, aggregated as a
/// softmax-weighted sum of time-delayed values. Lags are chosen per sample.
fn auto_correlation<'t>(ctx: &Ctx<'t>, proj: &AttentionProj, x: Tensor<'t>, mem: Tensor<'t>, factor: f64) -> Tensor<'t> {
    let (b, lq) = (x.dim(0), x.dim(1));
    let s = mem.dim(1);
    let q = proj.q.forward(ctx, x);
    let (mut k, mut v) = (proj.k.forward(ctx, mem), proj.v.forward(ctx, mem));
    if s < lq {
        k = k.pad(1, 0, lq - s, PadMode::Zeros);
        v = v.pad(1, 0, lq - s, PadMode::Zeros);
    } else {
        k = k.narrow(1, 0, lq);
        v = v.narrow(1, 0, lq);
    }
    let corr = q.circular_corr_mean(k);
    let top_k = ((factor * (lq as f64).ln()) as usize).clamp(1, lq);
    let delays = top_delays(&corr.value(), top_k);
    let weights = corr.unsqueeze(2).gather_rows(&delays).reshape(&[b, top_k]).softmax();
    proj.o.forward(ctx, v.delay_aggregate(weights, &delays))
}

/// LayerNorm followed by removal of the per-sequence mean.
struct SeasonalNorm(LayerNorm);

impl SeasonalNorm {
    fn forward<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>) -> Tensor<'t> {
        let h = self.0.forward(ctx, x);
        h - h.mean_axis(1, true)
    }
}

struct EncLayer {
    attn: AttentionProj,
    ff: FeedForward,
}

struct DecLayer {
    self_attn: AttentionProj,
    cross_attn: AttentionProj,
    ff: FeedForward,
    /// Circular kernel-3 projection of the accumulated trend to one channel.
    trend_w: ParamId,
}

/// Decomposition transformer: seasonal parts flow through auto-correlation
/// layers while trend parts are accumulated progressively in the decoder.
pub(crate) struct AutoformerNet {
    enc_emb: EmbeddingBlock,
    dec_emb: EmbeddingBlock,
    encoder: Vec<EncLayer>,
    enc_norm: SeasonalNorm,
    decoder: Vec<DecLayer>,
    dec_norm: SeasonalNorm,
    head: Linear,
    window: usize,
    factor: f64,
    label: usize,
    dropout: f64,
}

impl AutoformerNet {
    pub fn new(c: &AutoformerConfig, window: WindowSpec, bld: &mut Builder) -> Result<Self> {
        for (name, v) in [("d_model", c.d_model), ("heads", c.heads), ("encoder_layers", c.encoder_layers), ("d_ff", c.d_ff)] {
            check_positive(name, v)?;
        }
        if c.d_model % c.heads != 0 {
            return Err(Error::hp(format!("d_model {} is not divisible by {} heads", c.d_model, c.heads)));
        }
        if c.moving_avg >= window.lookback {
            return Err(Error::hp(format!("moving-average window {} must be below lookback {}", c.moving_avg, window.lookback)));
        }
        if c.moving_avg % 2 == 0 {
            return Err(Error::hp(format!("moving-average window {} must be odd", c.moving_avg)));
        }
        if !(c.factor > 0.0) {
            return Err(Error::hp("factor must be > 0"));
        }
        let label = c.label_len.unwrap_or(window.lookback / 2);
        if label > window.lookback {
            return Err(Error::hp(format!("label_len {label} exceeds lookback {}", window.lookback)));
        }
        let d = c.d_model;
        let dk = d / c.heads;
        let ff = |bld: &mut Builder, name: String| FeedForward::new(bld, &name, d, c.d_ff, c.activation, false);
        let enc_emb = EmbeddingBlock::new(bld, "enc_embedding", d);
        let dec_emb = EmbeddingBlock::new(bld, "dec_embedding", d);
        let encoder = (0..c.encoder_layers)
            .map(|i| EncLayer {
                attn: AttentionProj::new(bld, &format!("encoder.{i}.attn"), d, c.heads, dk),
                ff: ff(bld, format!("encoder.{i}.ff")),
            })
            .collect();
        let enc_norm = SeasonalNorm(LayerNorm::new(bld, "encoder.norm", d));
        let decoder = (0..c.decoder_layers)
            .map(|i| DecLayer {
                self_attn: AttentionProj::new(bld, &format!("decoder.{i}.self_attn"), d, c.heads, dk),
                cross_attn: AttentionProj::new(bld, &format!("decoder.{i}.cross_attn"), d, c.heads, dk),
                ff: ff(bld, format!("decoder.{i}.ff")),
                trend_w: bld.param(&format!("decoder.{i}.trend.weight"), &[3 * d, 1], Init::FanIn),
            })
            .collect();
        Ok(AutoformerNet {
            enc_emb,
            dec_emb,
            encoder,
            enc_norm,
            decoder,
            dec_norm: SeasonalNorm(LayerNorm::new(bld, "decoder.norm", d)),
            head: Linear::new(bld, "head", d, 1, true),
            window: c.moving_avg,
            factor: c.factor,
            label,
            dropout: c.dropout,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>) -> Tensor<'t> {
        let (b, l, t) = (inp.batch, inp.lookback, inp.horizon);
        let p = self.dropout;

        let mut x = self.enc_emb.forward(ctx, inp, inp.continuous, 0, p);
        for layer in &self.encoder {
            let a = auto_correlation(ctx, &layer.attn, x, x, self.factor);
            let (s, _) = decompose(x + ctx.dropout(a, p), self.window);
            let y = ctx.dropout(layer.ff.forward(ctx, s, p), p);
            x = decompose(s + y, self.window).0;
        }
        let mem = self.enc_norm.forward(ctx, x);

        let (seasonal, trend) = decompose(inp.continuous, self.window);
        let zeros = ctx.constant(ArrayD::zeros(IxDyn(&[b, t, N_CONTINUOUS])));
        let seasonal_init = Tensor::concat(&[seasonal.narrow(1, l - self.label, self.label), zeros], 1);
        let load_mean = inp.load.mean_axis(1, true).unsqueeze(2) + ctx.constant(ArrayD::zeros(IxDyn(&[b, t, 1])));
        let mut trend = Tensor::concat(&[trend.narrow(1, l - self.label, self.label).narrow(2, 0, 1), load_mean], 1);

        let mut y = self.dec_emb.forward(ctx, inp, seasonal_init, l - self.label, p);
        for layer in &self.decoder {
            let a = auto_correlation(ctx, &layer.self_attn, y, y, self.factor);
            let (s1, t1) = decompose(y + ctx.dropout(a, p), self.window);
            let c = auto_correlation(ctx, &layer.cross_attn, s1, mem, self.factor);
            let (s2, t2) = decompose(s1 + ctx.dropout(c, p), self.window);
            let f = ctx.dropout(layer.ff.forward(ctx, s2, p), p);
            let (s3, t3) = decompose(s2 + f, self.window);
            y = s3;
            let residual = (t1 + t2 + t3).pad(1, 1, 1, PadMode::Circular).conv1d(ctx.param(layer.trend_w), 3);
            trend = trend + residual;
        }
        let seasonal_out = self.head.forward(ctx, self.dec_norm.forward(ctx, y));
        (trend + seasonal_out).narrow(1, self.label, t)
    }
}
