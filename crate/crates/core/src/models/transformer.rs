use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{check_positive, decoder_values, EmbeddingBlock, Inputs};
use crate::autograd::{Arr, Ctx, Tensor};
use crate::data::WindowSpec;
use crate::error::{Error, Result};
use crate::nn::{causal_mask, Activation, AttentionProj, Builder, FeedForward, LayerNorm, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_ff: usize,
    pub activation: Activation,
    pub dropout: f64,
    /// Known history steps fed to the decoder ahead of the horizon;
    /// defaults to half the lookback.
    pub label_len: Option<usize>,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            d_model: 128,
            heads: 4,
            encoder_layers: 3,
            decoder_layers: 3,
            d_ff: 512,
            activation: Activation::Gelu,
            dropout: 0.1,
            label_len: None,
        }
    }
}

impl TransformerConfig {
    pub fn toy() -> Self {
        TransformerConfig { d_model: 8, heads: 2, encoder_layers: 2, decoder_layers: 1, d_ff: 16, ..Default::default() }
    }

    pub(crate) fn validate(&self, window: WindowSpec) -> Result<usize> {
        for (name, v) in [("d_model", self.d_model), ("heads", self.heads), ("encoder_layers", self.encoder_layers), ("d_ff", self.d_ff)] {
            check_positive(name, v)?;
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::hp(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads)));
        }
        let label = self.label_len.unwrap_or(window.lookback / 2);
        if label > window.lookback {
            return Err(Error::hp(format!("label_len {label} exceeds lookback {}", window.lookback)));
        }
        Ok(label)
    }
}

/// Post-norm encoder layer: attention and feed-forward sublayers, each
/// wrapped in residual + LayerNorm.
pub(crate) struct EncoderLayer {
    pub attn: AttentionProj,
    pub ff: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(bld: &mut Builder, name: &str, d: usize, heads: usize, d_k: usize, d_ff: usize, act: Activation) -> Self {
        EncoderLayer {
            attn: AttentionProj::new(bld, &format!("{name}.attn"), d, heads, d_k),
            ff: FeedForward::new(bld, &format!("{name}.ff"), d, d_ff, act, true),
            norm1: LayerNorm::new(bld, &format!("{name}.norm1"), d),
            norm2: LayerNorm::new(bld, &format!("{name}.norm2"), d),
        }
    }

    /// `attend` maps the layer input to the attention sublayer output.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        x: Tensor<'t>,
        dropout: f64,
        attend: impl FnOnce(&AttentionProj, Tensor<'t>) -> Tensor<'t>,
    ) -> Tensor<'t> {
        let x = self.norm1.forward(ctx, x + ctx.dropout(attend(&self.attn, x), dropout));
        let y = ctx.dropout(self.ff.forward(ctx, x, dropout), dropout);
        self.norm2.forward(ctx, x + y)
    }
}

/// Post-norm decoder layer: masked self-attention, cross-attention over the
/// encoder memory, feed-forward.
pub(crate) struct DecoderLayer {
    pub self_attn: AttentionProj,
    pub cross_attn: AttentionProj,
    pub ff: FeedForward,
    pub norms: [LayerNorm; 3],
}

impl DecoderLayer {
    pub fn new(bld: &mut Builder, name: &str, d: usize, heads: usize, d_ff: usize, act: Activation) -> Self {
        let d_k = d / heads;
        DecoderLayer {
            self_attn: AttentionProj::new(bld, &format!("{name}.self_attn"), d, heads, d_k),
            cross_attn: AttentionProj::new(bld, &format!("{name}.cross_attn"), d, heads, d_k),
            ff: FeedForward::new(bld, &format!("{name}.ff"), d, d_ff, act, true),
            norms: [
                LayerNorm::new(bld, &format!("{name}.norm1"), d),
                LayerNorm::new(bld, &format!("{name}.norm2"), d),
                LayerNorm::new(bld, &format!("{name}.norm3"), d),
            ],
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>, mem: Tensor<'t>, mask: &Arc<Arr>, dropout: f64) -> Tensor<'t> {
        let a = self.self_attn.full(ctx, x, x, Some(mask.clone()));
        let x = self.norms[0].forward(ctx, x + ctx.dropout(a, dropout));
        let c = self.cross_attn.full(ctx, x, mem, None);
        let x = self.norms[1].forward(ctx, x + ctx.dropout(c, dropout));
        let y = ctx.dropout(self.ff.forward(ctx, x, dropout), dropout);
        self.norms[2].forward(ctx, x + y)
    }
}

/// Encoder–decoder transformer. The decoder sees the last `label` known
/// steps plus `T` placeholder steps carrying only calendar information.
pub(crate) struct TransformerNet {
    pub enc_emb: EmbeddingBlock,
    pub dec_emb: EmbeddingBlock,
    pub encoder: Vec<EncoderLayer>,
    pub enc_norm: LayerNorm,
    pub decoder: Vec<DecoderLayer>,
    pub dec_norm: LayerNorm,
    pub head: Linear,
    pub label: usize,
    pub dropout: f64,
}

impl TransformerNet {
    pub fn new(c: &TransformerConfig, window: WindowSpec, bld: &mut Builder) -> Result<Self> {
        let label = c.validate(window)?;
        let d = c.d_model;
        Ok(TransformerNet {
            enc_emb: EmbeddingBlock::new(bld, "enc_embedding", d),
            dec_emb: EmbeddingBlock::new(bld, "dec_embedding", d),
            encoder: (0..c.encoder_layers)
                .map(|i| EncoderLayer::new(bld, &format!("encoder.{i}"), d, c.heads, d / c.heads, c.d_ff, c.activation))
                .collect(),
            enc_norm: LayerNorm::new(bld, "encoder.norm", d),
            decoder: (0..c.decoder_layers)
                .map(|i| DecoderLayer::new(bld, &format!("decoder.{i}"), d, c.heads, c.d_ff, c.activation))
                .collect(),
            dec_norm: LayerNorm::new(bld, "decoder.norm", d),
            head: Linear::new(bld, "head", d, 1, true),
            label,
            dropout: c.dropout,
        })
    }

    pub fn embed_encoder<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>) -> Tensor<'t> {
        self.enc_emb.forward(ctx, inp, inp.continuous, 0, self.dropout)
    }

    /// Decoder pass over the encoder memory; returns `[B, T, 1]`.
    pub fn decode<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>, mem: Tensor<'t>) -> Tensor<'t> {
        let values = decoder_values(ctx, inp, self.label);
        let mut y = self.dec_emb.forward(ctx, inp, values, inp.lookback - self.label, self.dropout);
        let mask = causal_mask(self.label + inp.horizon);
        for layer in &self.decoder {
            y = layer.forward(ctx, y, mem, &mask, self.dropout);
        }
        let y = self.head.forward(ctx, self.dec_norm.forward(ctx, y));
        y.narrow(1, self.label, inp.horizon)
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>) -> Tensor<'t> {
        let mut x = self.embed_encoder(ctx, inp);
        for layer in &self.encoder {
            x = layer.forward(ctx, x, self.dropout, |attn, x| attn.full(ctx, x, x, None));
        }
        let mem = self.enc_norm.forward(ctx, x);
        self.decode(ctx, inp, mem)
    }
}
