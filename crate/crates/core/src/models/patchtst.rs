use serde::{Deserialize, Serialize};

use super::transformer::EncoderLayer;
use super::{check_positive, Inputs};
use crate::autograd::{Ctx, Init, PadMode, ParamId, Tensor};
use crate::data::WindowSpec;
use crate::error::{Error, Result};
use crate::nn::{Activation, Builder, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchTstConfig {
    pub d_model: usize,
    /// Heads of width `⌊d_model / heads⌋`.
    pub heads: usize,
    pub layers: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_ff: usize,
    pub dropout: f64,
}

impl Default for PatchTstConfig {
    fn default() -> Self {
        PatchTstConfig { d_model: 128, heads: 3, layers: 3, patch_len: 16, stride: 8, d_ff: 512, dropout: 0.1 }
    }
}

impl PatchTstConfig {
    pub fn toy() -> Self {
        PatchTstConfig { d_model: 8, heads: 2, layers: 2, patch_len: 4, stride: 2, d_ff: 16, dropout: 0.1 }
    }
}

/// Patches per channel: `⌊(L − patch)/stride⌋ + 1` plus one from padding
/// the end of the series by `stride` repeated values.
pub fn patch_count(lookback: usize, patch_len: usize, stride: usize) -> usize {
    (lookback - patch_len) / stride + 1 + 1
}

/// Channel-independent patch transformer. Channels share every weight and
/// never mix, so only the load channel, which forms the forecast, is run.
pub(crate) struct PatchTstNet {
    embed: Linear,
    pos: ParamId,
    encoder: Vec<EncoderLayer>,
    head: Linear,
    patch_len: usize,
    stride: usize,
    patches: usize,
    dropout: f64,
}

impl PatchTstNet {
    pub fn new(c: &PatchTstConfig, window: WindowSpec, bld: &mut Builder) -> Result<Self> {
        for (name, v) in [
            ("d_model", c.d_model),
            ("heads", c.heads),
            ("layers", c.layers),
            ("patch_len", c.patch_len),
            ("stride", c.stride),
            ("d_ff", c.d_ff),
        ] {
            check_positive(name, v)?;
        }
        if c.patch_len > window.lookback {
            return Err(Error::hp(format!("patch length {} exceeds lookback {}", c.patch_len, window.lookback)));
        }
        if c.heads > c.d_model {
            return Err(Error::hp(format!("{} heads exceed d_model {}", c.heads, c.d_model)));
        }
        let d = c.d_model;
        let patches = patch_count(window.lookback, c.patch_len, c.stride);
        Ok(PatchTstNet {
            embed: Linear::new(bld, "patch_embedding", c.patch_len, d, true),
            pos: bld.param("position", &[patches, d], Init::Normal(0.02)),
            encoder: (0..c.layers)
                .map(|i| EncoderLayer::new(bld, &format!("encoder.{i}"), d, c.heads, d / c.heads, c.d_ff, Activation::Gelu))
                .collect(),
            head: Linear::new(bld, "head", patches * d, window.horizon, true),
            patch_len: c.patch_len,
            stride: c.stride,
            patches,
            dropout: c.dropout,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>) -> Tensor<'t> {
        let b = inp.batch;
        let patches = inp
            .load
            .unsqueeze(2)
            .pad(1, 0, self.stride, PadMode::Replicate)
            .unfold(self.patch_len, self.stride);
        debug_assert_eq!(patches.dim(1), self.patches);
        let mut x = ctx.dropout(self.embed.forward(ctx, patches) + ctx.param(self.pos), self.dropout);
        for layer in &self.encoder {
            x = layer.forward(ctx, x, self.dropout, |attn, x| attn.full(ctx, x, x, None));
        }
        let d = x.dim(2);
        let y = self.head.forward(ctx, ctx.dropout(x.reshape(&[b, self.patches * d]), self.dropout));
        y.reshape(&[b, y.dim(1), 1])
    }
}
