use serde::{Deserialize, Serialize};

use super::{check_positive, Inputs, N_FEATURES};
use crate::autograd::{Ctx, Init, ParamId, Tensor};
use crate::data::WindowSpec;
use crate::error::{Error, Result};
use crate::nn::{Builder, Gru, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstnetConfig {
    pub conv_channels: usize,
    pub kernel: usize,
    pub gru_hidden: usize,
    /// One skip-recurrent pathway per entry, with that skip length.
    pub skips: Vec<usize>,
    pub skip_hidden: usize,
    /// Number of trailing recurrent states attended over.
    pub attention_window: usize,
    /// Trailing load values feeding the linear highway.
    pub highway: usize,
    pub dropout: f64,
}

impl Default for LstnetConfig {
    fn default() -> Self {
        LstnetConfig {
            conv_channels: 32,
            kernel: 12,
            gru_hidden: 128,
            skips: vec![4, 4],
            skip_hidden: 5,
            attention_window: 7,
            highway: 24,
            dropout: 0.1,
        }
    }
}

impl LstnetConfig {
    pub fn toy() -> Self {
        LstnetConfig {
            conv_channels: 8,
            kernel: 3,
            gru_hidden: 8,
            skips: vec![2, 3],
            skip_hidden: 2,
            attention_window: 3,
            highway: 4,
            dropout: 0.1,
        }
    }
}

struct SkipPath {
    skip: usize,
    gru: Gru,
}

/// Convolution over time, a GRU with temporal attention, skip-recurrent
/// GRUs over every `skip`-th step, and a linear autoregressive highway on
/// the load history.
pub(crate) struct LstnetNet {
    conv_w: ParamId,
    conv_b: ParamId,
    kernel: usize,
    gru: Gru,
    skips: Vec<SkipPath>,
    attention_window: usize,
    out: Linear,
    highway: Option<Linear>,
    highway_len: usize,
    dropout: f64,
    horizon: usize,
}

impl LstnetNet {
    pub fn new(c: &LstnetConfig, window: WindowSpec, bld: &mut Builder) -> Result<Self> {
        for (name, v) in [
            ("conv_channels", c.conv_channels),
            ("kernel", c.kernel),
            ("gru_hidden", c.gru_hidden),
            ("attention_window", c.attention_window),
        ] {
            check_positive(name, v)?;
        }
        let l = window.lookback;
        if c.kernel > l {
            return Err(Error::hp(format!("kernel {} exceeds lookback {l}", c.kernel)));
        }
        let conv_len = l - c.kernel + 1;
        if c.attention_window > conv_len {
            return Err(Error::hp(format!("attention window {} exceeds {conv_len} convolved steps", c.attention_window)));
        }
        if let Some(&s) = c.skips.iter().find(|&&s| s == 0 || s > conv_len) {
            return Err(Error::hp(format!("skip {s} must lie in 1..={conv_len}")));
        }
        if !c.skips.is_empty() {
            check_positive("skip_hidden", c.skip_hidden)?;
        }
        if c.highway > l {
            return Err(Error::hp(format!("highway {} exceeds lookback {l}", c.highway)));
        }
        let conv_w = bld.param("conv.weight", &[c.kernel * N_FEATURES, c.conv_channels], Init::FanIn);
        let conv_b = bld.param("conv.bias", &[c.conv_channels], Init::FanInOf(c.kernel * N_FEATURES));
        let gru = Gru::new(bld, "gru", c.conv_channels, c.gru_hidden);
        let skips: Vec<SkipPath> = c
            .skips
            .iter()
            .enumerate()
            .map(|(i, &skip)| SkipPath { skip, gru: Gru::new(bld, &format!("skip_gru.{i}"), c.conv_channels, c.skip_hidden) })
            .collect();
        let rep = 2 * c.gru_hidden + c.skips.iter().map(|s| s * c.skip_hidden).sum::<usize>();
        Ok(LstnetNet {
            conv_w,
            conv_b,
            kernel: c.kernel,
            gru,
            skips,
            attention_window: c.attention_window,
            out: Linear::new(bld, "out", rep, window.horizon, true),
            highway: (c.highway > 0).then(|| Linear::new(bld, "highway", c.highway, window.horizon, true)),
            highway_len: c.highway,
            dropout: c.dropout,
            horizon: window.horizon,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>) -> Tensor<'t> {
        let b = inp.batch;
        let x = inp.features(ctx);
        let conv = (x.conv1d(ctx.param(self.conv_w), self.kernel) + ctx.param(self.conv_b)).relu();
        let conv = ctx.dropout(conv, self.dropout);
        let conv_len = conv.dim(1);
        let channels = conv.dim(2);

        let states = self.gru.forward(ctx, conv);
        let last = *states.last().unwrap();
        let window: Vec<Tensor> =
            states[conv_len - self.attention_window..].iter().map(|h| h.unsqueeze(1)).collect();
        let window = Tensor::concat(&window, 1); // [B, w, H]
        let scores = window.matmul(last.unsqueeze(2)).reshape(&[b, self.attention_window]).softmax();
        let context = scores.unsqueeze(1).matmul(window).reshape(&[b, self.gru.hidden]);

        let mut parts = vec![ctx.dropout(last, self.dropout), ctx.dropout(context, self.dropout)];
        for path in &self.skips {
            let p = path.skip;
            let periods = conv_len / p;
            let tail = conv.narrow(1, conv_len - periods * p, periods * p);
            // [B, periods, p, C] -> [B·p, periods, C]: one sequence per phase.
            let seq = tail.reshape(&[b, periods, p, channels]).permute(&[0, 2, 1, 3]).reshape(&[b * p, periods, channels]);
            let h = *path.gru.forward(ctx, seq).last().unwrap();
            parts.push(ctx.dropout(h.reshape(&[b, p * path.gru.hidden]), self.dropout));
        }
        let mut y = self.out.forward(ctx, Tensor::concat(&parts, 1));
        if let Some(hw) = &self.highway {
            let recent = inp.load.narrow(1, inp.lookback - self.highway_len, self.highway_len);
            y = y + hw.forward(ctx, recent);
        }
        y.reshape(&[b, self.horizon, 1])
    }
}
