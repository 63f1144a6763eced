use serde::{Deserialize, Serialize};

use super::{check_positive, Inputs, N_FEATURES};
use crate::autograd::{Ctx, Tensor};
use crate::data::WindowSpec;
use crate::error::Result;
use crate::nn::{Builder, Linear, Lstm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig { hidden: 32, layers: 1, dropout: 0.1 }
    }
}

/// Stacked LSTM over the per-step features with a dense decoder from the
/// final hidden state to the whole horizon.
pub(crate) struct LstmNet {
    layers: Vec<Lstm>,
    head: Linear,
    dropout: f64,
    horizon: usize,
}

impl LstmNet {
    pub fn new(c: &LstmConfig, window: WindowSpec, bld: &mut Builder) -> Result<Self> {
        check_positive("hidden", c.hidden)?;
        check_positive("layers", c.layers)?;
        let layers = (0..c.layers)
            .map(|i| Lstm::new(bld, &format!("lstm.{i}"), if i == 0 { N_FEATURES } else { c.hidden }, c.hidden))
            .collect();
        Ok(LstmNet {
            layers,
            head: Linear::new(bld, "head", c.hidden, window.horizon, true),
            dropout: c.dropout,
            horizon: window.horizon,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>) -> Tensor<'t> {
        let mut x = inp.features(ctx);
        let mut last = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let states = layer.forward(ctx, x);
            last = states.last().copied();
            if i + 1 < self.layers.len() {
                let seq: Vec<Tensor> = states.iter().map(|h| h.unsqueeze(1)).collect();
                x = ctx.dropout(Tensor::concat(&seq, 1), self.dropout);
            }
        }
        let h = ctx.dropout(last.expect("lookback >= 1"), self.dropout);
        self.head.forward(ctx, h).reshape(&[inp.batch, self.horizon, 1])
    }
}
