//! The seven forecasting architectures behind one [`ForecastModel`] type.
//!
//! Every model reads a [`Batch`] (load history, weather history, calendar
//! indices over lookback and horizon, static features) and emits a
//! `[B, T, 1]` forecast of the normalized load.

mod autoformer;
mod checkpoint;
mod informer;
mod lstm;
mod lstnet;
mod patchtst;
mod timesnet;
mod transformer;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Ctx, GemmPrecision, ParamStore, Tape, Tensor};
use crate::data::{Batch, WindowSpec, DAYS_PER_WEEK, STEPS_PER_DAY};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal, Builder, Embedding, Linear};

pub use autoformer::{decompose, AutoformerConfig};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use informer::{prob_attention, InformerConfig};
pub use lstm::LstmConfig;
pub use lstnet::LstnetConfig;
pub use patchtst::{patch_count, PatchTstConfig};
pub use timesnet::{detect_periods, TimesNetConfig};
pub use transformer::TransformerConfig;

/// Continuous per-step inputs: load plus two weather features.
pub const N_CONTINUOUS: usize = 3;
/// Calendar features: interval of day and day of week.
pub const N_TIME: usize = 2;
pub const N_STATIC: usize = 3;
/// Feature arity of one time step: 1 load + 2 weather + 2 time + 3 static.
pub const N_FEATURES: usize = N_CONTINUOUS + N_TIME + N_STATIC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Lstm,
    Lstnet,
    Transformer,
    Informer,
    Autoformer,
    Timesnet,
    Patchtst,
}

impl Arch {
    pub const ALL: [Arch; 7] =
        [Arch::Lstm, Arch::Lstnet, Arch::Transformer, Arch::Informer, Arch::Autoformer, Arch::Timesnet, Arch::Patchtst];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Lstm => "lstm",
            Arch::Lstnet => "lstnet",
            Arch::Transformer => "transformer",
            Arch::Informer => "informer",
            Arch::Autoformer => "autoformer",
            Arch::Timesnet => "timesnet",
            Arch::Patchtst => "patchtst",
        }
    }

    /// Display name as used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Arch::Lstm => "LSTM",
            Arch::Lstnet => "LSTNet",
            Arch::Transformer => "Transformer",
            Arch::Informer => "Informer",
            Arch::Autoformer => "Autoformer",
            Arch::Timesnet => "TimesNet",
            Arch::Patchtst => "PatchTST",
        }
    }

    /// Parameter counts listed for the reference configurations. They are
    /// informational; see the README for how they compare.
    pub fn reference_parameter_count(self) -> usize {
        match self {
            Arch::Lstm => 13_856,
            Arch::Lstnet => 66_473,
            Arch::Transformer => 2_698_625,
            Arch::Informer => 2_798_211,
            Arch::Autoformer => 1_413_633,
            Arch::Timesnet => 998_289,
            Arch::Patchtst => 990_384,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        Arch::ALL
            .into_iter()
            .find(|a| a.as_str() == norm)
            .ok_or_else(|| Error::UnknownArchitecture(s.to_string()))
    }
}

/// Structural hyperparameters of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "lowercase")]
pub enum ModelConfig {
    Lstm(LstmConfig),
    Lstnet(LstnetConfig),
    Transformer(TransformerConfig),
    Informer(InformerConfig),
    Autoformer(AutoformerConfig),
    Timesnet(TimesNetConfig),
    Patchtst(PatchTstConfig),
}

impl ModelConfig {
    /// Reference configuration of `arch`.
    pub fn default_for(arch: Arch) -> Self {
        match arch {
            Arch::Lstm => ModelConfig::Lstm(LstmConfig::default()),
            Arch::Lstnet => ModelConfig::Lstnet(LstnetConfig::default()),
            Arch::Transformer => ModelConfig::Transformer(TransformerConfig::default()),
            Arch::Informer => ModelConfig::Informer(InformerConfig::default()),
            Arch::Autoformer => ModelConfig::Autoformer(AutoformerConfig::default()),
            Arch::Timesnet => ModelConfig::Timesnet(TimesNetConfig::default()),
            Arch::Patchtst => ModelConfig::Patchtst(PatchTstConfig::default()),
        }
    }

    /// A tiny configuration (token size 8) for gradient checks at L=16, T=4.
    pub fn toy(arch: Arch) -> Self {
        match arch {
            Arch::Lstm => ModelConfig::Lstm(LstmConfig { hidden: 8, ..Default::default() }),
            Arch::Lstnet => ModelConfig::Lstnet(LstnetConfig::toy()),
            Arch::Transformer => ModelConfig::Transformer(TransformerConfig::toy()),
            Arch::Informer => ModelConfig::Informer(InformerConfig::toy()),
            Arch::Autoformer => ModelConfig::Autoformer(AutoformerConfig::toy()),
            Arch::Timesnet => ModelConfig::Timesnet(TimesNetConfig::toy()),
            Arch::Patchtst => ModelConfig::Patchtst(PatchTstConfig::toy()),
        }
    }

    /// Reference configuration of `tag` overridden by the keys of `hp`.
    pub fn from_tag(tag: &str, hp: Option<&serde_json::Value>) -> Result<Self> {
        let arch: Arch = tag.parse()?;
        let mut value = serde_json::to_value(Self::default_for(arch))?;
        if let Some(hp) = hp {
            let obj = hp.as_object().ok_or_else(|| Error::hp("hyperparameters must be a key/value table"))?;
            let known = value.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
            for (k, v) in obj {
                if k == "arch" {
                    continue;
                }
                if !known.contains(k) {
                    return Err(Error::hp(format!("`{k}` is not a {arch} hyperparameter")));
                }
                value[k] = v.clone();
            }
        }
        serde_json::from_value(value).map_err(|e| Error::hp(e.to_string()))
    }

    pub fn arch(&self) -> Arch {
        match self {
            ModelConfig::Lstm(_) => Arch::Lstm,
            ModelConfig::Lstnet(_) => Arch::Lstnet,
            ModelConfig::Transformer(_) => Arch::Transformer,
            ModelConfig::Informer(_) => Arch::Informer,
            ModelConfig::Autoformer(_) => Arch::Autoformer,
            ModelConfig::Timesnet(_) => Arch::Timesnet,
            ModelConfig::Patchtst(_) => Arch::Patchtst,
        }
    }

    /// Training-mode dropout rate.
    pub fn dropout(&self) -> f64 {
        match self {
            ModelConfig::Lstm(c) => c.dropout,
            ModelConfig::Lstnet(c) => c.dropout,
            ModelConfig::Transformer(c) => c.dropout,
            ModelConfig::Informer(c) => c.base.dropout,
            ModelConfig::Autoformer(c) => c.dropout,
            ModelConfig::Timesnet(c) => c.dropout,
            ModelConfig::Patchtst(c) => c.dropout,
        }
    }

    /// Same structure with dropout switched off.
    pub fn without_dropout(&self) -> Self {
        let mut c = self.clone();
        match &mut c {
            ModelConfig::Lstm(c) => c.dropout = 0.0,
            ModelConfig::Lstnet(c) => c.dropout = 0.0,
            ModelConfig::Transformer(c) => c.dropout = 0.0,
            ModelConfig::Informer(c) => c.base.dropout = 0.0,
            ModelConfig::Autoformer(c) => c.dropout = 0.0,
            ModelConfig::Timesnet(c) => c.dropout = 0.0,
            ModelConfig::Patchtst(c) => c.dropout = 0.0,
        }
        c
    }
}

pub(crate) fn check_dropout(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::hp(format!("dropout must lie in [0, 1), got {p}")));
    }
    Ok(())
}

pub(crate) fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::hp(format!("{name} must be >= 1")));
    }
    Ok(())
}

/// Batch arrays lifted onto the tape.
pub struct Inputs<'t> {
    pub batch: usize,
    pub lookback: usize,
    pub horizon: usize,
    /// `[B, L, 3]` load, temperature, wind.
    pub continuous: Tensor<'t>,
    /// `[B, L]` load history.
    pub load: Tensor<'t>,
    /// `[B, L+T, 2]` calendar features scaled to [-0.5, 0.5].
    pub time: Tensor<'t>,
    /// `[B, 3]` static features.
    pub statics: Tensor<'t>,
    /// `[B, L+T, 2]` calendar indices.
    pub u: Array3<usize>,
}

impl<'t> Inputs<'t> {
    pub fn new(ctx: &Ctx<'t>, b: &Batch) -> Self {
        let (n, l, t) = (b.len(), b.lookback(), b.horizon());
        let mut cont = Array3::<f64>::zeros((n, l, N_CONTINUOUS));
        cont.index_axis_mut(Axis(2), 0).assign(&b.y_hist);
        cont.slice_mut(ndarray::s![.., .., 1..]).assign(&b.x_hist);
        let time = b.u_full.mapv(|v| v as f64);
        let mut time = time;
        time.index_axis_mut(Axis(2), 0).mapv_inplace(|v| v / (STEPS_PER_DAY - 1) as f64 - 0.5);
        time.index_axis_mut(Axis(2), 1).mapv_inplace(|v| v / (DAYS_PER_WEEK - 1) as f64 - 0.5);
        Inputs {
            batch: n,
            lookback: l,
            horizon: t,
            continuous: ctx.constant(cont.into_dyn()),
            load: ctx.constant(b.y_hist.clone().into_dyn()),
            time: ctx.constant(time.into_dyn()),
            statics: ctx.constant(b.s.clone().into_dyn()),
            u: b.u_full.clone(),
        }
    }

    /// All eight per-step features over the lookback, `[B, L, 8]`.
    pub fn features(&self, ctx: &Ctx<'t>) -> Tensor<'t> {
        let (b, l) = (self.batch, self.lookback);
        let statics = self.statics.unsqueeze(1) + ctx.constant(ArrayD::zeros(IxDyn(&[b, l, N_STATIC])));
        Tensor::concat(&[self.continuous, self.time.narrow(1, 0, l), statics], 2)
    }

    /// Flattened calendar indices for positions `start..start + len`.
    pub fn u_slice(&self, start: usize, len: usize) -> (Vec<usize>, Vec<usize>) {
        let mut interval = Vec::with_capacity(self.batch * len);
        let mut day = Vec::with_capacity(self.batch * len);
        for bi in 0..self.batch {
            for p in start..start + len {
                interval.push(self.u[[bi, p, 0]]);
                day.push(self.u[[bi, p, 1]]);
            }
        }
        (interval, day)
    }
}

/// Token embedding: projected continuous values, learned calendar
/// embeddings, sinusoidal positions and a projected static vector.
#[derive(Debug, Clone)]
pub struct EmbeddingBlock {
    pub value: Linear,
    pub interval: Embedding,
    pub weekday: Embedding,
    pub statics: Linear,
    pub d_model: usize,
}

impl EmbeddingBlock {
    pub fn new(bld: &mut Builder, name: &str, d_model: usize) -> Self {
        EmbeddingBlock {
            value: Linear::new(bld, &format!("{name}.value"), N_CONTINUOUS, d_model, true),
            interval: Embedding::new(bld, &format!("{name}.interval"), STEPS_PER_DAY, d_model),
            weekday: Embedding::new(bld, &format!("{name}.weekday"), DAYS_PER_WEEK, d_model),
            statics: Linear::new(bld, &format!("{name}.static"), N_STATIC, d_model, true),
            d_model,
        }
    }

    /// Value + static part for `[B, n, 3]` values.
    pub fn content<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>, values: Tensor<'t>) -> Tensor<'t> {
        self.value.forward(ctx, values) + self.statics.forward(ctx, inp.statics).unsqueeze(1)
    }

    /// Calendar embeddings plus positions for steps `start..start + len`,
    /// `[B, len, d]`; positions are numbered from `pos_offset`.
    pub fn temporal<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>, start: usize, len: usize, pos_offset: usize) -> Tensor<'t> {
        let (interval, day) = inp.u_slice(start, len);
        let shape = [inp.batch, len];
        self.interval.forward(ctx, &interval, &shape)
            + self.weekday.forward(ctx, &day, &shape)
            + ctx.constant(sinusoidal(len, self.d_model, pos_offset))
    }

    /// Full token embedding of `values`, which cover steps `start..start+n`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>, values: Tensor<'t>, start: usize, dropout: f64) -> Tensor<'t> {
        let n = values.dim(1);
        ctx.dropout(self.content(ctx, inp, values) + self.temporal(ctx, inp, start, n, 0), dropout)
    }
}

/// Decoder values: the last `label` continuous steps followed by `T` zeros.
pub(crate) fn decoder_values<'t>(ctx: &Ctx<'t>, inp: &Inputs<'t>, label: usize) -> Tensor<'t> {
    let known = inp.continuous.narrow(1, inp.lookback - label, label);
    let zeros = ctx.constant(ArrayD::zeros(IxDyn(&[inp.batch, inp.horizon, N_CONTINUOUS])));
    Tensor::concat(&[known, zeros], 1)
}

pub(crate) enum Net {
    Lstm(lstm::LstmNet),
    Lstnet(lstnet::LstnetNet),
    Transformer(transformer::TransformerNet),
    Informer(informer::InformerNet),
    Autoformer(autoformer::AutoformerNet),
    Timesnet(timesnet::TimesNetNet),
    Patchtst(patchtst::PatchTstNet),
}

/// A built forecasting model: structure, input spec and parameters.
pub struct ForecastModel {
    pub config: ModelConfig,
    pub window: WindowSpec,
    pub seed: u64,
    pub params: ParamStore,
    net: Net,
}

impl fmt::Debug for ForecastModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ForecastModel")
            .field("config", &self.config)
            .field("window", &self.window)
            .field("parameters", &self.num_parameters())
            .finish()
    }
}

impl Clone for ForecastModel {
    fn clone(&self) -> Self {
        let mut m = build(&self.config, self.window, self.seed).expect("config was valid when built");
        m.params = self.params.clone();
        m
    }
}

/// Builds and initializes a model. Initialization is a pure function of
/// `(config, window, seed)`.
pub fn build(config: &ModelConfig, window: WindowSpec, seed: u64) -> Result<ForecastModel> {
    if window.lookback == 0 || window.horizon == 0 {
        return Err(Error::hp("lookback and horizon must be >= 1"));
    }
    check_dropout(config.dropout())?;
    let mut params = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bld = Builder { store: &mut params, rng: &mut rng };
    let net = match config {
        ModelConfig::Lstm(c) => Net::Lstm(lstm::LstmNet::new(c, window, &mut bld)?),
        ModelConfig::Lstnet(c) => Net::Lstnet(lstnet::LstnetNet::new(c, window, &mut bld)?),
        ModelConfig::Transformer(c) => Net::Transformer(transformer::TransformerNet::new(c, window, &mut bld)?),
        ModelConfig::Informer(c) => Net::Informer(informer::InformerNet::new(c, window, &mut bld)?),
        ModelConfig::Autoformer(c) => Net::Autoformer(autoformer::AutoformerNet::new(c, window, &mut bld)?),
        ModelConfig::Timesnet(c) => Net::Timesnet(timesnet::TimesNetNet::new(c, window, &mut bld)?),
        ModelConfig::Patchtst(c) => Net::Patchtst(patchtst::PatchTstNet::new(c, window, &mut bld)?),
    };
    Ok(ForecastModel { config: config.clone(), window, seed, params, net })
}

/// [`build`] from an architecture tag and optional hyperparameter overrides.
pub fn build_tag(tag: &str, hp: Option<&serde_json::Value>, window: WindowSpec, seed: u64) -> Result<ForecastModel> {
    build(&ModelConfig::from_tag(tag, hp)?, window, seed)
}

impl ForecastModel {
    pub fn arch(&self) -> Arch {
        self.config.arch()
    }

    /// Exact number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Forecast `[B, T, 1]` on `ctx`'s tape. `ctx` must wrap `self.params`.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, batch: &Batch) -> Result<Tensor<'t>> {
        batch.check(&self.window)?;
        if batch.is_empty() {
            return Err(Error::shape("empty batch"));
        }
        let inp = Inputs::new(ctx, batch);
        let out = match &self.net {
            Net::Lstm(n) => n.forward(ctx, &inp),
            Net::Lstnet(n) => n.forward(ctx, &inp),
            Net::Transformer(n) => n.forward(ctx, &inp),
            Net::Informer(n) => n.forward(ctx, &inp),
            Net::Autoformer(n) => n.forward(ctx, &inp),
            Net::Timesnet(n) => n.forward(ctx, &inp),
            Net::Patchtst(n) => n.forward(ctx, &inp),
        };
        debug_assert_eq!(out.shape(), [batch.len(), self.window.horizon, 1]);
        Ok(out)
    }

    /// Eval-mode forecast `[B, T]`, without gradient bookkeeping.
    pub fn predict(&self, batch: &Batch, precision: GemmPrecision) -> Result<Array2<f64>> {
        let tape = Tape::inference(precision);
        let ctx = Ctx::new(&tape, &self.params, false, self.seed);
        let out = self.forward(&ctx, batch)?.value();
        let (b, t) = (batch.len(), self.window.horizon);
        Ok(out.as_ref().clone().into_shape_with_order((b, t)).expect("[B, T, 1] forecast"))
    }

    /// Mean-squared error of the forecast against `batch.y_target`; this is
    /// NMSE in normalized space.
    pub fn loss<'t>(&self, ctx: &Ctx<'t>, batch: &Batch) -> Result<Tensor<'t>> {
        let pred = self.forward(ctx, batch)?;
        let (b, t) = (batch.len(), self.window.horizon);
        let target = ctx.constant(batch.y_target.clone().into_shape_with_order((b, t, 1)).unwrap().into_dyn());
        Ok((pred - target).square().mean())
    }
}
