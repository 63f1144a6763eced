use std::collections::BTreeMap;

use ndarray::{ArrayView2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{check_positive, EmbeddingBlock, Inputs};
use crate::autograd::{Ctx, Init, PadMode, ParamId, Tensor};
use crate::data::WindowSpec;
use crate::error::{Error, Result};
use crate::nn::{Builder, LayerNorm, Linear};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimesNetConfig {
    pub d_model: usize,
    pub layers: usize,
    /// Number of dominant frequencies, one 2-D branch each.
    pub top_k: usize,
    /// Inception kernels of sizes 1, 3, 5, ...
    pub num_kernels: usize,
    /// Hidden channels between the two inception stages.
    pub d_ff: usize,
    pub dropout: f64,
}

impl Default for TimesNetConfig {
    fn default() -> Self {
        TimesNetConfig { d_model: 128, layers: 3, top_k: 5, num_kernels: 3, d_ff: 64, dropout: 0.1 }
    }
}

impl TimesNetConfig {
    pub fn toy() -> Self {
        TimesNetConfig { d_model: 8, layers: 2, top_k: 2, num_kernels: 2, d_ff: 8, dropout: 0.1 }
    }
}

/// Indices of the `k` largest channel-averaged amplitudes of the real FFT of
/// `series` (`[T, C]`), skipping the zero frequency. Ties go to the lower
/// frequency; at most `T/2` frequencies exist.
fn top_frequencies(series: ArrayView2<f64>, k: usize, planner: &mut FftPlanner<f64>) -> Vec<usize> {
    let (t, c) = series.dim();
    let fft = planner.plan_fft_forward(t);
    let mut amp = vec![0.0; t / 2 + 1];
    for col in series.axis_iter(Axis(1)) {
        let mut buf: Vec<Complex<f64>> = col.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        for (a, z) in amp.iter_mut().zip(&buf) {
            *a += z.norm() / c as f64;
        }
    }
    let mut freqs: Vec<usize> = (1..=t / 2).collect();
    freqs.sort_by(|&a, &b| amp[b].total_cmp(&amp[a]).then(a.cmp(&b)));
    freqs.truncate(k);
    freqs
}

/// Periods `T / f` of the `k` dominant frequencies of `series` (`[T, C]`),
/// strongest first.
pub fn detect_periods(series: ArrayView2<f64>, k: usize) -> Vec<usize> {
    let t = series.nrows();
    top_frequencies(series, k, &mut FftPlanner::new()).into_iter().map(|f| t / f).collect()
}

/// Parallel 2-D convolutions with odd kernels 1, 3, ..., averaged. The
/// kernels are zero-embedded into the largest one so a single convolution
/// computes the average.
struct Inception {
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
    c_in: usize,
    c_out: usize,
}

impl Inception {
    fn new(bld: &mut Builder, name: &str, c_in: usize, c_out: usize, n: usize) -> Self {
        let (mut weights, mut biases) = (Vec::new(), Vec::new());
        for i in 0..n {
            let k = 2 * i + 1;
            weights.push(bld.param(&format!("{name}.{i}.weight"), &[k * k * c_in, c_out], Init::FanIn));
            biases.push(bld.param(&format!("{name}.{i}.bias"), &[c_out], Init::FanInOf(k * k * c_in)));
        }
        Inception { weights, biases, c_in, c_out }
    }

    fn forward<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>) -> Tensor<'t> {
        let n = self.weights.len();
        let big = 2 * n - 1;
        let scale = 1.0 / n as f64;
        let mut w: Option<Tensor<'t>> = None;
        let mut b: Option<Tensor<'t>> = None;
        for i in 0..n {
            let k = 2 * i + 1;
            let m = n - 1 - i;
            let wi = ctx
                .param(self.weights[i])
                .reshape(&[k, k, self.c_in, self.c_out])
                .pad(0, m, m, PadMode::Zeros)
                .pad(1, m, m, PadMode::Zeros);
            let bi = ctx.param(self.biases[i]);
            w = Some(w.map_or(wi, |acc| acc + wi));
            b = Some(b.map_or(bi, |acc| acc + bi));
        }
        let w = w.unwrap().reshape(&[big * big * self.c_in, self.c_out]).mul_scalar(scale);
        x.conv2d_same(w, big, big) + b.unwrap().mul_scalar(scale)
    }
}

struct TimesBlock {
    conv1: Inception,
    conv2: Inception,
    top_k: usize,
}

impl TimesBlock {
    /// One 2-D branch: fold each sample at its own period, convolve, unfold.
    fn branch<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>, periods: &[usize]) -> Tensor<'t> {
        let (n, d) = (x.dim(1), x.dim(2));
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (b, &p) in periods.iter().enumerate() {
            groups.entry(p).or_default().push(b);
        }
        let mut outs = Vec::with_capacity(groups.len());
        let mut order = Vec::with_capacity(periods.len());
        for (&p, idx) in &groups {
            let rows = n.div_ceil(p);
            let len = rows * p;
            let img = x.index_select(0, idx).pad(1, 0, len - n, PadMode::Zeros).reshape(&[idx.len(), rows, p, d]);
            let y = self.conv2.forward(ctx, self.conv1.forward(ctx, img).gelu());
            outs.push(y.reshape(&[idx.len(), len, d]).narrow(1, 0, n));
            order.extend_from_slice(idx);
        }
        let mut inverse = vec![0; order.len()];
        for (pos, &b) in order.iter().enumerate() {
            inverse[b] = pos;
        }
        Tensor::concat(&outs, 0).index_select(0, &inverse)
    }

    fn forward<'t>(&self, ctx: &Ctx<'t>, x: Tensor<'t>) -> Tensor<'t> {
        let n = x.dim(1);
        let xv = x.value();
        let mut planner = FftPlanner::new();
        let freqs: Vec<Vec<usize>> = xv
            .outer_iter()
            .map(|s| top_frequencies(s.into_dimensionality().expect("[N, d] sample"), self.top_k, &mut planner))
            .collect();
        let weights = x.dft_amplitude(&freqs).softmax();
        let mut out = x;
        for i in 0..freqs[0].len() {
            let periods: Vec<usize> = freqs.iter().map(|f| n / f[i]).collect();
            out = out + self.branch(ctx, x, &periods) * weights.narrow(1, i, 1).unsqueeze(2);
        }
        out
    }
}

/// Stacked blocks that fold the sequence into 2-D tensors at its dominant
/// periods and apply inception convolutions, followed by a linear head
/// over time.
pub(crate) struct TimesNetNet {
    emb: EmbeddingBlock,
    blocks: Vec<TimesBlock>,
    norm: LayerNorm,
    proj: Linear,
    time_head: Linear,
    dropout: f64,
    horizon: usize,
}

impl TimesNetNet {
    pub fn new(c: &TimesNetConfig, window: WindowSpec, bld: &mut Builder) -> Result<Self> {
        for (name, v) in [
            ("d_model", c.d_model),
            ("layers", c.layers),
            ("top_k", c.top_k),
            ("num_kernels", c.num_kernels),
            ("d_ff", c.d_ff),
        ] {
            check_positive(name, v)?;
        }
        if window.lookback < 2 {
            return Err(Error::hp("period detection needs a lookback of at least 2"));
        }
        let emb = EmbeddingBlock::new(bld, "embedding", c.d_model);
        let blocks = (0..c.layers)
            .map(|i| TimesBlock {
                conv1: Inception::new(bld, &format!("block.{i}.conv1"), c.d_model, c.d_ff, c.num_kernels),
                conv2: Inception::new(bld, &format!("block.{i}.conv2"), c.d_ff, c.d_model, c.num_kernels),
                top_k: c.top_k,
            })
            .collect();
        Ok(TimesNetNet {
            emb,
            blocks,
            norm: LayerNorm::new(bld, "norm", c.d_model),
            proj: Linear::new(bld, "projection", c.d_model, 1, true),
            time_head: Linear::new(bld, "head", window.lookback, window.horizon, true),
            dropout: c.dropout,
            horizon: window.horizon,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, inp: &Inputs<'t>) -> Tensor<'t> {
        let mut x = self.emb.forward(ctx, inp, inp.continuous, 0, self.dropout);
        for block in &self.blocks {
            x = self.norm.forward(ctx, block.forward(ctx, x));
        }
        let y = self.proj.forward(ctx, x).reshape(&[inp.batch, inp.lookback]);
        self.time_head.forward(ctx, y).reshape(&[inp.batch, self.horizon, 1])
    }
}
