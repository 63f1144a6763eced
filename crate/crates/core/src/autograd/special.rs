//! Sequence-model primitives with hand-written gradients: padding, pooling,
//! moving averages, 2-D convolution, row gather/scatter and FFT-based
//! correlation.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayD, ArrayView2, IxDyn};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{gemm, Arr, Tensor};

/// How to fill positions outside a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Zeros,
    Replicate,
    Circular,
}

fn as3(a: &Arr) -> (usize, usize, usize) {
    assert_eq!(a.ndim(), 3, "expected a 3-D tensor, got {:?}", a.shape());
    (a.shape()[0], a.shape()[1], a.shape()[2])
}

fn fft_pair(n: usize) -> (Arc<dyn rustfft::Fft<f64>>, Arc<dyn rustfft::Fft<f64>>) {
    let mut planner = FftPlanner::new();
    (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
}

impl<'t> Tensor<'t> {
    /// Pads `axis` with `left` and `right` extra positions.
    pub fn pad(self, axis: usize, left: usize, right: usize, mode: PadMode) -> Tensor<'t> {
        if left == 0 && right == 0 {
            return self;
        }
        let len = self.dim(axis);
        match mode {
            PadMode::Zeros => {
                let mut parts = Vec::new();
                let mut shape = self.shape();
                if left > 0 {
                    shape[axis] = left;
                    parts.push(self.tape.constant(ArrayD::zeros(IxDyn(&shape))));
                }
                parts.push(self);
                if right > 0 {
                    shape[axis] = right;
                    parts.push(self.tape.constant(ArrayD::zeros(IxDyn(&shape))));
                }
                Tensor::concat(&parts, axis)
            }
            PadMode::Replicate | PadMode::Circular => {
                let idx: Vec<usize> = (0..left + len + right)
                    .map(|p| {
                        let i = p as i64 - left as i64;
                        if mode == PadMode::Replicate {
                            i.clamp(0, len as i64 - 1) as usize
                        } else {
                            i.rem_euclid(len as i64) as usize
                        }
                    })
                    .collect();
                self.index_select(axis, &idx)
            }
        }
    }

    /// Sliding windows over axis 1 of `[B, L, C]`: returns
    /// `[B, (L - size)/step + 1, size * C]`, window-major then channel.
    pub fn unfold(self, size: usize, step: usize) -> Tensor<'t> {
        let (b, l, c) = (self.dim(0), self.dim(1), self.dim(2));
        assert!(size <= l && step > 0, "unfold size {size} step {step} over length {l}");
        let n = (l - size) / step + 1;
        let idx: Vec<usize> = (0..n).flat_map(|i| (0..size).map(move |j| i * step + j)).collect();
        self.index_select(1, &idx).reshape(&[b, n, size * c])
    }

    /// 1-D convolution over axis 1 of `[B, L, Cin]` with weight
    /// `[k * Cin, Cout]` (no padding, stride 1).
    pub fn conv1d(self, weight: Tensor<'t>, k: usize) -> Tensor<'t> {
        self.unfold(k, 1).matmul(weight)
    }

    /// Max pooling over axis 1 of `[B, L, C]`; padding never wins.
    pub fn max_pool1d(self, k: usize, stride: usize, pad: usize) -> Tensor<'t> {
        let x = self.value();
        let (b, l, c) = as3(&x);
        let lout = (l + 2 * pad - k) / stride + 1;
        let mut out = Array3::<f64>::zeros((b, lout, c));
        let mut arg = vec![0usize; b * lout * c];
        let x3 = x.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        for bi in 0..b {
            for o in 0..lout {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for j in 0..k {
                        let p = (o * stride + j) as i64 - pad as i64;
                        if p < 0 || p >= l as i64 {
                            continue;
                        }
                        let v = x3[[bi, p as usize, ch]];
                        if v > best {
                            best = v;
                            at = p as usize;
                        }
                    }
                    out[[bi, o, ch]] = best;
                    arg[(bi * lout + o) * c + ch] = at;
                }
            }
        }
        self.tape.push(out.into_dyn(), &[self.id], move || {
            move |g: &Arr, _: &[bool]| {
                let mut gx = Array3::<f64>::zeros((b, l, c));
                for bi in 0..b {
                    for o in 0..lout {
                        for ch in 0..c {
                            gx[[bi, arg[(bi * lout + o) * c + ch], ch]] += g[[bi, o, ch]];
                        }
                    }
                }
                vec![Some(gx.into_dyn())]
            }
        })
    }

    /// Moving average with window `k` over axis 1 of `[B, L, C]`, padding
    /// both ends by `(k - 1) / 2` repeated edge values.
    pub fn moving_avg(self, k: usize) -> Tensor<'t> {
        let x = self.value();
        let (b, l, c) = as3(&x);
        let front = (k - 1) / 2;
        let lout = l + 2 * front + 1 - k;
        let src = move |t: usize, j: usize| (t as i64 + j as i64 - front as i64).clamp(0, l as i64 - 1) as usize;
        let x3 = x.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        let mut out = Array3::<f64>::zeros((b, lout, c));
        let inv = 1.0 / k as f64;
        for bi in 0..b {
            for t in 0..lout {
                let mut row = out.slice_mut(s![bi, t, ..]);
                for j in 0..k {
                    row.scaled_add(inv, &x3.slice(s![bi, src(t, j), ..]));
                }
            }
        }
        self.tape.push(out.into_dyn(), &[self.id], move || {
            move |g: &Arr, _: &[bool]| {
                let g3 = g.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                let mut gx = Array3::<f64>::zeros((b, l, c));
                for bi in 0..b {
                    for t in 0..lout {
                        for j in 0..k {
                            gx.slice_mut(s![bi, src(t, j), ..]).scaled_add(inv, &g3.slice(s![bi, t, ..]));
                        }
                    }
                }
                vec![Some(gx.into_dyn())]
            }
        })
    }

    /// 'Same'-padded (zeros) 2-D convolution of channels-last `[N, H, W, C]`
    /// with weight `[kh * kw * C, Cout]`; kernel sizes must be odd. Kernel
    /// taps that can only ever see padding are skipped. The im2col buffer is
    /// rebuilt in the backward pass instead of stored.
    pub fn conv2d_same(self, weight: Tensor<'t>, kh: usize, kw: usize) -> Tensor<'t> {
        assert!(kh % 2 == 1 && kw % 2 == 1, "conv2d_same needs odd kernels");
        let x = self.value();
        let w = weight.value();
        let p = self.tape.precision;
        let sh = x.shape().to_vec();
        let (n, h, wd, c) = (sh[0], sh[1], sh[2], sh[3]);
        let co = w.shape()[1];
        assert_eq!(w.shape()[0], kh * kw * c, "conv2d weight rows");
        let (ch, cw) = ((kh / 2) as i64, (kw / 2) as i64);
        // (row offset, column offset, first weight row) per live tap
        let taps: Vec<(i64, i64, usize)> = (0..kh)
            .flat_map(|di| (0..kw).map(move |dj| (di, dj)))
            .filter(|&(di, dj)| (di as i64 - ch).abs() < h as i64 && (dj as i64 - cw).abs() < wd as i64)
            .map(|(di, dj)| (di as i64 - ch, dj as i64 - cw, (di * kw + dj) * c))
            .collect();
        let nt = taps.len();
        let taps = Arc::new(taps);
        let tp = taps.clone();
        let im2col = move |x: &Arr| -> Array2<f64> {
            let x4 = x.view().into_dimensionality::<ndarray::Ix4>().unwrap();
            let mut cols = Array2::<f64>::zeros((n * h * wd, nt * c));
            for ni in 0..n {
                for i in 0..h {
                    for j in 0..wd {
                        let mut row = cols.row_mut((ni * h + i) * wd + j);
                        for (t, &(oi, oj, _)) in tp.iter().enumerate() {
                            let (ii, jj) = (i as i64 + oi, j as i64 + oj);
                            if ii < 0 || ii >= h as i64 || jj < 0 || jj >= wd as i64 {
                                continue;
                            }
                            row.slice_mut(s![t * c..(t + 1) * c]).assign(&x4.slice(s![ni, ii as usize, jj as usize, ..]));
                        }
                    }
                }
            }
            cols
        };
        let w2 = w.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let mut w_live = Array2::<f64>::zeros((nt * c, co));
        for (t, &(_, _, r)) in taps.iter().enumerate() {
            w_live.slice_mut(s![t * c..(t + 1) * c, ..]).assign(&w2.slice(s![r..r + c, ..]));
        }
        let out = gemm(im2col(&x).view(), w_live.view(), p).into_shape_with_order(IxDyn(&[n, h, wd, co])).unwrap();
        self.tape.push(out, &[self.id, weight.id], move || {
            move |g: &Arr, need: &[bool]| {
                let g2: ArrayView2<f64> = g.view().into_shape_with_order((n * h * wd, co)).unwrap();
                let gw = need[1].then(|| {
                    let live = gemm(im2col(&x).t(), g2, p);
                    let mut gw = Array2::<f64>::zeros((kh * kw * c, co));
                    for (t, &(_, _, r)) in taps.iter().enumerate() {
                        gw.slice_mut(s![r..r + c, ..]).assign(&live.slice(s![t * c..(t + 1) * c, ..]));
                    }
                    gw.into_dyn()
                });
                let gx = need[0].then(|| {
                    let gcols = gemm(g2, w_live.t(), p);
                    let mut gx = ndarray::Array4::<f64>::zeros((n, h, wd, c));
                    for ni in 0..n {
                        for i in 0..h {
                            for j in 0..wd {
                                let row = gcols.row((ni * h + i) * wd + j);
                                for (t, &(oi, oj, _)) in taps.iter().enumerate() {
                                    let (ii, jj) = (i as i64 + oi, j as i64 + oj);
                                    if ii < 0 || ii >= h as i64 || jj < 0 || jj >= wd as i64 {
                                        continue;
                                    }
                                    let mut dst = gx.slice_mut(s![ni, ii as usize, jj as usize, ..]);
                                    dst += &row.slice(s![t * c..(t + 1) * c]);
                                }
                            }
                        }
                    }
                    gx.into_dyn()
                });
                vec![gx, gw]
            }
        })
    }

    /// Rows `idx[n]` of each `[L, D]` slice of `[N, L, D]`.
    pub fn gather_rows(self, idx: &[Vec<usize>]) -> Tensor<'t> {
        let x = self.value();
        let (n, l, d) = as3(&x);
        assert_eq!(idx.len(), n, "gather_rows index count");
        let u = idx.first().map_or(0, |r| r.len());
        let mut out = Array3::<f64>::zeros((n, u, d));
        for (ni, rows) in idx.iter().enumerate() {
            assert_eq!(rows.len(), u, "gather_rows ragged indices");
            for (j, &r) in rows.iter().enumerate() {
                out.slice_mut(s![ni, j, ..]).assign(&x.slice(s![ni, r, ..]));
            }
        }
        let idx = idx.to_vec();
        self.tape.push(out.into_dyn(), &[self.id], move || {
            move |g: &Arr, _: &[bool]| {
                let mut gx = Array3::<f64>::zeros((n, l, d));
                for (ni, rows) in idx.iter().enumerate() {
                    for (j, &r) in rows.iter().enumerate() {
                        let mut dst = gx.slice_mut(s![ni, r, ..]);
                        dst += &g.slice(s![ni, j, ..]);
                    }
                }
                vec![Some(gx.into_dyn())]
            }
        })
    }

    /// `self` with rows `idx[n]` of slice `n` replaced by `src[n]`. Indices
    /// within one slice must be distinct.
    pub fn scatter_rows(self, src: Tensor<'t>, idx: &[Vec<usize>]) -> Tensor<'t> {
        let base = self.value();
        let sv = src.value();
        let (n, _, d) = as3(&base);
        let (sn, u, sd) = as3(&sv);
        assert!(sn == n && sd == d && idx.len() == n, "scatter_rows shapes");
        let mut out = (*base).clone();
        for (ni, rows) in idx.iter().enumerate() {
            for (j, &r) in rows.iter().enumerate() {
                out.slice_mut(s![ni, r, ..]).assign(&sv.slice(s![ni, j, ..]));
            }
        }
        let idx = idx.to_vec();
        self.tape.push(out, &[self.id, src.id], move || {
            move |g: &Arr, need: &[bool]| {
                let gb = need[0].then(|| {
                    let mut gb = g.clone();
                    for (ni, rows) in idx.iter().enumerate() {
                        for &r in rows {
                            gb.slice_mut(s![ni, r, ..]).fill(0.0);
                        }
                    }
                    gb
                });
                let gs = need[1].then(|| {
                    let mut gs = Array3::<f64>::zeros((n, u, d));
                    for (ni, rows) in idx.iter().enumerate() {
                        for (j, &r) in rows.iter().enumerate() {
                            gs.slice_mut(s![ni, j, ..]).assign(&g.slice(s![ni, r, ..]));
                        }
                    }
                    gs.into_dyn()
                });
                vec![gb, gs]
            }
        })
    }

    /// Channel-averaged circular cross-correlation of `[B, L, D]` inputs:
    /// `R[b, τ] = 1/D Σ_c Σ_t q[b, (t+τ) mod L, c] · k[b, t, c]`, via FFT.
    pub fn circular_corr_mean(self, k: Tensor<'t>) -> Tensor<'t> {
        let qv = self.value();
        let kv = k.value();
        let (b, l, d) = as3(&qv);
        assert_eq!(kv.shape(), qv.shape(), "circular_corr_mean shapes");
        let (fwd, inv) = fft_pair(l);
        let spectra = move |x: &Arr| -> Vec<Vec<Complex<f64>>> {
            // One spectrum per (batch, channel), stored batch-major.
            let mut out = Vec::with_capacity(b * d);
            for bi in 0..b {
                for ch in 0..d {
                    let mut buf: Vec<Complex<f64>> = (0..l).map(|t| Complex::new(x[[bi, t, ch]], 0.0)).collect();
                    fwd.process(&mut buf);
                    out.push(buf);
                }
            }
            out
        };
        let qs = spectra(&qv);
        let ks = spectra(&kv);
        let norm = 1.0 / (l as f64 * d as f64);
        let mut out = Array2::<f64>::zeros((b, l));
        for bi in 0..b {
            let mut acc = vec![Complex::new(0.0, 0.0); l];
            for ch in 0..d {
                for (a, (x, y)) in acc.iter_mut().zip(qs[bi * d + ch].iter().zip(&ks[bi * d + ch])) {
                    *a += x * y.conj();
                }
            }
            inv.process(&mut acc);
            for t in 0..l {
                out[[bi, t]] = acc[t].re * norm;
            }
        }
        let (fwd, inv) = fft_pair(l);
        self.tape.push(out.into_dyn(), &[self.id, k.id], move || {
            move |g: &Arr, need: &[bool]| {
                let mut gq = Array3::<f64>::zeros((b, l, d));
                let mut gk = Array3::<f64>::zeros((b, l, d));
                for bi in 0..b {
                    let mut gs: Vec<Complex<f64>> = (0..l).map(|t| Complex::new(g[[bi, t]], 0.0)).collect();
                    fwd.process(&mut gs);
                    for ch in 0..d {
                        if need[0] {
                            let mut buf: Vec<Complex<f64>> =
                                gs.iter().zip(&ks[bi * d + ch]).map(|(x, y)| x * y).collect();
                            inv.process(&mut buf);
                            for t in 0..l {
                                gq[[bi, t, ch]] = buf[t].re * norm;
                            }
                        }
                        if need[1] {
                            let mut buf: Vec<Complex<f64>> =
                                qs[bi * d + ch].iter().zip(&gs).map(|(x, y)| x * y.conj()).collect();
                            inv.process(&mut buf);
                            for t in 0..l {
                                gk[[bi, t, ch]] = buf[t].re * norm;
                            }
                        }
                    }
                }
                vec![need[0].then(|| gq.into_dyn()), need[1].then(|| gk.into_dyn())]
            }
        })
    }

    /// Weighted sum of rolled copies of `v` `[B, L, D]`:
    /// `out[b, t] = Σ_i w[b, i] · v[b, (t + delays[b][i]) mod L]`.
    pub fn delay_aggregate(self, w: Tensor<'t>, delays: &[Vec<usize>]) -> Tensor<'t> {
        let v = self.value();
        let wv = w.value();
        let (b, l, d) = as3(&v);
        let k = wv.shape()[1];
        assert!(wv.shape() == [b, k] && delays.len() == b, "delay_aggregate shapes");
        let v3 = v.view().into_dimensionality::<ndarray::Ix3>().unwrap();
        let mut out = Array3::<f64>::zeros((b, l, d));
        for bi in 0..b {
            for (i, &dl) in delays[bi].iter().enumerate() {
                let wt = wv[[bi, i]];
                for t in 0..l {
                    out.slice_mut(s![bi, t, ..]).scaled_add(wt, &v3.slice(s![bi, (t + dl) % l, ..]));
                }
            }
        }
        let delays = delays.to_vec();
        self.tape.push(out.into_dyn(), &[self.id, w.id], move || {
            move |g: &Arr, need: &[bool]| {
                let g3 = g.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                let v3 = v.view().into_dimensionality::<ndarray::Ix3>().unwrap();
                let mut gv = Array3::<f64>::zeros((b, l, d));
                let mut gw = Array2::<f64>::zeros((b, k));
                for bi in 0..b {
                    for (i, &dl) in delays[bi].iter().enumerate() {
                        let wt = wv[[bi, i]];
                        let mut acc = 0.0;
                        for t in 0..l {
                            let src = (t + dl) % l;
                            let gt = g3.slice(s![bi, t, ..]);
                            if need[0] {
                                gv.slice_mut(s![bi, src, ..]).scaled_add(wt, &gt);
                            }
                            if need[1] {
                                acc += gt.dot(&v3.slice(s![bi, src, ..]));
                            }
                        }
                        gw[[bi, i]] = acc;
                    }
                }
                vec![need[0].then(|| gv.into_dyn()), need[1].then(|| gw.into_dyn())]
            }
        })
    }

    /// Channel-averaged DFT magnitude of `[B, T, C]` at the per-sample
    /// frequency indices `freqs[b]`; returns `[B, K]`.
    pub fn dft_amplitude(self, freqs: &[Vec<usize>]) -> Tensor<'t> {
        let x = self.value();
        let (b, t_len, c) = as3(&x);
        assert_eq!(freqs.len(), b, "dft_amplitude index count");
        let k = freqs.first().map_or(0, |f| f.len());
        let angle = move |f: usize, t: usize| 2.0 * std::f64::consts::PI * ((f * t) % t_len) as f64 / t_len as f64;
        // (re, im, |X|) per (b, i, channel).
        let mut parts = vec![(0.0, 0.0, 0.0); b * k * c];
        let mut out = Array2::<f64>::zeros((b, k));
        for bi in 0..b {
            for (i, &f) in freqs[bi].iter().enumerate() {
                for ch in 0..c {
                    let (mut re, mut im) = (0.0, 0.0);
                    for t in 0..t_len {
                        let (sn, cs) = angle(f, t).sin_cos();
                        re += x[[bi, t, ch]] * cs;
                        im -= x[[bi, t, ch]] * sn;
                    }
                    let amp = re.hypot(im);
                    parts[(bi * k + i) * c + ch] = (re, im, amp);
                    out[[bi, i]] += amp / c as f64;
                }
            }
        }
        let freqs = freqs.to_vec();
        self.tape.push(out.into_dyn(), &[self.id], move || {
            move |g: &Arr, _: &[bool]| {
                let mut gx = Array3::<f64>::zeros((b, t_len, c));
                for bi in 0..b {
                    for (i, &f) in freqs[bi].iter().enumerate() {
                        let gi = g[[bi, i]] / c as f64;
                        for ch in 0..c {
                            let (re, im, amp) = parts[(bi * k + i) * c + ch];
                            if amp == 0.0 {
                                continue;
                            }
                            for t in 0..t_len {
                                let (sn, cs) = angle(f, t).sin_cos();
                                gx[[bi, t, ch]] += gi * (re * cs - im * sn) / amp;
                            }
                        }
                    }
                }
                vec![Some(gx.into_dyn())]
            }
        })
    }
}
