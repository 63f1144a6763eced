use std::ops::Range;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{split, BuildingRecord, NormScope, Normalizer, SplitBounds, SplitSpec, TimeIndices};
use crate::error::{Error, Result};

/// Lookback `L` and lookahead `T`, in steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { lookback: 512, horizon: 96 }
    }
}

impl WindowSpec {
    pub fn new(lookback: usize, horizon: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(Error::BadValue(format!("window needs L >= 1 and T >= 1, got L={lookback}, T={horizon}")));
        }
        Ok(WindowSpec { lookback, horizon })
    }

    pub fn span(&self) -> usize {
        self.lookback + self.horizon
    }

    /// Number of stride-1 windows in a segment of length `n`.
    pub fn count(&self, n: usize) -> Result<usize> {
        if n < self.span() {
            return Err(Error::InsufficientData(format!(
                "segment of {n} steps is shorter than L+T = {}",
                self.span()
            )));
        }
        Ok(n - self.span() + 1)
    }
}

/// One supervised sample, in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub y_hist: Vec<f64>,
    /// (temperature, wind speed) per lookback step.
    pub x_hist: Vec<[f64; 2]>,
    /// Calendar indices over lookback and horizon.
    pub u_full: Vec<TimeIndices>,
    pub s: [f64; 3],
    pub y_target: Vec<f64>,
}

/// A building's series after normalization. `values` columns follow
/// [`super::DYNAMIC_FEATURES`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    pub building_id: String,
    pub values: Array2<f64>,
    pub time: Vec<TimeIndices>,
    pub statics: [f64; 3],
}

impl NormalizedSeries {
    pub fn new(record: &BuildingRecord, normalizer: &Normalizer) -> Result<Self> {
        let stats = normalizer.stats_for(record.building_id())?;
        let n = record.len();
        let mut raw = Array2::zeros((n, 3));
        for f in 0..3 {
            for (t, v) in record.dynamic_column(f).iter().enumerate() {
                raw[[t, f]] = *v;
            }
        }
        Ok(NormalizedSeries {
            building_id: record.building_id().to_string(),
            values: stats.normalize(raw.view())?,
            time: record.time.clone(),
            statics: normalizer.normalize_statics(record.static_features.values()),
        })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample whose lookback starts at absolute index `start`.
    pub fn sample_at(&self, start: usize, spec: &WindowSpec) -> WindowSample {
        let (l, t) = (spec.lookback, spec.horizon);
        let hist = start..start + l;
        WindowSample {
            y_hist: hist.clone().map(|i| self.values[[i, 0]]).collect(),
            x_hist: hist.map(|i| [self.values[[i, 1]], self.values[[i, 2]]]).collect(),
            u_full: self.time[start..start + l + t].to_vec(),
            s: self.statics,
            y_target: (start + l..start + l + t).map(|i| self.values[[i, 0]]).collect(),
        }
    }
}

/// A contiguous range of one normalized series.
#[derive(Debug, Clone)]
pub struct Segment<'a> {
    pub series: &'a NormalizedSeries,
    pub range: Range<usize>,
}

/// Stride-1 windows lying entirely inside `segment`, in chronological order.
pub fn windows<'a>(segment: &Segment<'a>, spec: WindowSpec) -> Result<impl Iterator<Item = WindowSample> + 'a> {
    let count = spec.count(segment.range.len())?;
    let series = segment.series;
    let first = segment.range.start;
    Ok((first..first + count).map(move |start| series.sample_at(start, &spec)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

/// Normalized buildings together with their split boundaries.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub series: Vec<NormalizedSeries>,
    pub bounds: Vec<SplitBounds>,
    pub normalizer: Normalizer,
    pub window: WindowSpec,
}

impl PreparedDataset {
    /// Splits every building, fits the normalizer on the train segments and
    /// normalizes the full series with it.
    pub fn new(records: &[BuildingRecord], split_spec: &SplitSpec, scope: NormScope, window: WindowSpec) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InsufficientData("dataset has no buildings".into()));
        }
        let bounds = records.iter().map(|r| split(r, split_spec)).collect::<Result<Vec<_>>>()?;
        let train: Vec<BuildingRecord> = records.iter().zip(&bounds).map(|(r, b)| r.slice(b.train.clone())).collect();
        let normalizer = Normalizer::fit(&train, scope)?;
        Self::with_normalizer(records, bounds, normalizer, window)
    }

    /// Uses previously fitted statistics (e.g. those stored in a checkpoint).
    pub fn with_normalizer(
        records: &[BuildingRecord],
        bounds: Vec<SplitBounds>,
        normalizer: Normalizer,
        window: WindowSpec,
    ) -> Result<Self> {
        let series = records.iter().map(|r| NormalizedSeries::new(r, &normalizer)).collect::<Result<Vec<_>>>()?;
        Ok(PreparedDataset { series, bounds, normalizer, window })
    }

    pub fn segment(&self, building: usize, kind: SplitKind) -> Segment<'_> {
        Segment { series: &self.series[building], range: self.bounds[building].get(kind) }
    }

    /// All windows of one split, building-major and time-minor.
    pub fn window_set(&self, kind: SplitKind) -> Result<WindowSet<'_>> {
        let mut entries = Vec::new();
        for (b, bounds) in self.bounds.iter().enumerate() {
            let range = bounds.get(kind);
            let count = self.window.count(range.len()).map_err(|e| match e {
                Error::InsufficientData(m) => {
                    Error::InsufficientData(format!("building {} {kind:?} split: {m}", self.series[b].building_id))
                }
                other => other,
            })?;
            entries.extend((range.start..range.start + count).map(|s| (b, s)));
        }
        Ok(WindowSet { data: self, kind, entries })
    }
}

/// Index over the windows of one split, materialized lazily into batches.
#[derive(Debug, Clone)]
pub struct WindowSet<'a> {
    pub data: &'a PreparedDataset,
    pub kind: SplitKind,
    /// (building index, absolute start of the lookback).
    pub entries: Vec<(usize, usize)>,
}

impl<'a> WindowSet<'a> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn spec(&self) -> WindowSpec {
        self.data.window
    }

    pub fn sample(&self, i: usize) -> WindowSample {
        let (b, start) = self.entries[i];
        self.data.series[b].sample_at(start, &self.data.window)
    }

    /// Keeps only the listed windows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> WindowSet<'a> {
        WindowSet { data: self.data, kind: self.kind, entries: indices.iter().map(|&i| self.entries[i]).collect() }
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let spec = self.data.window;
        let (l, t) = (spec.lookback, spec.horizon);
        let n = indices.len();
        let mut batch = Batch {
            y_hist: Array2::zeros((n, l)),
            x_hist: Array3::zeros((n, l, 2)),
            u_full: Array3::zeros((n, l + t, 2)),
            s: Array2::zeros((n, 3)),
            y_target: Array2::zeros((n, t)),
        };
        for (row, &i) in indices.iter().enumerate() {
            let (b, start) = self.entries[i];
            let series = &self.data.series[b];
            for k in 0..l {
                batch.y_hist[[row, k]] = series.values[[start + k, 0]];
                batch.x_hist[[row, k, 0]] = series.values[[start + k, 1]];
                batch.x_hist[[row, k, 1]] = series.values[[start + k, 2]];
            }
            for k in 0..l + t {
                let ti = series.time[start + k];
                batch.u_full[[row, k, 0]] = ti.interval_of_day as usize;
                batch.u_full[[row, k, 1]] = ti.day_of_week as usize;
            }
            for k in 0..3 {
                batch.s[[row, k]] = series.statics[k];
            }
            for k in 0..t {
                batch.y_target[[row, k]] = series.values[[start + l + k, 0]];
            }
        }
        batch
    }

    /// Consecutive batches covering every window once, in enumeration order.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = (Range<usize>, Batch)> + '_ {
        let n = self.len();
        let bs = batch_size.max(1);
        (0..n.div_ceil(bs)).map(move |k| {
            let range = k * bs..((k + 1) * bs).min(n);
            let idx: Vec<usize> = range.clone().collect();
            (range, self.batch(&idx))
        })
    }
}

/// Model-ready mini-batch of windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// [B, L] normalized load history.
    pub y_hist: Array2<f64>,
    /// [B, L, 2] normalized weather history.
    pub x_hist: Array3<f64>,
    /// [B, L+T, 2] interval-of-day and day-of-week indices.
    pub u_full: Array3<usize>,
    /// [B, 3] normalized static features.
    pub s: Array2<f64>,
    /// [B, T] normalized load targets.
    pub y_target: Array2<f64>,
}

impl Batch {
    pub fn from_samples(samples: &[WindowSample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::shape("empty batch"))?;
        let (l, t) = (first.y_hist.len(), first.y_target.len());
        let n = samples.len();
        let mut batch = Batch {
            y_hist: Array2::zeros((n, l)),
            x_hist: Array3::zeros((n, l, 2)),
            u_full: Array3::zeros((n, l + t, 2)),
            s: Array2::zeros((n, 3)),
            y_target: Array2::zeros((n, t)),
        };
        for (row, w) in samples.iter().enumerate() {
            if w.y_hist.len() != l || w.y_target.len() != t || w.x_hist.len() != l || w.u_full.len() != l + t {
                return Err(Error::shape(format!("sample {row} does not match window L={l}, T={t}")));
            }
            for k in 0..l {
                batch.y_hist[[row, k]] = w.y_hist[k];
                batch.x_hist[[row, k, 0]] = w.x_hist[k][0];
                batch.x_hist[[row, k, 1]] = w.x_hist[k][1];
            }
            for (k, ti) in w.u_full.iter().enumerate() {
                batch.u_full[[row, k, 0]] = ti.interval_of_day as usize;
                batch.u_full[[row, k, 1]] = ti.day_of_week as usize;
            }
            for k in 0..3 {
                batch.s[[row, k]] = w.s[k];
            }
            for k in 0..t {
                batch.y_target[[row, k]] = w.y_target[k];
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.y_hist.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookback(&self) -> usize {
        self.y_hist.ncols()
    }

    pub fn horizon(&self) -> usize {
        self.y_target.ncols()
    }

    /// Rows `indices` of this batch, in order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        use ndarray::Axis;
        Batch {
            y_hist: self.y_hist.select(Axis(0), indices),
            x_hist: self.x_hist.select(Axis(0), indices),
            u_full: self.u_full.select(Axis(0), indices),
            s: self.s.select(Axis(0), indices),
            y_target: self.y_target.select(Axis(0), indices),
        }
    }

    pub fn check(&self, spec: &WindowSpec) -> Result<()> {
        let b = self.len();
        let ok = self.y_hist.dim() == (b, spec.lookback)
            && self.x_hist.dim() == (b, spec.lookback, 2)
            && self.u_full.dim() == (b, spec.span(), 2)
            && self.s.dim() == (b, 3)
            && self.y_target.dim() == (b, spec.horizon);
        if !ok || b == 0 {
            return Err(Error::shape(format!(
                "batch (B={b}, L={}, T={}) does not match window L={}, T={}",
                self.lookback(),
                self.horizon(),
                spec.lookback,
                spec.horizon
            )));
        }
        if self.u_full.iter().step_by(2).any(|&i| i >= super::STEPS_PER_DAY)
            || self.u_full.iter().skip(1).step_by(2).any(|&d| d >= super::DAYS_PER_WEEK)
        {
            return Err(Error::BadValue("calendar index out of range".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    fn dataset(n_steps: usize, window: WindowSpec) -> PreparedDataset {
        let recs = generate(&SynthSpec { n_buildings: 3, n_types: 3, n_steps, ..SynthSpec::default() }).unwrap();
        PreparedDataset::new(&recs, &SplitSpec::default(), NormScope::Global, window).unwrap()
    }

    #[test]
    fn window_count_matches_formula() {
        let spec = WindowSpec::new(512, 96).unwrap();
        assert_eq!(spec.count(1000).unwrap(), 393);
        assert_eq!(spec.count(608).unwrap(), 1);
        assert!(matches!(spec.count(607), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn segment_windows_stay_inside_segment() {
        let ds = dataset(400, WindowSpec::new(12, 4).unwrap());
        let seg = ds.segment(1, SplitKind::Val);
        let samples: Vec<_> = windows(&seg, ds.window).unwrap().collect();
        assert_eq!(samples.len(), seg.range.len() - 16 + 1);
        let last = samples.last().unwrap();
        let end = seg.range.end;
        assert_eq!(*last.y_target.last().unwrap(), ds.series[1].values[[end - 1, 0]]);
    }

    #[test]
    fn target_follows_history() {
        let ds = dataset(400, WindowSpec::new(8, 3).unwrap());
        let ws = ds.window_set(SplitKind::Train).unwrap();
        let (b, start) = ws.entries[5];
        let w = ws.sample(5);
        assert_eq!(w.y_hist[7], ds.series[b].values[[start + 7, 0]]);
        assert_eq!(w.y_target[0], ds.series[b].values[[start + 8, 0]]);
        assert_eq!(w.u_full.len(), 11);
    }

    #[test]
    fn batch_matches_samples() {
        let ds = dataset(300, WindowSpec::new(8, 3).unwrap());
        let ws = ds.window_set(SplitKind::Test).unwrap();
        let idx = [0, 3, ws.len() - 1];
        let direct = ws.batch(&idx);
        let samples: Vec<_> = idx.iter().map(|&i| ws.sample(i)).collect();
        assert_eq!(direct, Batch::from_samples(&samples).unwrap());
        direct.check(&ds.window).unwrap();
    }

    #[test]
    fn short_split_is_insufficient() {
        let recs = generate(&SynthSpec { n_buildings: 2, n_types: 2, n_steps: 100, ..SynthSpec::default() }).unwrap();
        let ds = PreparedDataset::new(&recs, &SplitSpec::default(), NormScope::Global, WindowSpec::new(8, 4).unwrap()).unwrap();
        assert!(matches!(ds.window_set(SplitKind::Val), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn global_normalization_centres_train_load() {
        let ds = dataset(500, WindowSpec::new(8, 3).unwrap());
        let loads: Vec<f64> = ds
            .series
            .iter()
            .zip(&ds.bounds)
            .flat_map(|(s, b)| b.train.clone().map(move |i| s.values[[i, 0]]))
            .collect();
        let n = loads.len() as f64;
        let mean = loads.iter().sum::<f64>() / n;
        let std = (loads.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6, "{mean} {std}");
    }
}
