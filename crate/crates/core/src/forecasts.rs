//! External forecast files: `window_index,step,prediction`, one row per
//! (window, horizon step). Window indices follow the window enumeration of
//! the scored split (building-major, time-minor).

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::WindowSet;
use crate::error::{Error, Result};
use crate::metrics::{MetricSpace, Scores};
use crate::trainer::score;

pub const FORECAST_HEADER: &str = "window_index,step,prediction";

/// Units of the `prediction` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastUnits {
    /// z-normalized with the dataset's train statistics, as models emit.
    #[default]
    Normalized,
    /// kWh.
    Physical,
}

#[derive(Debug, Serialize, Deserialize)]
struct ForecastRecord {
    window_index: usize,
    step: usize,
    prediction: f64,
}

/// Writes `[N, T]` forecasts, window-major.
pub fn write_forecasts(pred: &Array2<f64>, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for ((window_index, step), &prediction) in pred.indexed_iter() {
        w.serialize(ForecastRecord { window_index, step, prediction })?;
    }
    if pred.is_empty() {
        w.write_record(FORECAST_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_forecasts_file(pred: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    write_forecasts(pred, std::fs::File::create(path)?)
}

/// Reads a forecast file into `[windows, horizon]`. Rows may come in any
/// order but every (window, step) pair must appear exactly once.
pub fn read_forecasts(reader: impl Read, windows: usize, horizon: usize) -> Result<Array2<f64>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != FORECAST_HEADER {
        return Err(Error::SchemaMismatch(format!("forecast header `{}`, expected `{FORECAST_HEADER}`", header.join(","))));
    }
    let mut out = Array2::from_elem((windows, horizon), f64::NAN);
    let mut seen = Array2::from_elem((windows, horizon), false);
    let mut rows = 0;
    for rec in r.deserialize() {
        let rec: ForecastRecord = rec?;
        rows += 1;
        if rec.window_index >= windows || rec.step >= horizon {
            return Err(Error::AlignmentError(format!(
                "row ({}, {}) outside {windows} windows of horizon {horizon}",
                rec.window_index, rec.step
            )));
        }
        if !rec.prediction.is_finite() {
            return Err(Error::BadValue(format!("non-finite prediction at ({}, {})", rec.window_index, rec.step)));
        }
        let cell = (rec.window_index, rec.step);
        if std::mem::replace(&mut seen[cell], true) {
            return Err(Error::AlignmentError(format!("duplicate row ({}, {})", rec.window_index, rec.step)));
        }
        out[cell] = rec.prediction;
    }
    if rows != windows * horizon {
        return Err(Error::AlignmentError(format!("{rows} forecast rows, expected {} ({windows} windows x {horizon} steps)", windows * horizon)));
    }
    Ok(out)
}

pub fn read_forecasts_file(path: impl AsRef<Path>, windows: usize, horizon: usize) -> Result<Array2<f64>> {
    read_forecasts(std::fs::File::open(path)?, windows, horizon)
}

/// Maps kWh forecasts for `set` onto the normalized scale.
pub fn normalize_forecasts(pred: &Array2<f64>, set: &WindowSet) -> Result<Array2<f64>> {
    let norm = &set.data.normalizer;
    let mut out = pred.clone();
    for (mut row, &(b, _)) in out.rows_mut().into_iter().zip(&set.entries) {
        let s = norm.stats_for(&set.data.series[b].building_id)?.load();
        row.mapv_inplace(|v| (v - s.mean) / s.std);
    }
    Ok(out)
}

/// Scores a forecast file against `set` exactly as internal evaluation does.
pub fn eval_external(path: impl AsRef<Path>, set: &WindowSet, units: ForecastUnits, space: MetricSpace) -> Result<Scores> {
    if set.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut pred = read_forecasts_file(path, set.len(), set.spec().horizon)?;
    if units == ForecastUnits::Physical {
        pred = normalize_forecasts(&pred, set)?;
    }
    score(&pred, set, space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_exact() {
        let pred = array![[0.1, -1.0 / 3.0], [2.5e-17, 123456.789]];
        let mut buf = Vec::new();
        write_forecasts(&pred, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("window_index,step,prediction\n0,0,0.1\n"));
        assert_eq!(read_forecasts(&buf[..], 2, 2).unwrap(), pred);
    }

    #[test]
    fn row_order_does_not_matter() {
        let text = "window_index,step,prediction\n1,0,3\n0,1,2\n0,0,1\n1,1,4\n";
        assert_eq!(read_forecasts(text.as_bytes(), 2, 2).unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn misalignment_is_rejected() {
        let short = "window_index,step,prediction\n0,0,1\n0,1,2\n1,0,3\n";
        assert!(matches!(read_forecasts(short.as_bytes(), 2, 2), Err(Error::AlignmentError(_))));
        let dup = "window_index,step,prediction\n0,0,1\n0,0,2\n";
        assert!(matches!(read_forecasts(dup.as_bytes(), 1, 2), Err(Error::AlignmentError(_))));
        let outside = "window_index,step,prediction\n0,0,1\n5,0,2\n";
        assert!(matches!(read_forecasts(outside.as_bytes(), 2, 1), Err(Error::AlignmentError(_))));
        let header = "window,step,prediction\n0,0,1\n";
        assert!(matches!(read_forecasts(header.as_bytes(), 1, 1), Err(Error::SchemaMismatch(_))));
    }
}
