//! Prediction-versus-truth line plots as SVG.

use std::path::Path;

use ndarray::Array2;
use plotters::prelude::*;

use crate::data::WindowSet;
use crate::error::{Error, Result};

/// Consecutive test points of one building in kWh. Point `i` is horizon
/// step `step` of the building's `i`-th window, so successive points are
/// successive 15-minute slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    pub building_id: String,
    pub step: usize,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
}

/// Collects up to `first_k` points of building `building` from `[N, T]`
/// normalized forecasts over `set`.
pub fn trace(pred: &Array2<f64>, set: &WindowSet, building: usize, first_k: usize, step: usize) -> Result<PredictionTrace> {
    let n_buildings = set.data.series.len();
    if building >= n_buildings {
        return Err(Error::BadIndex { index: building, len: n_buildings });
    }
    let horizon = set.spec().horizon;
    if step >= horizon {
        return Err(Error::BadIndex { index: step, len: horizon });
    }
    if first_k == 0 {
        return Err(Error::BadValue("a plot needs at least one point".into()));
    }
    if pred.dim() != (set.len(), horizon) {
        return Err(Error::AlignmentError(format!("{:?} forecasts for {} windows of horizon {horizon}", pred.dim(), set.len())));
    }
    let series = &set.data.series[building];
    let id = &series.building_id;
    let norm = &set.data.normalizer;
    let lookback = set.spec().lookback;
    let (mut truth, mut prediction) = (Vec::new(), Vec::new());
    for (i, &(b, start)) in set.entries.iter().enumerate() {
        if b != building {
            continue;
        }
        truth.push(norm.denormalize_load(id, series.values[[start + lookback + step, 0]])?);
        prediction.push(norm.denormalize_load(id, pred[[i, step]])?);
        if truth.len() == first_k {
            break;
        }
    }
    if truth.is_empty() {
        return Err(Error::InsufficientData(format!("building {id} has no windows in this split")));
    }
    Ok(PredictionTrace { building_id: id.clone(), step, truth, prediction })
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Renders `trace` as an SVG document. Output depends only on the inputs.
pub fn render_svg(trace: &PredictionTrace, title: &str) -> Result<String> {
    let k = trace.truth.len();
    let (lo, hi) = trace
        .truth
        .iter()
        .chain(&trace.prediction)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let pad = ((hi - lo) * 0.05).max(1e-6);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (960, 360)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(56)
            .build_cartesian_2d(0f64..(k.max(2) - 1) as f64, (lo - pad)..(hi + pad))
            .map_err(plot_err)?;
        chart.configure_mesh().x_desc("test point").y_desc("load (kWh)").draw().map_err(plot_err)?;
        let line = |v: &[f64]| v.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect::<Vec<_>>();
        chart
            .draw_series(LineSeries::new(line(&trace.truth), BLACK.stroke_width(1)))
            .map_err(plot_err)?
            .label("ground truth")
            .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], BLACK));
        chart
            .draw_series(LineSeries::new(line(&trace.prediction), RED.stroke_width(1)))
            .map_err(plot_err)?
            .label("prediction")
            .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], RED));
        chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw().map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

pub fn write_svg(trace: &PredictionTrace, title: &str, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, render_svg(trace, title)?)?;
    Ok(())
}
