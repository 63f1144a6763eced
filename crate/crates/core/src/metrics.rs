//! Normalized error metrics.
//!
//! With `n` the output dimension and `𝒯` the evaluated (window, horizon-step)
//! pairs:
//!
//! * NMSE = 1/(n|𝒯|) Σ ‖ŷ_t − y_t‖₂² / σ_y²
//! * NMAE = 1/(n|𝒯|) Σ ‖ŷ_t − y_t‖₁ / σ_y
//!
//! NMSE is also the training loss.

use ndarray::{ArrayView, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether metrics are computed on z-normalized values or on kWh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpace {
    #[default]
    Normalized,
    Physical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub sigma_y: f64,
    /// Output dimension of y (1 for building load).
    pub n: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig { sigma_y: 1.0, n: 1 }
    }
}

impl MetricConfig {
    pub fn new(sigma_y: f64, n: usize) -> Result<Self> {
        let cfg = MetricConfig { sigma_y, n };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_y > 0.0) || !self.sigma_y.is_finite() || self.n == 0 {
            return Err(Error::BadValue(format!("metric needs sigma_y > 0 and n >= 1, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub nmse: f64,
    pub nmae: f64,
}

fn check<D: Dimension>(pred: &ArrayView<f64, D>, target: &ArrayView<f64, D>, cfg: &MetricConfig) -> Result<()> {
    cfg.validate()?;
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("predictions {:?} vs targets {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if pred.len() % cfg.n != 0 {
        return Err(Error::shape(format!("{} values are not a multiple of n = {}", pred.len(), cfg.n)));
    }
    Ok(())
}

pub fn nmse<D: Dimension>(pred: ArrayView<f64, D>, target: ArrayView<f64, D>, cfg: &MetricConfig) -> Result<f64> {
    let mut acc = MetricAccumulator::new(*cfg)?;
    acc.update(pred, target)?;
    Ok(acc.finish()?.nmse)
}

pub fn nmae<D: Dimension>(pred: ArrayView<f64, D>, target: ArrayView<f64, D>, cfg: &MetricConfig) -> Result<f64> {
    let mut acc = MetricAccumulator::new(*cfg)?;
    acc.update(pred, target)?;
    Ok(acc.finish()?.nmae)
}

/// Streaming accumulation over batches. Sums are kept in plain f64 and
/// divided once at the end.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    cfg: MetricConfig,
    sq: f64,
    abs: f64,
    count: usize,
}

impl MetricAccumulator {
    pub fn new(cfg: MetricConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MetricAccumulator { cfg, sq: 0.0, abs: 0.0, count: 0 })
    }

    pub fn update<D: Dimension>(&mut self, pred: ArrayView<f64, D>, target: ArrayView<f64, D>) -> Result<()> {
        check(&pred, &target, &self.cfg)?;
        for (p, y) in pred.iter().zip(target.iter()) {
            let r = p - y;
            self.sq += r * r;
            self.abs += r.abs();
        }
        self.count += pred.len();
        Ok(())
    }

    /// Number of scalar residuals seen so far (n·|𝒯|).
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&self) -> Result<Scores> {
        if self.count == 0 {
            return Err(Error::EmptyEvaluation);
        }
        // count = n·|𝒯|: each of the |𝒯| steps contributes n residuals.
        let denom = self.count as f64;
        Ok(Scores {
            nmse: self.sq / denom / (self.cfg.sigma_y * self.cfg.sigma_y),
            nmae: self.abs / denom / self.cfg.sigma_y,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{arr1, Array2};
    use proptest::prelude::*;

    #[test]
    fn perfect_prediction_scores_zero() {
        let y = arr1(&[1.0, -2.0, 3.5]);
        let cfg = MetricConfig::default();
        assert_eq!(nmse(y.view(), y.view(), &cfg).unwrap(), 0.0);
        assert_eq!(nmae(y.view(), y.view(), &cfg).unwrap(), 0.0);
    }

    #[test]
    fn residual_equal_to_sigma_gives_one() {
        let cfg = MetricConfig::new(2.5, 1).unwrap();
        let y = arr1(&[0.0, 1.0, 2.0]);
        let p = y.mapv(|v| v + 2.5);
        assert_relative_eq!(nmse(p.view(), y.view(), &cfg).unwrap(), 1.0);
    }

    #[test]
    fn hand_cases() {
        let cfg = MetricConfig::new(2.0, 1).unwrap();
        let p = arr1(&[1.0, 2.0, 3.0]);
        let y = arr1(&[0.0, 0.0, 0.0]);
        assert_relative_eq!(nmse(p.view(), y.view(), &cfg).unwrap(), 14.0 / 12.0, epsilon = 1e-15);
        assert_relative_eq!(nmae(p.view(), y.view(), &cfg).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn errors() {
        let cfg = MetricConfig::default();
        let a = arr1(&[1.0, 2.0]);
        let b = arr1(&[1.0]);
        assert!(matches!(nmse(a.view(), b.view(), &cfg), Err(Error::ShapeError(_))));
        let e = arr1(&[]);
        assert!(matches!(nmae(e.view(), e.view(), &cfg), Err(Error::EmptyEvaluation)));
        assert!(MetricConfig::new(0.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn nmae_is_homogeneous(vals in prop::collection::vec(-10.0f64..10.0, 1..50), c in 0.01f64..100.0) {
            let y = Array2::<f64>::zeros((vals.len(), 1));
            let p = Array2::from_shape_vec((vals.len(), 1), vals.clone()).unwrap();
            let cfg = MetricConfig::default();
            let base = nmae(p.view(), y.view(), &cfg).unwrap();
            let scaled = nmae(p.mapv(|v| v * c).view(), y.view(), &cfg).unwrap();
            prop_assert!((scaled - c * base).abs() <= 1e-12 * (1.0 + c * base));
        }

        #[test]
        fn batched_equals_single_pass(vals in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..80), cut in 1usize..79) {
            let cut = cut.min(vals.len() - 1);
            let p: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let y: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let cfg = MetricConfig::new(1.7, 1).unwrap();
            let whole = {
                let mut acc = MetricAccumulator::new(cfg).unwrap();
                acc.update(arr1(&p).view(), arr1(&y).view()).unwrap();
                acc.finish().unwrap()
            };
            let mut acc = MetricAccumulator::new(cfg).unwrap();
            acc.update(arr1(&p[..cut]).view(), arr1(&y[..cut]).view()).unwrap();
            acc.update(arr1(&p[cut..]).view(), arr1(&y[cut..]).view()).unwrap();
            let parts = acc.finish().unwrap();
            prop_assert!((whole.nmse - parts.nmse).abs() <= 1e-9 * whole.nmse.max(1e-300));
            prop_assert!((whole.nmae - parts.nmae).abs() <= 1e-9 * whole.nmae.max(1e-300));
        }

        #[test]
        fn zero_iff_equal(vals in prop::collection::vec(-5.0f64..5.0, 1..30), k in 0usize..30, d in 0.001f64..1.0) {
            let y = arr1(&vals);
            let mut p = y.clone();
            let k = k % vals.len();
            p[k] += d;
            let cfg = MetricConfig::default();
            prop_assert!(nmse(p.view(), y.view(), &cfg).unwrap() > 0.0);
            prop_assert!(nmae(p.view(), y.view(), &cfg).unwrap() > 0.0);
        }
    }
}
