use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{BuildingRecord, DYNAMIC_FEATURES, STATIC_FEATURES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    /// One statistic set over the concatenated train data of all buildings.
    #[default]
    Global,
    /// Separate statistics for every building.
    PerBuilding,
}

/// Population mean and standard deviation of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

impl FeatureStats {
    /// Two-pass population statistics over the concatenation of `parts`.
    pub fn from_parts<'a>(parts: impl IntoIterator<Item = &'a [f64]> + Clone) -> Option<Self> {
        let n: usize = parts.clone().into_iter().map(|p| p.len()).sum();
        if n == 0 {
            return None;
        }
        let mean = parts.clone().into_iter().flatten().sum::<f64>() / n as f64;
        let var = parts.into_iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Some(FeatureStats { mean, std: var.sqrt() })
    }
}

/// Feature-wise normalization statistics fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub features: Vec<String>,
    pub stats: Vec<FeatureStats>,
    /// Standard deviation of the first feature. For dynamic statistics this
    /// is the load, the metric normalizer.
    pub sigma_y: f64,
}

/// Fits population mean/std for each named feature. `columns[f]` holds the
/// parts (one per building) of feature `f`; the first feature is the load.
pub fn fit_stats(features: &[&str], columns: &[Vec<&[f64]>]) -> Result<NormStats> {
    if features.len() != columns.len() || features.is_empty() {
        return Err(Error::SchemaMismatch(format!(
            "{} feature names for {} columns",
            features.len(),
            columns.len()
        )));
    }
    let mut stats = Vec::with_capacity(features.len());
    for (name, parts) in features.iter().zip(columns) {
        let n: usize = parts.iter().map(|p| p.len()).sum();
        if n < 2 {
            return Err(Error::InsufficientData(format!("feature `{name}` has {n} train observations, need 2")));
        }
        let s = FeatureStats::from_parts(parts.iter().copied()).expect("non-empty");
        if !(s.std > 0.0) {
            return Err(Error::DegenerateFeature(name.to_string()));
        }
        stats.push(s);
    }
    Ok(NormStats { features: features.iter().map(|s| s.to_string()).collect(), sigma_y: stats[0].std, stats })
}

impl NormStats {
    fn check(&self, values: &ArrayView2<f64>) -> Result<()> {
        if values.ncols() != self.stats.len() {
            return Err(Error::SchemaMismatch(format!(
                "data has {} features, statistics cover {}",
                values.ncols(),
                self.stats.len()
            )));
        }
        Ok(())
    }

    /// z = (v - mean) / std, column by column.
    pub fn normalize(&self, values: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&values)?;
        let mut out = values.to_owned();
        for (mut col, s) in out.axis_iter_mut(Axis(1)).zip(&self.stats) {
            col.mapv_inplace(|v| (v - s.mean) / s.std);
        }
        Ok(out)
    }

    pub fn denormalize(&self, values: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&values)?;
        let mut out = values.to_owned();
        for (mut col, s) in out.axis_iter_mut(Axis(1)).zip(&self.stats) {
            col.mapv_inplace(|z| z * s.std + s.mean);
        }
        Ok(out)
    }

    pub fn load(&self) -> FeatureStats {
        self.stats[0]
    }
}

/// Dataset-wide normalizer: dynamic-feature statistics (global or per
/// building) plus statistics for the static building features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub scope: NormScope,
    /// Pooled train statistics; always fitted, used directly in global scope.
    pub global: NormStats,
    /// Populated in per-building scope only.
    pub per_building: BTreeMap<String, NormStats>,
    /// Statistics of the static features across buildings.
    pub statics: NormStats,
}

impl Normalizer {
    /// Fits on the train segments of all buildings.
    pub fn fit(train: &[BuildingRecord], scope: NormScope) -> Result<Self> {
        let columns: Vec<Vec<&[f64]>> =
            (0..DYNAMIC_FEATURES.len()).map(|f| train.iter().map(|r| r.dynamic_column(f)).collect()).collect();
        let global = fit_stats(&DYNAMIC_FEATURES, &columns)?;

        let mut per_building = BTreeMap::new();
        if scope == NormScope::PerBuilding {
            for r in train {
                let cols: Vec<Vec<&[f64]>> = (0..DYNAMIC_FEATURES.len()).map(|f| vec![r.dynamic_column(f)]).collect();
                let stats = fit_stats(&DYNAMIC_FEATURES, &cols).map_err(|e| match e {
                    Error::DegenerateFeature(f) => Error::DegenerateFeature(format!("{f} (building {})", r.building_id())),
                    other => other,
                })?;
                per_building.insert(r.building_id().to_string(), stats);
            }
        }

        // A static feature is one value per building, so it is constant
        // whenever the dataset holds a single building (and always within a
        // building). Such features are centred and left unscaled.
        let mut static_stats = Vec::new();
        for f in 0..STATIC_FEATURES.len() {
            let vals: Vec<f64> = train.iter().map(|r| r.static_features.values()[f]).collect();
            let mut s = FeatureStats::from_parts([vals.as_slice()]).unwrap_or(FeatureStats { mean: 0.0, std: 1.0 });
            if !(s.std > 0.0) {
                log::warn!("static feature {} is constant across buildings; leaving it unscaled", STATIC_FEATURES[f]);
                s.std = 1.0;
            }
            static_stats.push(s);
        }
        let statics = NormStats {
            features: STATIC_FEATURES.iter().map(|s| s.to_string()).collect(),
            sigma_y: static_stats[0].std,
            stats: static_stats,
        };
        Ok(Normalizer { scope, global, per_building, statics })
    }

    /// Dynamic-feature statistics that apply to `building_id`.
    pub fn stats_for(&self, building_id: &str) -> Result<&NormStats> {
        match self.scope {
            NormScope::Global => Ok(&self.global),
            NormScope::PerBuilding => self
                .per_building
                .get(building_id)
                .ok_or_else(|| Error::SchemaMismatch(format!("no normalization statistics for building {building_id}"))),
        }
    }

    /// Standard deviation of the raw (kWh) train load, for physical-unit metrics.
    pub fn sigma_y_physical(&self) -> f64 {
        self.global.sigma_y
    }

    pub fn normalize_statics(&self, values: [f64; 3]) -> [f64; 3] {
        let mut out = values;
        for (v, s) in out.iter_mut().zip(&self.statics.stats) {
            *v = (*v - s.mean) / s.std;
        }
        out
    }

    /// Inverse of the load normalization for one building.
    pub fn denormalize_load(&self, building_id: &str, z: f64) -> Result<f64> {
        let s = self.stats_for(building_id)?.load();
        Ok(z * s.std + s.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    #[test]
    fn population_std_of_one_two_three() {
        let stats = fit_stats(&["load"], &[vec![&[1.0, 2.0, 3.0][..]]]).unwrap();
        assert_relative_eq!(stats.stats[0].mean, 2.0);
        assert_relative_eq!(stats.stats[0].std, (2.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(stats.sigma_y, 0.816496580927726, epsilon = 1e-12);
    }

    #[test]
    fn constant_feature_is_degenerate() {
        let err = fit_stats(&["load"], &[vec![&[4.0, 4.0, 4.0][..]]]).unwrap_err();
        assert!(matches!(err, Error::DegenerateFeature(_)));
    }

    #[test]
    fn mean_maps_to_zero_and_mean_plus_std_to_one() {
        let stats = fit_stats(&["load"], &[vec![&[1.0, 2.0, 3.0][..]]]).unwrap();
        let s = stats.stats[0];
        let z = stats.normalize(Array2::from_shape_vec((2, 1), vec![s.mean, s.mean + s.std]).unwrap().view()).unwrap();
        assert_relative_eq!(z[[0, 0]], 0.0);
        assert_relative_eq!(z[[1, 0]], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn round_trip_on_random_values() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..3000).map(|_| rng.random_range(-500.0..500.0)).collect();
        let m = Array2::from_shape_vec((1000, 3), data).unwrap();
        let cols: Vec<Vec<f64>> = (0..3).map(|c| m.column(c).to_vec()).collect();
        let parts: Vec<Vec<&[f64]>> = cols.iter().map(|c| vec![c.as_slice()]).collect();
        let stats = fit_stats(&["a", "b", "c"], &parts).unwrap();
        let back = stats.denormalize(stats.normalize(m.view()).unwrap().view()).unwrap();
        let max_err = (&back - &m).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(max_err < 1e-9, "{max_err}");
    }

    #[test]
    fn feature_count_mismatch() {
        let stats = fit_stats(&["load"], &[vec![&[1.0, 2.0][..]]]).unwrap();
        let err = stats.normalize(Array2::zeros((3, 2)).view()).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch(_)));
    }
}
