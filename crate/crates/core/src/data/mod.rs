//! Canonical data types for building-load series plus ingest, time-axis
//! splitting, z-normalization and sliding-window sample generation.

mod ingest;
mod normalize;
mod window;

pub use ingest::{
    ingest, ingest_readers, type_counts, write_static_csv, write_timeseries_csv, IllinoisLayout,
    STATIC_HEADER, TIMESERIES_HEADER,
};
pub use normalize::{fit_stats, FeatureStats, NormScope, NormStats, Normalizer};
pub use window::{
    windows, Batch, NormalizedSeries, PreparedDataset, Segment, SplitKind, WindowSample,
    WindowSet, WindowSpec,
};

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minutes between consecutive smart-meter readings.
pub const STEP_MINUTES: i64 = 15;
/// Number of 15-minute slots in a day.
pub const STEPS_PER_DAY: usize = 96;
pub const DAYS_PER_WEEK: usize = 7;

/// Names of the per-step continuous features, in storage order.
pub const DYNAMIC_FEATURES: [&str; 3] = ["load_kwh", "dry_bulb_temp_c", "wind_speed_ms"];
/// Names of the static building features, in storage order.
pub const STATIC_FEATURES: [&str; 3] = ["floor_space_ft2", "wall_area_m2", "window_area_m2"];

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// The fourteen commercial building types of the ComStock stock model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BuildingType {
    FullServiceRestaurant,
    Hospital,
    LargeHotel,
    LargeOffice,
    MediumOffice,
    Outpatient,
    PrimarySchool,
    QuickServiceRestaurant,
    RetailStandalone,
    RetailStripmall,
    SecondarySchool,
    SmallHotel,
    SmallOffice,
    Warehouse,
}

impl BuildingType {
    pub const ALL: [BuildingType; 14] = [
        BuildingType::FullServiceRestaurant,
        BuildingType::Hospital,
        BuildingType::LargeHotel,
        BuildingType::LargeOffice,
        BuildingType::MediumOffice,
        BuildingType::Outpatient,
        BuildingType::PrimarySchool,
        BuildingType::QuickServiceRestaurant,
        BuildingType::RetailStandalone,
        BuildingType::RetailStripmall,
        BuildingType::SecondarySchool,
        BuildingType::SmallHotel,
        BuildingType::SmallOffice,
        BuildingType::Warehouse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuildingType::FullServiceRestaurant => "FullServiceRestaurant",
            BuildingType::Hospital => "Hospital",
            BuildingType::LargeHotel => "LargeHotel",
            BuildingType::LargeOffice => "LargeOffice",
            BuildingType::MediumOffice => "MediumOffice",
            BuildingType::Outpatient => "Outpatient",
            BuildingType::PrimarySchool => "PrimarySchool",
            BuildingType::QuickServiceRestaurant => "QuickServiceRestaurant",
            BuildingType::RetailStandalone => "RetailStandalone",
            BuildingType::RetailStripmall => "RetailStripmall",
            BuildingType::SecondarySchool => "SecondarySchool",
            BuildingType::SmallHotel => "SmallHotel",
            BuildingType::SmallOffice => "SmallOffice",
            BuildingType::Warehouse => "Warehouse",
        }
    }
}

impl fmt::Display for BuildingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BuildingType {
    type Err = Error;

    /// Accepts the canonical CamelCase name as well as snake_case and
    /// space-separated spellings, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        BuildingType::ALL
            .into_iter()
            .find(|t| t.as_str().to_ascii_lowercase() == key)
            .ok_or_else(|| Error::BadValue(format!("unknown building type `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSeries {
    pub building_id: String,
    pub timestamps: Vec<NaiveDateTime>,
    /// Energy consumption per step, kWh.
    pub load: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherSeries {
    /// Dry-bulb temperature, °C.
    pub dry_bulb_temp: Vec<f64>,
    /// Wind speed, m/s.
    pub wind_speed: Vec<f64>,
}

/// Categorical calendar position of one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeIndices {
    /// Index of the 15-minute slot within the day, 0..=95.
    pub interval_of_day: u8,
    /// Monday = 0 .. Sunday = 6.
    pub day_of_week: u8,
}

impl TimeIndices {
    pub fn from_timestamp(ts: &NaiveDateTime) -> Self {
        let minutes = ts.hour() as usize * 60 + ts.minute() as usize;
        TimeIndices {
            interval_of_day: (minutes / STEP_MINUTES as usize) as u8,
            day_of_week: ts.weekday().num_days_from_monday() as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticFeatures {
    pub floor_space: f64,
    pub wall_area: f64,
    pub window_area: f64,
    pub building_type: BuildingType,
}

impl StaticFeatures {
    pub fn values(&self) -> [f64; 3] {
        [self.floor_space, self.wall_area, self.window_area]
    }

    fn validate(&self, building: &str) -> Result<()> {
        for (name, v) in STATIC_FEATURES.iter().zip(self.values()) {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::BadValue(format!(
                    "building {building}: {name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One building's aligned load, weather, calendar and static data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub load: LoadSeries,
    pub weather: WeatherSeries,
    pub time: Vec<TimeIndices>,
    pub static_features: StaticFeatures,
}

impl BuildingRecord {
    /// Builds a record, deriving calendar indices from the timestamps and
    /// checking every invariant (uniform spacing, equal lengths, finite
    /// non-negative loads, positive areas).
    pub fn new(load: LoadSeries, weather: WeatherSeries, static_features: StaticFeatures) -> Result<Self> {
        let time = load.timestamps.iter().map(TimeIndices::from_timestamp).collect();
        let record = BuildingRecord { load, weather, time, static_features };
        record.validate()?;
        Ok(record)
    }

    pub fn building_id(&self) -> &str {
        &self.load.building_id
    }

    pub fn building_type(&self) -> BuildingType {
        self.static_features.building_type
    }

    pub fn len(&self) -> usize {
        self.load.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let id = self.building_id();
        let n = self.load.timestamps.len();
        let malformed = |reason: String| Error::MalformedSeries { building: id.to_string(), reason };
        if self.load.load.len() != n
            || self.weather.dry_bulb_temp.len() != n
            || self.weather.wind_speed.len() != n
            || self.time.len() != n
        {
            return Err(malformed("series lengths differ".into()));
        }
        let step = TimeDelta::minutes(STEP_MINUTES);
        for (i, pair) in self.load.timestamps.windows(2).enumerate() {
            let delta = pair[1] - pair[0];
            if delta != step {
                let what = if delta == TimeDelta::zero() { "duplicate timestamp" } else { "non-uniform spacing" };
                return Err(malformed(format!("{what} between rows {i} and {} ({} -> {})", i + 1, pair[0], pair[1])));
            }
        }
        for (t, &v) in self.load.load.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::BadValue(format!("building {id}: load at step {t} is {v}")));
            }
        }
        for (name, series) in [("dry_bulb_temp", &self.weather.dry_bulb_temp), ("wind_speed", &self.weather.wind_speed)] {
            if let Some(t) = series.iter().position(|v| !v.is_finite()) {
                return Err(Error::BadValue(format!("building {id}: {name} at step {t} is {}", series[t])));
            }
        }
        for (ts, ti) in self.load.timestamps.iter().zip(&self.time) {
            if TimeIndices::from_timestamp(ts) != *ti {
                return Err(malformed(format!("time indices inconsistent with timestamp {ts}")));
            }
        }
        self.static_features.validate(id)
    }

    /// Contiguous sub-record over `range`.
    pub fn slice(&self, range: Range<usize>) -> BuildingRecord {
        BuildingRecord {
            load: LoadSeries {
                building_id: self.load.building_id.clone(),
                timestamps: self.load.timestamps[range.clone()].to_vec(),
                load: self.load.load[range.clone()].to_vec(),
            },
            weather: WeatherSeries {
                dry_bulb_temp: self.weather.dry_bulb_temp[range.clone()].to_vec(),
                wind_speed: self.weather.wind_speed[range.clone()].to_vec(),
            },
            time: self.time[range].to_vec(),
            static_features: self.static_features.clone(),
        }
    }

    /// Per-step continuous features in [`DYNAMIC_FEATURES`] order.
    pub fn dynamic_column(&self, feature: usize) -> &[f64] {
        match feature {
            0 => &self.load.load,
            1 => &self.weather.dry_bulb_temp,
            2 => &self.weather.wind_speed,
            _ => panic!("dynamic feature index {feature} out of range"),
        }
    }
}

/// Train/validation/test ratios along the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train_frac: 0.8, val_frac: 0.1, test_frac: 0.1 }
    }
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64) -> Result<Self> {
        let spec = SplitSpec { train_frac, val_frac, test_frac };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::BadValue(format!("split fractions must lie in (0, 1): {fracs:?}")));
        }
        if (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::BadValue(format!("split fractions must sum to 1: {fracs:?}")));
        }
        Ok(())
    }
}

/// Index ranges of the three chronological segments of one series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitBounds {
    pub fn lengths(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn get(&self, kind: SplitKind) -> Range<usize> {
        match kind {
            SplitKind::Train => self.train.clone(),
            SplitKind::Val => self.val.clone(),
            SplitKind::Test => self.test.clone(),
        }
    }
}

// Products such as 35060 * 0.8 land a few ulps below the exact integer.
fn floor_share(n: usize, frac: f64) -> usize {
    (n as f64 * frac + 1e-9).floor() as usize
}

/// Splits a series of length `n`: floor shares for train and validation,
/// the remainder to test.
pub fn split_len(n: usize, spec: &SplitSpec) -> Result<SplitBounds> {
    spec.validate()?;
    let train = floor_share(n, spec.train_frac);
    let val = floor_share(n, spec.val_frac);
    if train == 0 || val == 0 || train + val >= n {
        return Err(Error::InsufficientData(format!(
            "series of length {n} cannot be split {:.3}/{:.3}/{:.3} into non-empty segments",
            spec.train_frac, spec.val_frac, spec.test_frac
        )));
    }
    Ok(SplitBounds { train: 0..train, val: train..train + val, test: train + val..n })
}

pub fn split(record: &BuildingRecord, spec: &SplitSpec) -> Result<SplitBounds> {
    split_len(record.len(), spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    pub(crate) fn toy_record(id: &str, n: usize) -> BuildingRecord {
        let start = NaiveDate::from_ymd_opt(2018, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let timestamps: Vec<_> = (0..n).map(|i| start + TimeDelta::minutes(15 * i as i64)).collect();
        BuildingRecord::new(
            LoadSeries { building_id: id.into(), timestamps, load: (0..n).map(|i| 1.0 + (i % 7) as f64).collect() },
            WeatherSeries {
                dry_bulb_temp: (0..n).map(|i| (i as f64 * 0.1).sin()).collect(),
                wind_speed: (0..n).map(|i| 2.0 + (i as f64 * 0.05).cos()).collect(),
            },
            StaticFeatures { floor_space: 1000.0, wall_area: 300.0, window_area: 60.0, building_type: BuildingType::Warehouse },
        )
        .unwrap()
    }

    #[test]
    fn split_lengths_match_floor_arithmetic() {
        let spec = SplitSpec::default();
        assert_eq!(split_len(35_060, &spec).unwrap().lengths(), (28_048, 3_506, 3_506));
        assert_eq!(split_len(10, &spec).unwrap().lengths(), (8, 1, 1));
        let half = SplitSpec::new(0.5, 0.25, 0.25).unwrap();
        assert_eq!(split_len(100, &half).unwrap().lengths(), (50, 25, 25));
    }

    #[test]
    fn tiny_series_cannot_split() {
        assert!(matches!(split_len(5, &SplitSpec::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn split_spec_rejects_bad_fractions() {
        assert!(SplitSpec::new(0.8, 0.1, 0.2).is_err());
        assert!(SplitSpec::new(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn calendar_indices_follow_timestamp() {
        // 2018-01-01 was a Monday.
        let ts = NaiveDate::from_ymd_opt(2018, 1, 7).unwrap().and_hms_opt(23, 45, 0).unwrap();
        let ti = TimeIndices::from_timestamp(&ts);
        assert_eq!(ti, TimeIndices { interval_of_day: 95, day_of_week: 6 });
    }

    #[test]
    fn building_type_parsing_is_lenient() {
        assert_eq!("warehouse".parse::<BuildingType>().unwrap(), BuildingType::Warehouse);
        assert_eq!("retail_stripmall".parse::<BuildingType>().unwrap(), BuildingType::RetailStripmall);
        assert_eq!("Full Service Restaurant".parse::<BuildingType>().unwrap(), BuildingType::FullServiceRestaurant);
        assert!("Igloo".parse::<BuildingType>().is_err());
    }

    #[test]
    fn record_rejects_negative_load() {
        let mut r = toy_record("a", 20);
        r.load.load[3] = -1.0;
        assert!(matches!(r.validate(), Err(Error::BadValue(_))));
    }

    #[test]
    fn slice_preserves_alignment() {
        let r = toy_record("a", 50);
        let s = r.slice(10..20);
        assert_eq!(s.len(), 10);
        assert_eq!(s.load.timestamps[0], r.load.timestamps[10]);
        s.validate().unwrap();
    }
}
