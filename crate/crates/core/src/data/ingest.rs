use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::{
    BuildingRecord, BuildingType, LoadSeries, StaticFeatures, WeatherSeries, TIMESTAMP_FORMAT,
};
use crate::error::{Error, Result};

pub const TIMESERIES_HEADER: [&str; 5] =
    ["timestamp", "building_id", "load_kwh", "dry_bulb_temp_c", "wind_speed_ms"];
pub const STATIC_HEADER: [&str; 5] =
    ["building_id", "building_type", "floor_space_ft2", "wall_area_m2", "window_area_m2"];

#[derive(Debug, Deserialize)]
struct TimeseriesRow {
    timestamp: String,
    building_id: String,
    load_kwh: f64,
    dry_bulb_temp_c: f64,
    wind_speed_ms: f64,
}

#[derive(Debug, Deserialize)]
struct StaticRow {
    building_id: String,
    building_type: String,
    floor_space_ft2: f64,
    wall_area_m2: f64,
    window_area_m2: f64,
}

pub(crate) fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    for fmt in [TIMESTAMP_FORMAT, "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(ts);
        }
    }
    Err(Error::BadValue(format!("unparseable timestamp `{s}`")))
}

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str], what: &str) -> Result<()> {
    let headers = reader.headers()?;
    for col in expected {
        if !headers.iter().any(|h| h.trim() == *col) {
            return Err(Error::SchemaMismatch(format!("{what} CSV lacks column `{col}`")));
        }
    }
    Ok(())
}

struct Rows {
    timestamps: Vec<NaiveDateTime>,
    load: Vec<f64>,
    temp: Vec<f64>,
    wind: Vec<f64>,
}

fn assemble(
    grouped: BTreeMap<String, Vec<(NaiveDateTime, f64, f64, f64)>>,
    statics: &BTreeMap<String, StaticFeatures>,
) -> Result<Vec<BuildingRecord>> {
    let mut out = Vec::with_capacity(grouped.len());
    for (id, mut rows) in grouped {
        let static_features =
            statics.get(&id).cloned().ok_or_else(|| Error::MissingStaticFeatures(id.clone()))?;
        // Stable sort on the timestamp only; duplicates surface in validation.
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let mut cols = Rows { timestamps: vec![], load: vec![], temp: vec![], wind: vec![] };
        for (ts, l, t, w) in rows {
            cols.timestamps.push(ts);
            cols.load.push(l);
            cols.temp.push(t);
            cols.wind.push(w);
        }
        out.push(BuildingRecord::new(
            LoadSeries { building_id: id, timestamps: cols.timestamps, load: cols.load },
            WeatherSeries { dry_bulb_temp: cols.temp, wind_speed: cols.wind },
            static_features,
        )?);
    }
    Ok(out)
}

fn read_statics(reader: impl Read) -> Result<BTreeMap<String, StaticFeatures>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_header(&mut rdr, &STATIC_HEADER, "static")?;
    let mut statics = BTreeMap::new();
    for row in rdr.deserialize::<StaticRow>() {
        let row = row?;
        let features = StaticFeatures {
            floor_space: row.floor_space_ft2,
            wall_area: row.wall_area_m2,
            window_area: row.window_area_m2,
            building_type: row.building_type.parse()?,
        };
        if statics.insert(row.building_id.clone(), features).is_some() {
            return Err(Error::BadValue(format!("duplicate static row for building {}", row.building_id)));
        }
    }
    Ok(statics)
}

/// Reads the two CSV exports from arbitrary readers; see [`ingest`].
pub fn ingest_readers(timeseries: impl Read, statics: impl Read) -> Result<Vec<BuildingRecord>> {
    let statics = read_statics(statics)?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(timeseries);
    check_header(&mut rdr, &TIMESERIES_HEADER, "time-series")?;
    let mut grouped: BTreeMap<String, Vec<(NaiveDateTime, f64, f64, f64)>> = BTreeMap::new();
    for (line, row) in rdr.deserialize::<TimeseriesRow>().enumerate() {
        let row = row?;
        for (name, v) in [("load_kwh", row.load_kwh), ("dry_bulb_temp_c", row.dry_bulb_temp_c), ("wind_speed_ms", row.wind_speed_ms)] {
            if !v.is_finite() {
                return Err(Error::BadValue(format!("row {}: {name} is {v}", line + 2)));
            }
        }
        let ts = parse_timestamp(&row.timestamp)?;
        grouped.entry(row.building_id).or_default().push((ts, row.load_kwh, row.dry_bulb_temp_c, row.wind_speed_ms));
    }
    assemble(grouped, &statics)
}

/// Loads one [`BuildingRecord`] per building from the time-series and static
/// CSV exports. Rows may appear in any order; records come back sorted by
/// building id.
pub fn ingest(timeseries_file: impl AsRef<Path>, static_file: impl AsRef<Path>) -> Result<Vec<BuildingRecord>> {
    let static_file = static_file.as_ref();
    if !static_file.exists() {
        return Err(Error::MissingStaticFeatures(format!("all buildings ({} does not exist)", static_file.display())));
    }
    ingest_readers(File::open(timeseries_file)?, File::open(static_file)?)
}

pub fn write_timeseries_csv(records: &[BuildingRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TIMESERIES_HEADER)?;
    for r in records {
        for t in 0..r.len() {
            w.write_record([
                r.load.timestamps[t].format(TIMESTAMP_FORMAT).to_string(),
                r.building_id().to_string(),
                r.load.load[t].to_string(),
                r.weather.dry_bulb_temp[t].to_string(),
                r.weather.wind_speed[t].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_static_csv(records: &[BuildingRecord], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(STATIC_HEADER)?;
    for r in records {
        let s = &r.static_features;
        w.write_record([
            r.building_id().to_string(),
            s.building_type.to_string(),
            s.floor_space.to_string(),
            s.wall_area.to_string(),
            s.window_area.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Column mapping for the published Illinois building-load exports: one CSV
/// per building in a directory (file stem = building id) plus a metadata CSV
/// with one row per building.
///
/// The defaults follow ComStock's column naming; every name can be
/// overridden from the experiment config when a release renames columns.
/// The number of rows per building is read from the files, never assumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IllinoisLayout {
    pub metadata_file: String,
    pub id_column: String,
    pub timestamp_column: String,
    pub load_column: String,
    pub temp_column: String,
    pub wind_column: String,
    pub building_type_column: String,
    pub floor_space_column: String,
    pub wall_area_column: String,
    pub window_area_column: String,
}

impl Default for IllinoisLayout {
    fn default() -> Self {
        IllinoisLayout {
            metadata_file: "metadata.csv".into(),
            id_column: "bldg_id".into(),
            timestamp_column: "timestamp".into(),
            load_column: "out.electricity.total.energy_consumption".into(),
            temp_column: "Dry Bulb Temperature [°C]".into(),
            wind_column: "Wind Speed [m/s]".into(),
            building_type_column: "in.comstock_building_type".into(),
            floor_space_column: "in.sqft".into(),
            wall_area_column: "out.params.ext_wall_area..m2".into(),
            window_area_column: "out.params.ext_window_area..m2".into(),
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str, file: &Path) -> Result<usize> {
    headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
        Error::SchemaMismatch(format!("{} lacks column `{name}`", file.display()))
    })
}

fn field_f64(rec: &csv::StringRecord, idx: usize, what: &str) -> Result<f64> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse::<f64>().map_err(|_| Error::BadValue(format!("{what}: `{raw}` is not a number")))
}

impl IllinoisLayout {
    /// Reads every building CSV under `dir` and maps it onto
    /// [`BuildingRecord`]s.
    pub fn read_dir(&self, dir: impl AsRef<Path>) -> Result<Vec<BuildingRecord>> {
        let dir = dir.as_ref();
        let meta_path = dir.join(&self.metadata_file);
        let mut statics = BTreeMap::new();
        let mut rdr = csv::Reader::from_path(&meta_path)?;
        let headers = rdr.headers()?.clone();
        let id = column_index(&headers, &self.id_column, &meta_path)?;
        let ty = column_index(&headers, &self.building_type_column, &meta_path)?;
        let floor = column_index(&headers, &self.floor_space_column, &meta_path)?;
        let wall = column_index(&headers, &self.wall_area_column, &meta_path)?;
        let window = column_index(&headers, &self.window_area_column, &meta_path)?;
        for rec in rdr.records() {
            let rec = rec?;
            let bid = rec.get(id).unwrap_or("").trim().to_string();
            statics.insert(
                bid.clone(),
                StaticFeatures {
                    floor_space: field_f64(&rec, floor, &bid)?,
                    wall_area: field_f64(&rec, wall, &bid)?,
                    window_area: field_f64(&rec, window, &bid)?,
                    building_type: rec.get(ty).unwrap_or("").parse()?,
                },
            );
        }

        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.file_name() != Some(self.metadata_file.as_ref()))
            .collect();
        files.sort();
        let mut grouped = BTreeMap::new();
        for path in files {
            let bid = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let mut rdr = csv::Reader::from_path(&path)?;
            let headers = rdr.headers()?.clone();
            let ts = column_index(&headers, &self.timestamp_column, &path)?;
            let load = column_index(&headers, &self.load_column, &path)?;
            let temp = column_index(&headers, &self.temp_column, &path)?;
            let wind = column_index(&headers, &self.wind_column, &path)?;
            let mut rows = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                let stamp = parse_timestamp(rec.get(ts).unwrap_or(""))?;
                rows.push((
                    stamp,
                    field_f64(&rec, load, &bid)?,
                    field_f64(&rec, temp, &bid)?,
                    field_f64(&rec, wind, &bid)?,
                ));
            }
            grouped.insert(bid, rows);
        }
        assemble(grouped, &statics)
    }
}

/// Count of buildings per type, used by dataset manifests.
pub fn type_counts(records: &[BuildingRecord]) -> BTreeMap<BuildingType, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.building_type()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts_csv(buildings: &[&str], n: usize, skip: Option<usize>) -> String {
        let mut s = TIMESERIES_HEADER.join(",") + "\n";
        for b in buildings {
            for i in 0..n {
                if Some(i) == skip {
                    continue;
                }
                let minutes = 15 * i;
                s += &format!(
                    "2018-01-{:02}T{:02}:{:02}:00,{b},{},{},{}\n",
                    1 + minutes / 1440,
                    (minutes % 1440) / 60,
                    minutes % 60,
                    1.0 + i as f64,
                    -3.0,
                    4.5
                );
            }
        }
        s
    }

    fn static_csv(buildings: &[&str]) -> String {
        let mut s = STATIC_HEADER.join(",") + "\n";
        for b in buildings {
            s += &format!("{b},Warehouse,12000,800,90\n");
        }
        s
    }

    #[test]
    fn well_formed_input_yields_one_record_per_building() {
        let recs = ingest_readers(ts_csv(&["b1", "b2"], 96, None).as_bytes(), static_csv(&["b1", "b2"]).as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.len() == 96));
        assert_eq!(recs[0].time[95].interval_of_day, 95);
    }

    #[test]
    fn gap_is_malformed() {
        let err = ingest_readers(ts_csv(&["b1"], 96, Some(40)).as_bytes(), static_csv(&["b1"]).as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedSeries { .. }), "{err}");
    }

    #[test]
    fn duplicate_timestamp_is_malformed() {
        let mut csv = ts_csv(&["b1"], 10, None);
        csv += "2018-01-01T00:30:00,b1,1,1,1\n";
        let err = ingest_readers(csv.as_bytes(), static_csv(&["b1"]).as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MalformedSeries { .. }));
    }

    #[test]
    fn missing_static_row() {
        let err = ingest_readers(ts_csv(&["b1", "b2"], 8, None).as_bytes(), static_csv(&["b1"]).as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingStaticFeatures(ref b) if b == "b2"));
    }

    #[test]
    fn non_finite_value_rejected() {
        let mut csv = TIMESERIES_HEADER.join(",") + "\n";
        csv += "2018-01-01T00:00:00,b1,NaN,1,1\n";
        let err = ingest_readers(csv.as_bytes(), static_csv(&["b1"]).as_bytes()).unwrap_err();
        assert!(matches!(err, Error::BadValue(_)));
    }

    #[test]
    fn missing_column_is_schema_mismatch() {
        let csv = "timestamp,building_id,load_kwh\n2018-01-01T00:00:00,b1,1\n";
        let err = ingest_readers(csv.as_bytes(), static_csv(&["b1"]).as_bytes()).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch(_)));
    }

    #[test]
    fn write_then_ingest_round_trips() {
        let recs = ingest_readers(ts_csv(&["x", "y"], 20, None).as_bytes(), static_csv(&["x", "y"]).as_bytes()).unwrap();
        let (mut ts, mut st) = (Vec::new(), Vec::new());
        write_timeseries_csv(&recs, &mut ts).unwrap();
        write_static_csv(&recs, &mut st).unwrap();
        assert_eq!(ingest_readers(ts.as_slice(), st.as_slice()).unwrap(), recs);
    }

    #[test]
    fn illinois_layout_maps_columns() {
        let dir = tempfile::tempdir().unwrap();
        let layout = IllinoisLayout::default();
        let meta = format!(
            "{},{},{},{},{}\n17,warehouse,5000,400,50\n",
            layout.id_column, layout.building_type_column, layout.floor_space_column, layout.wall_area_column, layout.window_area_column
        );
        std::fs::write(dir.path().join("metadata.csv"), meta).unwrap();
        let mut body = format!(
            "{},{},\"{}\",\"{}\"\n",
            layout.timestamp_column, layout.load_column, layout.temp_column, layout.wind_column
        );
        for i in 0..8 {
            body += &format!("2018-01-01 {:02}:{:02}:00,{},{},{}\n", i / 4, (i % 4) * 15, 2.0, 1.0, 3.0);
        }
        std::fs::write(dir.path().join("17.csv"), body).unwrap();
        let recs = layout.read_dir(dir.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].len(), 8);
        assert_eq!(recs[0].building_id(), "17");
    }
}
