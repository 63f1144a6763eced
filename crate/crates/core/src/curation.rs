//! Heterogeneity-controlled subsets, correlation-based feature screening and
//! dataset statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    self, write_static_csv, write_timeseries_csv, BuildingRecord, BuildingType, FeatureStats, NormScope,
    PreparedDataset, SplitSpec, WindowSpec, DYNAMIC_FEATURES, STATIC_FEATURES,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "building_type", rename_all = "snake_case")]
pub enum CurationMode {
    /// Match the pool's building-type distribution.
    Heterogeneous,
    /// Only buildings of one type.
    Homogeneous(BuildingType),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationSpec {
    pub target_count: usize,
    pub mode: CurationMode,
    pub random_seed: u64,
}

impl Default for CurationSpec {
    fn default() -> Self {
        CurationSpec { target_count: 592, mode: CurationMode::Heterogeneous, random_seed: 0 }
    }
}

/// A named building collection plus how it was made and how it splits.
#[derive(Debug, Clone, PartialEq)]
pub struct CuratedDataset {
    pub name: String,
    pub spec: Option<CurationSpec>,
    pub split: SplitSpec,
    pub buildings: Vec<BuildingRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub building_ids: Vec<String>,
    pub seed: Option<u64>,
    pub spec: Option<CurationSpec>,
    pub split: SplitSpec,
    pub type_counts: BTreeMap<BuildingType, usize>,
    /// Window enumeration used by forecast exports: building-major, time-minor.
    pub window_order: String,
}

impl CuratedDataset {
    pub fn new(name: impl Into<String>, buildings: Vec<BuildingRecord>) -> Self {
        CuratedDataset { name: name.into(), spec: None, split: SplitSpec::default(), buildings }
    }

    pub fn prepare(&self, scope: NormScope, window: WindowSpec) -> Result<PreparedDataset> {
        PreparedDataset::new(&self.buildings, &self.split, scope, window)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            name: self.name.clone(),
            building_ids: self.buildings.iter().map(|b| b.building_id().to_string()).collect(),
            seed: self.spec.as_ref().map(|s| s.random_seed),
            spec: self.spec.clone(),
            split: self.split,
            type_counts: data::type_counts(&self.buildings),
            window_order: "building-major, time-minor (buildings in manifest order)".into(),
        }
    }

    /// Writes `timeseries.csv`, `static.csv`, `manifest.json` and `card.txt`
    /// into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_timeseries_csv(&self.buildings, BufWriter::new(File::create(dir.join("timeseries.csv"))?))?;
        write_static_csv(&self.buildings, BufWriter::new(File::create(dir.join("static.csv"))?))?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        std::fs::write(dir.join("manifest.json"), manifest + "\n")?;
        std::fs::write(dir.join("card.txt"), heterogeneity_report(self)?.to_card(&self.name))?;
        Ok(())
    }

    /// Reads a directory written by [`CuratedDataset::write`].
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut by_id: BTreeMap<String, BuildingRecord> = data::ingest(dir.join("timeseries.csv"), dir.join("static.csv"))?
            .into_iter()
            .map(|r| (r.building_id().to_string(), r))
            .collect();
        let buildings = manifest
            .building_ids
            .iter()
            .map(|id| by_id.remove(id).ok_or_else(|| Error::SchemaMismatch(format!("manifest lists missing building {id}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(CuratedDataset { name: manifest.name, spec: manifest.spec, split: manifest.split, buildings })
    }
}

/// Largest-remainder apportionment of `target` seats over groups of the
/// given sizes. Leftover seats go to the largest fractional remainders,
/// earlier groups first on ties.
pub fn largest_remainder(counts: &[usize], target: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    // Exact integer arithmetic: share_k = target * c_k / total.
    let mut alloc: Vec<usize> = counts.iter().map(|&c| target * c / total).collect();
    let mut remainders: Vec<(usize, usize)> =
        counts.iter().enumerate().map(|(k, &c)| ((target * c) % total, k)).collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let leftover = target - alloc.iter().sum::<usize>();
    for &(_, k) in remainders.iter().take(leftover) {
        alloc[k] += 1;
    }
    alloc
}

fn seeded_pick<'a>(mut group: Vec<&'a BuildingRecord>, n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a BuildingRecord> {
    group.sort_by(|a, b| a.building_id().cmp(b.building_id()));
    group.shuffle(rng);
    group.truncate(n);
    group
}

/// Draws a subset of `pool` according to `spec`. The result is sorted by
/// building id and depends only on the pool contents and `spec`.
pub fn curate(pool: &[BuildingRecord], spec: &CurationSpec, name: impl Into<String>) -> Result<CuratedDataset> {
    if spec.target_count == 0 {
        return Err(Error::BadValue("target_count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.random_seed);
    let mut by_type: BTreeMap<BuildingType, Vec<&BuildingRecord>> = BTreeMap::new();
    for r in pool {
        by_type.entry(r.building_type()).or_default().push(r);
    }
    let mut chosen: Vec<&BuildingRecord> = match spec.mode {
        CurationMode::Heterogeneous => {
            if pool.len() < spec.target_count {
                return Err(Error::PoolTooSmall(format!("pool has {} buildings, need {}", pool.len(), spec.target_count)));
            }
            let counts: Vec<usize> = by_type.values().map(|g| g.len()).collect();
            let alloc = largest_remainder(&counts, spec.target_count);
            by_type.into_values().zip(alloc).flat_map(|(group, n)| seeded_pick(group, n, &mut rng)).collect()
        }
        CurationMode::Homogeneous(ty) => {
            let group = by_type.remove(&ty).unwrap_or_default();
            if group.len() < spec.target_count {
                return Err(Error::PoolTooSmall(format!(
                    "pool has {} buildings of type {ty}, need {}",
                    group.len(),
                    spec.target_count
                )));
            }
            seeded_pick(group, spec.target_count, &mut rng)
        }
    };
    chosen.sort_by(|a, b| a.building_id().cmp(b.building_id()));
    Ok(CuratedDataset {
        name: name.into(),
        spec: Some(spec.clone()),
        split: SplitSpec::default(),
        buildings: chosen.into_iter().cloned().collect(),
    })
}

/// Five-number summary of a type's load values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadSpread {
    pub buildings: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub per_type: BTreeMap<BuildingType, LoadSpread>,
    pub pooled_mean: f64,
    pub pooled_std: f64,
    pub total_observations: usize,
}

/// Quantile with linear interpolation between order statistics, on sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn heterogeneity_report(dataset: &CuratedDataset) -> Result<HeterogeneityReport> {
    let b = &dataset.buildings;
    if b.is_empty() || b.iter().all(|r| r.is_empty()) {
        return Err(Error::InsufficientData("heterogeneity report of an empty dataset".into()));
    }
    let pooled = FeatureStats::from_parts(b.iter().map(|r| r.load.load.as_slice())).expect("non-empty");
    let mut per_type = BTreeMap::new();
    let mut groups: BTreeMap<BuildingType, Vec<&BuildingRecord>> = BTreeMap::new();
    for r in b {
        groups.entry(r.building_type()).or_default().push(r);
    }
    for (ty, recs) in groups {
        let mut vals: Vec<f64> = recs.iter().flat_map(|r| r.load.load.iter().copied()).collect();
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(f64::total_cmp);
        per_type.insert(
            ty,
            LoadSpread {
                buildings: recs.len(),
                min: vals[0],
                q1: quantile_sorted(&vals, 0.25),
                median: quantile_sorted(&vals, 0.5),
                q3: quantile_sorted(&vals, 0.75),
                max: vals[vals.len() - 1],
            },
        );
    }
    Ok(HeterogeneityReport {
        per_type,
        pooled_mean: pooled.mean,
        pooled_std: pooled.std,
        total_observations: b.iter().map(|r| r.len()).sum(),
    })
}

impl HeterogeneityReport {
    /// Plain-text dataset card followed by a CSV block of per-type spreads.
    pub fn to_card(&self, name: &str) -> String {
        let mut s = String::new();
        let buildings: usize = self.per_type.values().map(|t| t.buildings).sum();
        let _ = writeln!(s, "dataset: {name}");
        let _ = writeln!(s, "buildings: {buildings}");
        let _ = writeln!(s, "total load observations: {}", self.total_observations);
        let _ = writeln!(s, "load mean: {:.4}", self.pooled_mean);
        let _ = writeln!(s, "load std: {:.4}", self.pooled_std);
        let _ = writeln!(s);
        let _ = writeln!(s, "building_type,buildings,min,q1,median,q3,max");
        for (ty, t) in &self.per_type {
            let _ = writeln!(s, "{ty},{},{:.4},{:.4},{:.4},{:.4},{:.4}", t.buildings, t.min, t.q1, t.median, t.q3, t.max);
        }
        s
    }
}

/// Population Pearson correlation (two-pass). `None` when either input has
/// zero variance or fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson inputs differ in length");
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Per-building candidate features for correlation screening.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub building_id: String,
    pub load: Vec<f64>,
    pub dynamic: BTreeMap<String, Vec<f64>>,
    pub statics: BTreeMap<String, f64>,
}

impl From<&BuildingRecord> for FeatureTable {
    fn from(r: &BuildingRecord) -> Self {
        let mut dynamic = BTreeMap::new();
        dynamic.insert(DYNAMIC_FEATURES[0].to_string(), r.load.load.clone());
        dynamic.insert(DYNAMIC_FEATURES[1].to_string(), r.weather.dry_bulb_temp.clone());
        dynamic.insert(DYNAMIC_FEATURES[2].to_string(), r.weather.wind_speed.clone());
        let statics = STATIC_FEATURES.iter().map(|s| s.to_string()).zip(r.static_features.values()).collect();
        FeatureTable { building_id: r.building_id().to_string(), load: r.load.load.clone(), dynamic, statics }
    }
}

impl FeatureTable {
    /// Reads wide CSVs with arbitrary numeric candidate columns:
    /// `timestamp,building_id,load_kwh,<weather...>` and `building_id,<static...>`.
    /// Non-numeric static columns (such as the building type) are skipped.
    pub fn read_csv(timeseries: impl AsRef<Path>, statics: impl AsRef<Path>) -> Result<Vec<FeatureTable>> {
        let mut tables: BTreeMap<String, FeatureTable> = BTreeMap::new();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(timeseries.as_ref())?;
        let headers = rdr.headers()?.clone();
        let pos = |name: &str| headers.iter().position(|h| h == name);
        let (id_col, load_col) = match (pos("building_id"), pos("load_kwh")) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(Error::SchemaMismatch("time-series CSV needs building_id and load_kwh columns".into())),
        };
        let ts_col = pos("timestamp");
        let candidates: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != id_col && *i != load_col && Some(*i) != ts_col)
            .map(|(i, h)| (i, h.to_string()))
            .collect();
        let mut rows: BTreeMap<String, Vec<(String, Vec<f64>)>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            let id = rec[id_col].to_string();
            let stamp = ts_col.map(|c| rec[c].to_string()).unwrap_or_default();
            let mut vals = vec![parse_num(&rec[load_col])?];
            for (i, _) in &candidates {
                vals.push(parse_num(&rec[*i])?);
            }
            rows.entry(id).or_default().push((stamp, vals));
        }
        for (id, mut rs) in rows {
            rs.sort_by(|a, b| a.0.cmp(&b.0));
            let mut table = FeatureTable { building_id: id.clone(), load: vec![], dynamic: BTreeMap::new(), statics: BTreeMap::new() };
            table.load = rs.iter().map(|r| r.1[0]).collect();
            for (k, (_, name)) in candidates.iter().enumerate() {
                table.dynamic.insert(name.clone(), rs.iter().map(|r| r.1[k + 1]).collect());
            }
            tables.insert(id, table);
        }

        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(statics.as_ref())?;
        let headers = rdr.headers()?.clone();
        let id_col = headers
            .iter()
            .position(|h| h == "building_id")
            .ok_or_else(|| Error::SchemaMismatch("static CSV needs a building_id column".into()))?;
        for rec in rdr.records() {
            let rec = rec?;
            let table = tables
                .get_mut(&rec[id_col])
                .ok_or_else(|| Error::SchemaMismatch(format!("static row for unknown building {}", &rec[id_col])))?;
            for (i, h) in headers.iter().enumerate() {
                if i == id_col {
                    continue;
                }
                if let Ok(v) = rec[i].parse::<f64>() {
                    table.statics.insert(h.to_string(), v);
                }
            }
        }
        if let Some(t) = tables.values().find(|t| t.statics.is_empty()) {
            return Err(Error::MissingStaticFeatures(t.building_id.clone()));
        }
        Ok(tables.into_values().collect())
    }
}

fn parse_num(s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::BadValue(format!("`{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::BadValue(format!("non-finite value `{s}`")));
    }
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub feature: String,
    pub coefficient: f64,
    /// Buildings that contributed (weather) or pairs used (static).
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub weather: Vec<FeatureCorrelation>,
    pub statics: Vec<FeatureCorrelation>,
}

/// Average over buildings of the per-building Pearson coefficient between
/// each candidate weather series and the load. Buildings where the feature
/// or the load has zero variance are skipped with a warning.
pub fn weather_correlations(pool: &[FeatureTable], candidates: &[&str]) -> Result<Vec<FeatureCorrelation>> {
    let mut out = Vec::with_capacity(candidates.len());
    for &name in candidates {
        let mut sum = 0.0;
        let mut used = 0;
        for t in pool {
            let series = t
                .dynamic
                .get(name)
                .ok_or_else(|| Error::SchemaMismatch(format!("building {} lacks feature `{name}`", t.building_id)))?;
            if t.load.len() < 2 || series.len() != t.load.len() {
                return Err(Error::InsufficientData(format!("building {}: need >= 2 aligned observations", t.building_id)));
            }
            match pearson(series, &t.load) {
                Some(r) => {
                    sum += r;
                    used += 1;
                }
                None => log::warn!("building {}: zero variance in `{name}` or load; excluded", t.building_id),
            }
        }
        if used == 0 {
            return Err(Error::UndefinedCorrelation(name.to_string()));
        }
        out.push(FeatureCorrelation { feature: name.to_string(), coefficient: sum / used as f64, support: used });
    }
    Ok(out)
}

/// Pearson coefficient across buildings between the time-averaged load and
/// each static feature.
pub fn static_correlations(pool: &[FeatureTable], candidates: &[&str]) -> Result<Vec<FeatureCorrelation>> {
    if pool.len() < 3 {
        return Err(Error::InsufficientData(format!("static correlation needs >= 3 buildings, got {}", pool.len())));
    }
    let avg: Vec<f64> = pool
        .iter()
        .map(|t| {
            if t.load.is_empty() {
                Err(Error::InsufficientData(format!("building {} has no load", t.building_id)))
            } else {
                Ok(t.load.iter().sum::<f64>() / t.load.len() as f64)
            }
        })
        .collect::<Result<_>>()?;
    candidates
        .iter()
        .map(|&name| {
            let vals: Vec<f64> = pool
                .iter()
                .map(|t| {
                    t.statics
                        .get(name)
                        .copied()
                        .ok_or_else(|| Error::SchemaMismatch(format!("building {} lacks static `{name}`", t.building_id)))
                })
                .collect::<Result<_>>()?;
            let r = pearson(&avg, &vals).ok_or_else(|| Error::UndefinedCorrelation(name.to_string()))?;
            Ok(FeatureCorrelation { feature: name.to_string(), coefficient: r, support: pool.len() })
        })
        .collect()
}

/// Top `k` features by signed coefficient, descending; ties by name.
pub fn select_top(entries: &[FeatureCorrelation], k: usize) -> Result<Vec<String>> {
    if k > entries.len() {
        return Err(Error::SelectionOverflow { requested: k, available: entries.len() });
    }
    let mut sorted: Vec<&FeatureCorrelation> = entries.iter().collect();
    sorted.sort_by(|a, b| b.coefficient.total_cmp(&a.coefficient).then_with(|| a.feature.cmp(&b.feature)));
    Ok(sorted.into_iter().take(k).map(|c| c.feature.clone()).collect())
}

impl CorrelationReport {
    pub fn compute(pool: &[FeatureTable], weather: &[&str], statics: &[&str]) -> Result<Self> {
        Ok(CorrelationReport {
            weather: weather_correlations(pool, weather)?,
            statics: static_correlations(pool, statics)?,
        })
    }

    /// Selected weather and static features.
    pub fn select(&self, k_weather: usize, k_static: usize) -> Result<(Vec<String>, Vec<String>)> {
        Ok((select_top(&self.weather, k_weather)?, select_top(&self.statics, k_static)?))
    }

    /// CSV with one row per feature: `kind,feature,coefficient,support`,
    /// each block sorted by descending coefficient.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,feature,coefficient,support\n");
        for (kind, block) in [("weather", &self.weather), ("static", &self.statics)] {
            let mut rows: Vec<&FeatureCorrelation> = block.iter().collect();
            rows.sort_by(|a, b| b.coefficient.total_cmp(&a.coefficient).then_with(|| a.feature.cmp(&b.feature)));
            for r in rows {
                let _ = writeln!(s, "{kind},{},{:.4},{}", r.feature, r.coefficient, r.support);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};
    use proptest::prelude::*;

    fn fc(name: &str, r: f64) -> FeatureCorrelation {
        FeatureCorrelation { feature: name.into(), coefficient: r, support: 42 }
    }

    #[test]
    fn equal_pools_split_592_into_42_or_43() {
        let alloc = largest_remainder(&[40; 14], 592);
        assert_eq!(alloc.iter().sum::<usize>(), 592);
        assert!(alloc.iter().all(|&a| a == 42 || a == 43));
        assert_eq!(alloc.iter().filter(|&&a| a == 43).count(), 4);
    }

    proptest! {
        #[test]
        fn apportionment_is_exact_and_close(counts in prop::collection::vec(0usize..200, 1..14), frac in 0.0f64..1.0) {
            let total: usize = counts.iter().sum();
            prop_assume!(total > 0);
            let target = ((total as f64) * frac).round() as usize;
            let alloc = largest_remainder(&counts, target);
            prop_assert_eq!(alloc.iter().sum::<usize>(), target);
            for (a, c) in alloc.iter().zip(&counts) {
                let exact = target as f64 * *c as f64 / total as f64;
                prop_assert!((*a as f64 - exact).abs() < 1.0);
                prop_assert!(a <= c);
            }
        }

        #[test]
        fn pearson_matches_definition(xs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..60), a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let x: Vec<f64> = xs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = xs.iter().map(|p| p.1).collect();
            if let Some(r) = pearson(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let y2: Vec<f64> = y.iter().map(|v| a * v + b).collect();
                let r2 = pearson(&x, &y2).unwrap();
                prop_assert!((r - r2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pearson_self_and_negation() {
        let x = [1.0, 3.0, 2.0, 7.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 5]).is_none());
    }

    #[test]
    fn selection_uses_signed_coefficients() {
        let weather = [
            fc("Dry Bulb Temperature", 0.2507),
            fc("Wind Speed", 0.1396),
            fc("Wind Direction", 0.0787),
            fc("Relative Humidity", -0.2794),
        ];
        assert_eq!(select_top(&weather, 2).unwrap(), ["Dry Bulb Temperature", "Wind Speed"]);
        assert!(select_top(&weather, 0).unwrap().is_empty());
        assert!(matches!(select_top(&weather, 5), Err(Error::SelectionOverflow { .. })));
    }

    #[test]
    fn ties_break_by_name() {
        let e = [fc("b", 0.5), fc("a", 0.5), fc("c", 0.9)];
        assert_eq!(select_top(&e, 3).unwrap(), ["c", "a", "b"]);
    }

    fn pool() -> Vec<BuildingRecord> {
        generate(&SynthSpec { n_buildings: 28, n_types: 14, n_steps: 96, ..SynthSpec::default() }).unwrap()
    }

    #[test]
    fn heterogeneous_curation_matches_distribution() {
        let pool = pool();
        let ds = curate(&pool, &CurationSpec { target_count: 14, mode: CurationMode::Heterogeneous, random_seed: 1 }, "het").unwrap();
        assert_eq!(ds.buildings.len(), 14);
        let types: std::collections::BTreeSet<_> = ds.buildings.iter().map(|b| b.building_type()).collect();
        assert_eq!(types.len(), 14);
    }

    #[test]
    fn homogeneous_takes_all_of_type() {
        let pool = pool();
        let spec = CurationSpec { target_count: 2, mode: CurationMode::Homogeneous(BuildingType::Warehouse), random_seed: 9 };
        let ds = curate(&pool, &spec, "hom").unwrap();
        let all: Vec<_> = pool.iter().filter(|b| b.building_type() == BuildingType::Warehouse).map(|b| b.building_id()).collect();
        assert_eq!(ds.buildings.iter().map(|b| b.building_id()).collect::<Vec<_>>(), all);
        let too_many = CurationSpec { target_count: 3, ..spec };
        assert!(matches!(curate(&pool, &too_many, "x"), Err(Error::PoolTooSmall(_))));
    }

    #[test]
    fn curation_is_deterministic() {
        let pool = pool();
        let spec = CurationSpec { target_count: 10, mode: CurationMode::Heterogeneous, random_seed: 5 };
        assert_eq!(curate(&pool, &spec, "a").unwrap(), curate(&pool, &spec, "a").unwrap());
    }

    #[test]
    fn constant_building_report() {
        let spec = SynthSpec {
            n_buildings: 1,
            n_types: 1,
            n_steps: 50,
            daily_amplitude: 0.0,
            weekly_amplitude: 0.0,
            weather_coupling: 0.0,
            noise_std: 0.0,
            ..SynthSpec::default()
        };
        let rep = heterogeneity_report(&CuratedDataset::new("c", generate(&spec).unwrap())).unwrap();
        assert_eq!(rep.pooled_std, 0.0);
        let t = rep.per_type.values().next().unwrap();
        assert!(t.min == t.q1 && t.q1 == t.median && t.median == t.q3 && t.q3 == t.max);
        assert_eq!(rep.total_observations, 50);
    }

    #[test]
    fn load_against_itself_is_one() {
        let tables: Vec<FeatureTable> = pool().iter().map(FeatureTable::from).collect();
        let r = weather_correlations(&tables, &["load_kwh"]).unwrap();
        assert!((r[0].coefficient - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_static_is_undefined() {
        let mut tables: Vec<FeatureTable> = pool().iter().map(FeatureTable::from).collect();
        for t in &mut tables {
            t.statics.insert("same".into(), 3.0);
        }
        assert!(matches!(static_correlations(&tables, &["same"]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pool = pool();
        let ds = curate(&pool, &CurationSpec { target_count: 5, mode: CurationMode::Heterogeneous, random_seed: 2 }, "rt").unwrap();
        ds.write(dir.path()).unwrap();
        let back = CuratedDataset::read(dir.path()).unwrap();
        assert_eq!(back.manifest(), ds.manifest());
        assert_eq!(back.buildings.len(), 5);
        assert!(std::fs::read_to_string(dir.path().join("card.txt")).unwrap().contains("load std"));
    }
}
