use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use loadbench::curation::{CurationMode, CurationSpec};
use loadbench::data::{BuildingType, IllinoisLayout, NormScope, WindowSpec};
use loadbench::metrics::MetricSpace;
use loadbench::models::{Arch, ModelConfig};
use loadbench::trainer::TrainConfig;
use loadbench::{Error, Result};

/// Where the data comes from. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Name used in metric rows; defaults to the curated dataset's name.
    pub name: Option<String>,
    /// A curated dataset directory (`timeseries.csv`, `static.csv`,
    /// `manifest.json`). Defaults to `<output.dir>/dataset`.
    pub dir: Option<PathBuf>,
    /// Raw pool in the time-series schema, input to `curate`.
    pub timeseries: Option<PathBuf>,
    /// Raw pool static features, input to `curate`.
    #[serde(rename = "static")]
    pub static_file: Option<PathBuf>,
    /// Published per-building layout, used instead of the two CSVs.
    pub illinois_dir: Option<PathBuf>,
    pub illinois_layout: Option<IllinoisLayout>,
    pub normalization: NormScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurationSection {
    pub name: String,
    pub target_count: usize,
    /// `heterogeneous` or `homogeneous`.
    pub mode: String,
    /// Building type for homogeneous curation.
    pub building_type: Option<String>,
}

impl Default for CurationSection {
    fn default() -> Self {
        CurationSection { name: "curated".into(), target_count: 592, mode: "heterogeneous".into(), building_type: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSection {
    pub lookback: usize,
    pub horizon: usize,
}

impl Default for WindowSection {
    fn default() -> Self {
        WindowSection { lookback: 512, horizon: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: String,
    /// `reference` or `toy`.
    pub preset: String,
    /// Hyperparameter overrides on top of the preset.
    pub hp: Option<toml::Table>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { arch: "lstm".into(), preset: "reference".into(), hp: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub space: MetricSpace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs/default") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds model initialization, shuffling and dropout.
    pub seed: u64,
    pub dataset: DatasetSection,
    pub curation: CurationSection,
    pub window: WindowSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub metrics: MetricsSection,
    pub output: OutputSection,
}

fn config_error(path: &str, message: impl Into<String>) -> Error {
    Error::ConfigError { path: path.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_error("", e.to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(if path == "." { "" } else { &path }, e.into_inner().message().trim())
        })
    }

    /// Reads `path` and resolves its relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error("", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.dataset.dir, &mut cfg.dataset.timeseries, &mut cfg.dataset.static_file, &mut cfg.dataset.illinois_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        fix(&mut cfg.output.dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window.lookback == 0 {
            return Err(config_error("window.lookback", "must be >= 1"));
        }
        if self.window.horizon == 0 {
            return Err(config_error("window.horizon", "must be >= 1"));
        }
        self.train.validate().map_err(|e| config_error("train", e.to_string()))?;
        self.arch()?;
        self.curation_spec()?;
        Ok(())
    }

    pub fn window(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.window.lookback, self.window.horizon).map_err(|e| config_error("window", e.to_string()))
    }

    pub fn arch(&self) -> Result<Arch> {
        self.model.arch.parse().map_err(|e: Error| config_error("model.arch", e.to_string()))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let arch = self.arch()?;
        let base = match self.model.preset.as_str() {
            "reference" => ModelConfig::default_for(arch),
            "toy" => ModelConfig::toy(arch),
            other => return Err(config_error("model.preset", format!("unknown preset `{other}` (reference, toy)"))),
        };
        let Some(hp) = &self.model.hp else { return Ok(base) };
        let mut merged = serde_json::to_value(&base)?;
        let overrides = serde_json::to_value(hp)?;
        if let (Some(m), Some(o)) = (merged.as_object_mut(), overrides.as_object()) {
            for (k, v) in o {
                m.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(merged).map_err(|e| config_error("model.hp", e.to_string()))
    }

    pub fn curation_spec(&self) -> Result<CurationSpec> {
        let mode = match self.curation.mode.as_str() {
            "heterogeneous" => CurationMode::Heterogeneous,
            "homogeneous" => {
                let ty = self
                    .curation
                    .building_type
                    .as_deref()
                    .ok_or_else(|| config_error("curation.building_type", "homogeneous curation needs a building type"))?;
                let ty: BuildingType = ty.parse().map_err(|e: Error| config_error("curation.building_type", e.to_string()))?;
                CurationMode::Homogeneous(ty)
            }
            other => return Err(config_error("curation.mode", format!("unknown mode `{other}` (heterogeneous, homogeneous)"))),
        };
        Ok(CurationSpec { target_count: self.curation.target_count, mode, random_seed: self.seed })
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset.dir.clone().unwrap_or_else(|| self.output.dir.join("dataset"))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let cfg = ExperimentConfig::parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.window().unwrap(), WindowSpec::new(512, 4).unwrap());
        assert_eq!(cfg.train.max_epochs, 20);
    }

    #[test]
    fn errors_name_the_field() {
        let err = ExperimentConfig::parse("[train]\nmax_epochs = \"many\"\n").unwrap_err();
        assert!(matches!(err, Error::ConfigError { ref path, .. } if path == "train.max_epochs"), "{err}");
        let err = ExperimentConfig::parse("[window]\nlookbak = 3\n").unwrap_err();
        assert!(matches!(err, Error::ConfigError { ref path, .. } if path.starts_with("window")), "{err}");
        let cfg = ExperimentConfig::parse("[model]\narch = \"resnet\"\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::ConfigError { ref path, .. }) if path == "model.arch"));
    }

    #[test]
    fn hyperparameter_overrides_merge_into_preset() {
        let cfg = ExperimentConfig::parse("[model]\narch = \"lstm\"\npreset = \"toy\"\nhp = { hidden = 5 }\n").unwrap();
        let ModelConfig::Lstm(c) = cfg.model_config().unwrap() else { panic!() };
        assert_eq!(c.hidden, 5);
        let bad = ExperimentConfig::parse("[model]\narch = \"lstm\"\nhp = { hidden = \"x\" }\n").unwrap();
        assert!(matches!(bad.model_config(), Err(Error::ConfigError { ref path, .. }) if path == "model.hp"));
    }

    #[test]
    fn homogeneous_needs_a_type() {
        let cfg = ExperimentConfig::parse("[curation]\nmode = \"homogeneous\"\n").unwrap();
        assert!(matches!(cfg.curation_spec(), Err(Error::ConfigError { ref path, .. }) if path == "curation.building_type"));
        let cfg = ExperimentConfig::parse("[curation]\nmode = \"homogeneous\"\nbuilding_type = \"Warehouse\"\n").unwrap();
        assert!(matches!(cfg.curation_spec().unwrap().mode, CurationMode::Homogeneous(BuildingType::Warehouse)));
    }
}
