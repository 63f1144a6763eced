use std::fs::{File, OpenOptions};
use std::io::{BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use loadbench::curation::{curate as curate_pool, heterogeneity_report, CorrelationReport, CuratedDataset, FeatureTable};
use loadbench::data::{self, split, write_static_csv, write_timeseries_csv, BuildingRecord, PreparedDataset, SplitKind};
use loadbench::forecasts::{self, ForecastUnits};
use loadbench::models::Checkpoint;
use loadbench::plot;
use loadbench::report::{self, MetricRow};
use loadbench::synth::{self, SynthSpec};
use loadbench::trainer::{self, grid_search};

use crate::config::ExperimentConfig;

pub const CHECKPOINT_FILE: &str = "checkpoint.lbck";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] loadbench::Error),
    #[error("run directory {0} is in use (lock file present; delete it if no other run is active)")]
    Locked(PathBuf),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Locked(_) => "RunLocked",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(loadbench::Error::ConfigError { .. }) => 2,
            CliError::Locked(_) => 3,
            CliError::Core(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Held while a command writes into a run directory.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(CliError::Locked(dir.to_path_buf())),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn write_pool(records: &[BuildingRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_timeseries_csv(records, BufWriter::new(File::create(dir.join("timeseries.csv"))?))?;
    write_static_csv(records, BufWriter::new(File::create(dir.join("static.csv"))?))?;
    Ok(())
}

pub fn synth(out: &Path, buildings: usize, types: usize, steps: usize, seed: u64) -> Result<()> {
    let spec = SynthSpec { n_buildings: buildings, n_types: types, n_steps: steps, seed, ..Default::default() };
    let records = synth::generate(&spec)?;
    write_pool(&records, out)?;
    log::info!("wrote {buildings} synthetic buildings x {steps} steps to {}", out.display());
    Ok(())
}

fn read_pool(cfg: &ExperimentConfig) -> Result<Vec<BuildingRecord>> {
    let ds = &cfg.dataset;
    if let Some(dir) = &ds.illinois_dir {
        return Ok(ds.illinois_layout.clone().unwrap_or_default().read_dir(dir)?);
    }
    match (&ds.timeseries, &ds.static_file) {
        (Some(ts), Some(st)) => Ok(data::ingest(ts, st)?),
        (None, _) => Err(config_missing("dataset.timeseries", "curate needs a pool (dataset.timeseries and dataset.static)")),
        (_, None) => Err(config_missing("dataset.static", "curate needs a pool (dataset.timeseries and dataset.static)")),
    }
}

fn config_missing(path: &str, message: &str) -> CliError {
    CliError::Core(loadbench::Error::ConfigError { path: path.into(), message: message.into() })
}

pub fn curate(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    let pool = read_pool(cfg)?;
    let spec = cfg.curation_spec()?;
    let dataset = curate_pool(&pool, &spec, cfg.curation.name.clone())?;
    let dir = out.unwrap_or_else(|| cfg.dataset_dir());
    let _lock = RunLock::acquire(&dir)?;
    dataset.write(&dir)?;
    println!("{}", heterogeneity_report(&dataset)?.to_card(&dataset.name));
    log::info!("curated {} of {} buildings into {}", dataset.buildings.len(), pool.len(), dir.display());
    Ok(())
}

pub fn correlate(
    timeseries: &Path,
    statics: &Path,
    weather: Option<Vec<String>>,
    static_names: Option<Vec<String>>,
    k_weather: usize,
    k_static: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    if !statics.exists() {
        return Err(loadbench::Error::MissingStaticFeatures(format!("all buildings ({} does not exist)", statics.display())).into());
    }
    let pool = FeatureTable::read_csv(timeseries, statics)?;
    let first = pool.first().ok_or_else(|| loadbench::Error::InsufficientData("no buildings in the pool".into()))?;
    let weather = weather.unwrap_or_else(|| first.dynamic.keys().cloned().collect());
    let static_names = static_names.unwrap_or_else(|| first.statics.keys().cloned().collect());
    let w: Vec<&str> = weather.iter().map(String::as_str).collect();
    let s: Vec<&str> = static_names.iter().map(String::as_str).collect();
    let report = CorrelationReport::compute(&pool, &w, &s)?;
    let (chosen_w, chosen_s) = report.select(k_weather, k_static)?;
    match out {
        Some(path) => std::fs::write(path, report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    log::info!("selected weather {chosen_w:?}, static {chosen_s:?}");
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<CuratedDataset> {
    let dir = cfg.dataset_dir();
    if !dir.join("manifest.json").exists() {
        return Err(config_missing("dataset.dir", &format!("{} holds no curated dataset (run `curate` first)", dir.display())));
    }
    let mut dataset = CuratedDataset::read(&dir)?;
    if let Some(name) = &cfg.dataset.name {
        dataset.name = name.clone();
    }
    Ok(dataset)
}

/// Windows the dataset, reusing the checkpoint's normalization statistics
/// when it carries them.
fn prepare(cfg: &ExperimentConfig, dataset: &CuratedDataset, ckpt: Option<&Checkpoint>) -> Result<PreparedDataset> {
    let window = cfg.window()?;
    match ckpt.and_then(|c| c.normalizer.clone()) {
        Some(norm) => {
            let bounds = dataset.buildings.iter().map(|r| split(r, &dataset.split)).collect::<loadbench::Result<Vec<_>>>()?;
            Ok(PreparedDataset::with_normalizer(&dataset.buildings, bounds, norm, window)?)
        }
        None => Ok(dataset.prepare(cfg.dataset.normalization, window)?),
    }
}

pub fn train(cfg: &ExperimentConfig) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let data = prepare(cfg, &dataset, None)?;
    let train_set = data.window_set(SplitKind::Train)?;
    let val_set = data.window_set(SplitKind::Val)?;
    let model_cfg = cfg.model_config()?;
    let out = &cfg.output.dir;
    let _lock = RunLock::acquire(out)?;
    log::info!(
        "training {} on {} ({} train / {} val windows, {} learning rates)",
        cfg.model.arch,
        dataset.name,
        train_set.len(),
        val_set.len(),
        cfg.train.lr_grid.len()
    );
    let grid = grid_search(&model_cfg, cfg.seed, &train_set, &val_set, &cfg.train_config())?;
    let mut ckpt = Checkpoint::new(grid.best.model.clone(), Some(data.normalizer.clone()));
    ckpt.meta.insert("lr".into(), grid.best_lr.into());
    ckpt.meta.insert("dataset".into(), dataset.name.clone().into());
    ckpt.save(out.join(CHECKPOINT_FILE))?;
    std::fs::write(out.join("grid.csv"), grid.to_csv())?;
    std::fs::write(out.join("train_log.jsonl"), grid.best.log.to_jsonl())?;
    println!(
        "best lr {} (val NMSE {:.6}, epoch {} of {})",
        grid.best_lr, grid.best.log.best_val_nmse, grid.best.log.best_epoch, grid.best.log.termination_epoch
    );
    Ok(())
}

fn load_checkpoint(cfg: &ExperimentConfig, path: Option<PathBuf>) -> Result<Checkpoint> {
    Ok(Checkpoint::load(path.unwrap_or_else(|| cfg.output.dir.join(CHECKPOINT_FILE)))?)
}

fn append_row(cfg: &ExperimentConfig, row: MetricRow) -> Result<()> {
    let _lock = RunLock::acquire(&cfg.output.dir)?;
    println!("{},{},{},{},{},{}", row.dataset, row.arch, row.lookback, row.horizon, row.nmse, row.nmae);
    report::append_metrics_file(cfg.output.dir.join(METRICS_FILE), &[row])?;
    Ok(())
}

pub fn evaluate(cfg: &ExperimentConfig, checkpoint: Option<PathBuf>) -> Result<()> {
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let dataset = load_dataset(cfg)?;
    let data = prepare(cfg, &dataset, Some(&ckpt))?;
    let test = data.window_set(SplitKind::Test)?;
    let scores = trainer::evaluate(&ckpt.model, &test, cfg.metrics.space, cfg.train.batch_size, cfg.train.precision)?;
    let w = ckpt.model.window;
    append_row(
        cfg,
        MetricRow {
            dataset: dataset.name,
            arch: ckpt.model.arch().display_name().into(),
            lookback: w.lookback,
            horizon: w.horizon,
            nmse: scores.nmse,
            nmae: scores.nmae,
            seed: ckpt.model.seed,
            lr: ckpt.meta.get("lr").and_then(|v| v.as_f64()),
        },
    )
}

pub fn export_forecasts(cfg: &ExperimentConfig, checkpoint: Option<PathBuf>, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(cfg, checkpoint)?;
    let dataset = load_dataset(cfg)?;
    let data = prepare(cfg, &dataset, Some(&ckpt))?;
    let test = data.window_set(SplitKind::Test)?;
    let pred = trainer::predict_set(&ckpt.model, &test, cfg.train.batch_size, cfg.train.precision)?;
    forecasts::write_forecasts_file(&pred, out)?;
    log::info!("wrote {} x {} forecasts to {}", pred.nrows(), pred.ncols(), out.display());
    Ok(())
}

pub fn eval_external(cfg: &ExperimentConfig, path: &Path, name: &str, units: ForecastUnits) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let data = prepare(cfg, &dataset, None)?;
    let test = data.window_set(SplitKind::Test)?;
    let scores = forecasts::eval_external(path, &test, units, cfg.metrics.space)?;
    append_row(
        cfg,
        MetricRow {
            dataset: dataset.name,
            arch: name.into(),
            lookback: cfg.window.lookback,
            horizon: cfg.window.horizon,
            nmse: scores.nmse,
            nmae: scores.nmae,
            seed: cfg.seed,
            lr: None,
        },
    )
}

pub fn report(metrics: &Path, out_dir: Option<PathBuf>) -> Result<()> {
    let rows = report::read_metrics_file(metrics)?;
    if rows.is_empty() {
        return Err(loadbench::Error::InsufficientData(format!("{} has no metric rows", metrics.display())).into());
    }
    let ranked = report::rank(&rows);
    let dir = out_dir.unwrap_or_else(|| metrics.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&dir)?;
    let md = report::report_markdown(&ranked);
    std::fs::write(dir.join("report.csv"), report::report_csv(&ranked))?;
    std::fs::write(dir.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

pub fn plot(
    cfg: &ExperimentConfig,
    checkpoint: Option<PathBuf>,
    forecast_file: Option<PathBuf>,
    building: usize,
    first_k: usize,
    step: usize,
    out: &Path,
) -> Result<()> {
    let dataset = load_dataset(cfg)?;
    let (pred, data, label) = match forecast_file {
        Some(path) => {
            let data = prepare(cfg, &dataset, None)?;
            let test = data.window_set(SplitKind::Test)?;
            let pred = forecasts::read_forecasts_file(&path, test.len(), test.spec().horizon)?;
            let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("forecast").to_string();
            (pred, data, label)
        }
        None => {
            let ckpt = load_checkpoint(cfg, checkpoint)?;
            let data = prepare(cfg, &dataset, Some(&ckpt))?;
            let test = data.window_set(SplitKind::Test)?;
            let pred = trainer::predict_set(&ckpt.model, &test, cfg.train.batch_size, cfg.train.precision)?;
            (pred, data, ckpt.model.arch().display_name().to_string())
        }
    };
    let test = data.window_set(SplitKind::Test)?;
    let trace = plot::trace(&pred, &test, building, first_k, step)?;
    let w = data.window;
    let title = format!(
        "{label}, {} building {} (L={}, T={}, step {})",
        dataset.name,
        trace.building_id,
        w.lookback,
        w.horizon,
        step + 1
    );
    plot::write_svg(&trace, &title, out)?;
    log::info!("wrote {} points to {}", trace.truth.len(), out.display());
    Ok(())
}
