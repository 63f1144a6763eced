mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use loadbench::forecasts::ForecastUnits;
use loadbench::metrics::MetricSpace;

use crate::commands::CliError;
use crate::config::ExperimentConfig;

/// Building-load forecasting benchmark.
#[derive(Debug, Parser)]
#[command(name = "loadbench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Experiment config plus command-line overrides of its values.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Curated dataset directory.
    #[arg(long)]
    dataset_dir: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    lookback: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    arch: Option<String>,
    /// `reference` or `toy`.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Comma-separated, descending.
    #[arg(long, value_delimiter = ',')]
    lr_grid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    metric_space: Option<SpaceArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SpaceArg {
    Normalized,
    Physical,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum UnitsArg {
    Normalized,
    Physical,
}

impl ConfigArgs {
    pub fn resolve(&self) -> loadbench::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.dataset_dir {
            cfg.dataset.dir = Some(v.clone());
        }
        if let Some(v) = &self.output {
            cfg.output.dir = v.clone();
        }
        if let Some(v) = self.lookback {
            cfg.window.lookback = v;
        }
        if let Some(v) = self.horizon {
            cfg.window.horizon = v;
        }
        if let Some(v) = &self.arch {
            cfg.model.arch = v.clone();
        }
        if let Some(v) = &self.preset {
            cfg.model.preset = v.clone();
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = &self.lr_grid {
            cfg.train.lr_grid = v.clone();
        }
        if let Some(v) = self.metric_space {
            cfg.metrics.space = match v {
                SpaceArg::Normalized => MetricSpace::Normalized,
                SpaceArg::Physical => MetricSpace::Physical,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic building pool in the time-series/static CSV schemas.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 28)]
        buildings: usize,
        #[arg(long, default_value_t = 14)]
        types: usize,
        #[arg(long, default_value_t = 96 * 28)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw a heterogeneity-controlled subset from a pool.
    Curate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Destination directory; defaults to the dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlate candidate features with the load and pick the strongest.
    Correlate {
        #[arg(long)]
        timeseries: PathBuf,
        #[arg(long = "static")]
        static_file: PathBuf,
        /// Weather candidates; defaults to every non-load time-series column.
        #[arg(long, value_delimiter = ',')]
        weather: Option<Vec<String>>,
        /// Static candidates; defaults to every numeric static column.
        #[arg(long, value_delimiter = ',')]
        statics: Option<Vec<String>>,
        #[arg(long, default_value_t = 2)]
        k_weather: usize,
        #[arg(long, default_value_t = 3)]
        k_static: usize,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search the learning rate and save the best checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a checkpoint on the test split and append a metrics row.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a checkpoint's test forecasts as `window_index,step,prediction`.
    ExportForecasts {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an external forecast file on the test split and append a metrics row.
    EvalExternal {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        forecasts: PathBuf,
        /// Model name for the metrics row.
        #[arg(long)]
        name: String,
        #[arg(long, value_enum, default_value = "normalized")]
        units: UnitsArg,
    },
    /// Rank metric rows per (dataset, L, T) into CSV and markdown tables.
    Report {
        #[arg(long)]
        metrics: PathBuf,
        /// Defaults to the metrics file's directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Plot prediction against ground truth for one test building.
    Plot {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, conflicts_with = "forecasts")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        forecasts: Option<PathBuf>,
        #[arg(long)]
        building: usize,
        #[arg(long, default_value_t = 500)]
        first_k: usize,
        /// Horizon step to trace.
        #[arg(long, default_value_t = 0)]
        step: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { out, buildings, types, steps, seed } => commands::synth(&out, buildings, types, steps, seed),
        Command::Curate { cfg, out } => commands::curate(&cfg.resolve()?, out),
        Command::Correlate { timeseries, static_file, weather, statics, k_weather, k_static, out } => {
            commands::correlate(&timeseries, &static_file, weather, statics, k_weather, k_static, out)
        }
        Command::Train { cfg } => commands::train(&cfg.resolve()?),
        Command::Evaluate { cfg, checkpoint } => commands::evaluate(&cfg.resolve()?, checkpoint),
        Command::ExportForecasts { cfg, checkpoint, out } => commands::export_forecasts(&cfg.resolve()?, checkpoint, &out),
        Command::EvalExternal { cfg, forecasts, name, units } => {
            let units = match units {
                UnitsArg::Normalized => ForecastUnits::Normalized,
                UnitsArg::Physical => ForecastUnits::Physical,
            };
            commands::eval_external(&cfg.resolve()?, &forecasts, &name, units)
        }
        Command::Report { metrics, out_dir } => commands::report(&metrics, out_dir),
        Command::Plot { cfg, checkpoint, forecasts, building, first_k, step, out } => {
            commands::plot(&cfg.resolve()?, checkpoint, forecasts, building, first_k, step, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code())
        }
    }
}
