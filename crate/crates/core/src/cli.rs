//! Command-line interface.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::cpf::WeightedEcdf;
use crate::data::load_csv;
use crate::model::Snapshot;
use crate::pipeline::{train_run, TrainedModel};
use crate::sweep::{max_adjacent_jump, sweep, write_sweep_csv, SweepConfig};
use crate::synth::{synth_generate, SynthKind, SynthParams};

#[derive(Debug, Parser)]
#[command(name = "cpf", version, about = "Particle-filter recurrent forecasters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic series as CSV.
    Synth(SynthArgs),
    /// Train a model from a config file and a CSV.
    Train(TrainArgs),
    /// Score a checkpoint on every window of a CSV; writes metrics JSON.
    Evaluate(EvaluateArgs),
    /// Per-window predictions of a checkpoint as CSV.
    Forecast(ForecastArgs),
    /// Step and smoothed ECDF of a saved ensemble snapshot on a grid.
    EcdfDump(EcdfArgs),
    /// Loss along a parameter ray under both resamplers.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// linear-gaussian, stochastic-volatility or driven-ar.
    #[arg(long)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 1000)]
    pub length: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub a: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_w: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma_v: f64,
    #[arg(long, default_value_t = 0.0)]
    pub h0: f64,
    #[arg(long, default_value_t = 5)]
    pub drivers: usize,
    #[arg(long, default_value_t = 0.95)]
    pub driver_phi: f64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint_out: PathBuf,
    /// Training report JSON; stdout when omitted.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the final ensemble of the last window as JSON.
    #[arg(long)]
    pub snapshot_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EcdfArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub grid: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Series to sweep on; a linear-gaussian synthetic series when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    pub target: String,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    /// Number of windows in the fixed batch.
    #[arg(long, default_value_t = 32)]
    pub windows: usize,
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    #[arg(long, default_value_t = 1.0)]
    pub span: f64,
    #[arg(long, default_value_t = 10)]
    pub particles: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "enc.weight.")]
    pub prefix: String,
    /// 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> anyhow::Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> anyhow::Result<TrainedModel> {
    TrainedModel::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn load_data(path: &Path, target: &str) -> anyhow::Result<crate::data::SeriesDataset> {
    load_csv(path, target).with_context(|| format!("cannot read {}", path.display()))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let params = SynthParams {
                a: a.a,
                sigma_w: a.sigma_w,
                sigma_v: a.sigma_v,
                h0: a.h0,
                drivers: a.drivers,
                driver_phi: a.driver_phi,
            };
            let ds = synth_generate(a.kind, a.length, &params, a.seed)?;
            let mut w = output(a.out.as_deref())?;
            ds.write_csv(&mut w)?;
            w.flush()?;
        }
        Command::Train(a) => {
            let mut config = match &a.config {
                Some(p) => {
                    RunConfig::load(p).with_context(|| format!("in config {}", p.display()))?
                }
                None => RunConfig::default(),
            };
            for kv in &a.overrides {
                let Some((k, v)) = kv.split_once('=') else {
                    bail!("--set expects KEY=VALUE, got `{kv}`");
                };
                config.set(k.trim(), v.trim())?;
            }
            config.validate()?;
            let ds = load_data(&a.data, &config.target)?;
            let (trained, report) = train_run(&config, &ds)?;
            trained
                .save(&a.checkpoint_out)
                .with_context(|| format!("cannot write {}", a.checkpoint_out.display()))?;
            write_json(&report, a.report_out.as_deref())?;
        }
        Command::Evaluate(a) => {
            let trained = load_model(&a.checkpoint)?;
            let ds = load_data(&a.data, &trained.config.target)?;
            write_json(&trained.evaluate(&ds)?, a.out.as_deref())?;
        }
        Command::Forecast(a) => {
            let trained = load_model(&a.checkpoint)?;
            let ds = load_data(&a.data, &trained.config.target)?;
            let (rows, snapshot) = trained.forecast(&ds)?;
            let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
            w.write_record(["window", "row", "actual", "predicted"])?;
            for r in &rows {
                w.write_record([
                    r.window.to_string(),
                    r.row.to_string(),
                    format!("{:?}", r.actual),
                    format!("{:?}", r.predicted),
                ])?;
            }
            w.flush()?;
            if let Some(path) = &a.snapshot_out {
                let Some(snapshot) = snapshot else {
                    bail!(
                        "model `{}` carries no particles, so there is no ensemble to snapshot",
                        trained.config.model
                    );
                };
                write_json(&snapshot, Some(path))?;
            }
        }
        Command::EcdfDump(a) => {
            let text = std::fs::read_to_string(&a.snapshot)
                .with_context(|| format!("cannot read {}", a.snapshot.display()))?;
            let snapshot: Snapshot = serde_json::from_str(&text)
                .with_context(|| format!("{} is not a snapshot file", a.snapshot.display()))?;
            let ecdf = WeightedEcdf::new(&snapshot.projections, &snapshot.weights)?;
            log::info!("sup distance on grid: {}", ecdf.grid_sup_distance(a.grid));
            let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
            w.write_record(["x", "step", "smooth"])?;
            for (x, step, smooth) in ecdf.grid(a.grid) {
                w.write_record([format!("{x:?}"), format!("{step:?}"), format!("{smooth:?}")])?;
            }
            w.flush()?;
        }
        Command::Sweep(a) => {
            let ds = match &a.data {
                Some(p) => load_data(p, &a.target)?,
                None => synth_generate(
                    SynthKind::LinearGaussian,
                    a.window + a.windows,
                    &SynthParams::default(),
                    a.seed,
                )?,
            };
            let all = ds.windows(a.window)?;
            if all.windows() < a.windows {
                bail!(
                    "data yields {} windows of length {}, fewer than --windows {}",
                    all.windows(),
                    a.window,
                    a.windows
                );
            }
            let batch = all.select(&(0..a.windows).collect::<Vec<_>>());
            let cfg = SweepConfig {
                points: a.points,
                span: a.span,
                particles: a.particles,
                hidden: a.hidden,
                kappa: a.kappa,
                seed: a.seed,
                prefix: a.prefix,
                threads: a.threads,
            };
            let rows = sweep(&cfg, &batch)?;
            let jc = max_adjacent_jump(&rows.iter().map(|r| r.loss_continuous).collect::<Vec<_>>());
            let jm =
                max_adjacent_jump(&rows.iter().map(|r| r.loss_multinomial).collect::<Vec<_>>());
            log::info!("max adjacent jump: continuous {jc:.6e}, multinomial {jm:.6e}");
            write_sweep_csv(&rows, output(a.out.as_deref())?)?;
        }
    }
    Ok(())
}

/// Parses `args`, runs, and returns the process exit code. Failures print a
/// single line to stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{first} (run `cpf --help` for usage)");
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
