//! Command-line front end. Every command writes its artifacts under `--out`
//! together with the effective config and a manifest.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{load_csv, to_csv, StationSeries};
use crate::error::{Error, Result, StageExt};
use crate::experiments::{ablation_csv, run_ablation, run_sensitivity};
use crate::output::OutputDir;
use crate::pipeline::{prepare_source, pretrain, PreparedStation};
use crate::preprocess::select_source;
use crate::synth::{benchmark, synth_generate, SynthProfile, SOURCE_DAYS};
use crate::train::{evaluate_model, history_csv, FitOutcome};
use crate::transfer::run_transfer;

#[derive(Debug, Parser)]
#[command(name = "idsnet", version, about = "Few-shot PV power forecasting")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML). Defaults apply to anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

/// Candidate sources and the few-shot target; fall back to the config's
/// `[data]` paths.
#[derive(Debug, Args)]
pub struct StationArgs {
    #[arg(long = "source")]
    pub sources: Vec<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic station CSVs.
    Synth {
        #[arg(long, default_value_t = SOURCE_DAYS)]
        days: usize,
        #[arg(long, default_value = "station")]
        station: String,
        #[arg(long, default_value_t = 15.0)]
        peak_kw: f64,
        #[arg(long, default_value_t = 0.3)]
        cloud: f64,
        #[arg(long, default_value_t = 10.0)]
        night_hours: f64,
        /// Write the three-candidate benchmark and its target instead.
        #[arg(long)]
        benchmark: bool,
    },
    /// Rank candidate sources by MMD to the target.
    SelectSource(StationArgs),
    /// Hampel-correct and rank the features of one large station.
    Preprocess {
        #[arg(long)]
        station: PathBuf,
    },
    /// Pretrain on one large station and save a checkpoint.
    Pretrain {
        #[arg(long)]
        station: PathBuf,
    },
    /// Select a source, pretrain, probe the target and fine-tune if needed.
    Transfer(StationArgs),
    /// Score a checkpoint on a station's test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        station: PathBuf,
    },
    /// Train every ablation variant.
    Ablate(StationArgs),
    /// Sweep max epoch, look-back and batch size one at a time.
    Sensitivity(StationArgs),
    /// Print a checkpoint's ensemble coefficients.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::SelectSource(_) => "select-source",
            Command::Preprocess { .. } => "preprocess",
            Command::Pretrain { .. } => "pretrain",
            Command::Transfer(_) => "transfer",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate(_) => "ablate",
            Command::Sensitivity(_) => "sensitivity",
            Command::Explain { .. } => "explain",
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stations(args: &StationArgs, cfg: &RunConfig) -> Result<(Vec<StationSeries>, StationSeries)> {
    let sources = if args.sources.is_empty() {
        &cfg.data.sources
    } else {
        &args.sources
    };
    if sources.is_empty() {
        return Err(Error::Config(
            "no source stations: pass --source or set data.sources".into(),
        ));
    }
    let target = args
        .target
        .as_ref()
        .or(cfg.data.target.as_ref())
        .ok_or_else(|| {
            Error::Config("no target station: pass --target or set data.target".into())
        })?;
    let candidates = sources.iter().map(load_csv).collect::<Result<Vec<_>>>()?;
    Ok((candidates, load_csv(target)?))
}

fn checkpoint(
    fit: &FitOutcome,
    station: &PreparedStation,
    cfg: &RunConfig,
    split_large: bool,
) -> Result<Checkpoint> {
    let digest = evaluate_model(&fit.model, &station.windows.test, &station.norm)?.0;
    Ok(Checkpoint {
        config: cfg.clone(),
        model: fit.model.clone(),
        station: station.series.station_id.clone(),
        feature_names: station.feature_names().to_vec(),
        normalizer: station.norm.clone(),
        split: if split_large {
            cfg.data.large_split
        } else {
            cfg.data.small_split
        },
        history: fit.history.clone(),
        digest: Some(digest),
    })
}

#[derive(Serialize)]
struct Evaluation {
    checkpoint: PathBuf,
    station: String,
    metrics: crate::train::MetricsReport,
    /// Largest absolute difference from the metrics stored at save time,
    /// when evaluated on the station the checkpoint was trained on.
    digest_max_abs_diff: Option<f64>,
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let mut out = OutputDir::create(&cli.global.out, cli.command.name(), &cfg.hash())?;
    out.write("config.toml", cfg.to_toml().as_bytes())?;
    match &cli.command {
        Command::Synth {
            days,
            station,
            peak_kw,
            cloud,
            night_hours,
            benchmark: whole_benchmark,
        } => {
            if *whole_benchmark {
                let bench = benchmark(cfg.seed)?;
                for s in bench.candidates.iter().chain([&bench.target]) {
                    out.write(&format!("{}.csv", s.station_id), to_csv(s).as_bytes())?;
                }
            } else {
                let profile = SynthProfile::new(station, *peak_kw, *cloud, *night_hours);
                let s = synth_generate(cfg.seed, *days, &profile)?;
                out.write(&format!("{station}.csv"), to_csv(&s).as_bytes())?;
            }
        }
        Command::SelectSource(args) => {
            let (candidates, target) = stations(args, &cfg)?;
            let sel = select_source(&candidates, &target, &cfg.mmd)?;
            let mut csv = String::from("station,mmd2\n");
            for (id, v) in &sel.table {
                csv.push_str(&format!("{id},{v}\n"));
            }
            out.write("mmd.csv", csv.as_bytes())?;
            out.write_json("selection.json", &sel)?;
            println!("selected source: {}", sel.selected);
        }
        Command::Preprocess { station } => {
            let series = load_csv(station)?;
            let prepared = prepare_source(&series, &cfg)?;
            out.write("preprocessed.csv", to_csv(&prepared.series).as_bytes())?;
            out.write_json("outliers.json", &prepared.outliers)?;
            if let Some(ranking) = &prepared.ranking {
                let mut csv = String::from("feature,weight,rank\n");
                for (rank, &j) in ranking.order.iter().enumerate() {
                    csv.push_str(&format!(
                        "{},{},{}\n",
                        series.feature_names[j],
                        ranking.weights[j],
                        rank + 1
                    ));
                }
                out.write("ranking.csv", csv.as_bytes())?;
            }
            println!(
                "{} outliers corrected; features kept: {}",
                prepared.outliers.len(),
                prepared.feature_names().join(", ")
            );
        }
        Command::Pretrain { station } => {
            let series = load_csv(station)?;
            let source = prepare_source(&series, &cfg).stage("preprocess")?;
            let fit = pretrain(&source, &cfg).stage("pretrain")?;
            let ckpt = checkpoint(&fit, &source, &cfg, true)?;
            out.write("model.ckpt", &ckpt.to_bytes())?;
            out.write("history.csv", history_csv(&fit.history).as_bytes())?;
            out.write_json("metrics.json", &ckpt.digest)?;
        }
        Command::Transfer(args) => {
            let (candidates, target) = stations(args, &cfg)?;
            let run = run_transfer(&candidates, &target, &cfg)?;
            out.write(
                "pretrained.ckpt",
                &checkpoint(&run.pretrained, &run.source, &cfg, true)?.to_bytes(),
            )?;
            out.write(
                "history_pretrain.csv",
                history_csv(&run.pretrained.history).as_bytes(),
            )?;
            if let Some(ft) = &run.fine_tuned {
                out.write(
                    "fine_tuned.ckpt",
                    &checkpoint(ft, &run.target, &cfg, false)?.to_bytes(),
                )?;
                out.write("history_fine_tune.csv", history_csv(&ft.history).as_bytes())?;
            }
            if let Some(d) = &run.direct {
                out.write("history_direct.csv", history_csv(&d.history).as_bytes())?;
            }
            out.write("transfer.csv", run.report.to_csv().as_bytes())?;
            out.write_json("report.json", &run.report)?;
            print!("{}", run.report.to_csv());
        }
        Command::Evaluate {
            checkpoint,
            station,
        } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let series = load_csv(station)?;
            let metrics = ckpt.evaluate(&series)?;
            let digest_max_abs_diff = ckpt
                .digest
                .filter(|_| series.station_id == ckpt.station)
                .map(|d| {
                    [
                        d.mse - metrics.mse,
                        d.mae - metrics.mae,
                        d.rmse - metrics.rmse,
                        d.r2 - metrics.r2,
                    ]
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
                });
            let eval = Evaluation {
                checkpoint: checkpoint.clone(),
                station: series.station_id.clone(),
                metrics,
                digest_max_abs_diff,
            };
            out.write_json("evaluation.json", &eval)?;
            println!(
                "mse {:.6} mae {:.6} rmse {:.6} r2 {:.6}",
                metrics.mse, metrics.mae, metrics.rmse, metrics.r2
            );
        }
        Command::Ablate(args) => {
            let (candidates, target) = stations(args, &cfg)?;
            let rows = run_ablation(&candidates, &target, &cfg)?;
            let csv = ablation_csv(&rows);
            out.write("ablation.csv", csv.as_bytes())?;
            out.write_json("ablation.json", &rows)?;
            print!("{csv}");
        }
        Command::Sensitivity(args) => {
            let (candidates, target) = stations(args, &cfg)?;
            let report = run_sensitivity(&candidates, &target, &cfg)?;
            out.write("sensitivity.csv", report.to_csv().as_bytes())?;
            out.write("sensitivity_runs.csv", report.runs_csv().as_bytes())?;
            out.write_json("sensitivity.json", &report)?;
            print!("{}", report.to_csv());
        }
        Command::Explain { checkpoint } => {
            let ckpt = Checkpoint::load(checkpoint)?;
            let report = ckpt.model.explain()?;
            out.write("explain.csv", report.to_csv().as_bytes())?;
            out.write("explain.txt", report.to_text().as_bytes())?;
            print!("{}", report.to_text());
        }
    }
    let manifest = out.finish()?;
    log::info!("{}: wrote {} files", manifest.command, manifest.files.len());
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
