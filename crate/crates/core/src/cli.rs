//! Command line front end: argument parsing, override resolution, run
//! helpers shared by the subcommands, and artifact writing.
//!
//! Settings resolve in this order, later entries winning: preset, config
//! file (`--config`, which replaces the preset entirely), command line
//! overrides (`--seed`, `--epochs`, `--lambda`, `--labeled-fraction`, `--out`
//! and the subcommand flags).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, Dataset, ExperimentConfig, Preset, ScenarioChoice, ScheduleSpec};
use crate::error::{Error, Result};
use crate::evalkit::{self, CellMetrics, SweepPlan};
use crate::iv;
use crate::network::{load_checkpoint, save_checkpoint, ParamStore};
use crate::numerics::Field;
use crate::trainer::{self, TrainOutcome};

/// Version of the manifest layout.
pub const MANIFEST_FORMAT: u32 = 1;
/// Caps the number of sweep cells trained at once.
pub const THREADS_ENV: &str = "ENDOFAIR_THREADS";
/// Window after each phase boundary searched for the loss spike.
pub const SPIKE_WINDOW: usize = 50;

#[derive(Debug, Parser)]
#[command(
    name = "endofair",
    version,
    about = "Debias scores corrupted by endogenous noise"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Experiment config, or a manifest.json from an earlier run.
    #[arg(long, global = true, conflicts_with_all = ["preset", "scenario"])]
    pub config: Option<PathBuf>,
    /// Built-in settings used when no config is given.
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Scenario of the preset (`schedule` for `track` by default, otherwise `quadratic`).
    #[arg(long, global = true, value_enum)]
    pub scenario: Option<ScenarioChoice>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Training epochs; epochs per phase for `track`.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long = "labeled-fraction", global = true)]
    pub labeled_fraction: Option<f64>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write a dataset bundle.
    Gen,
    /// Train the post-processing network.
    Train,
    /// Run the instrumental-variable baseline (1D).
    Iv(IvArgs),
    /// Labeled-fraction sweep.
    Sweep(SweepArgs),
    /// Train through a time-varying schedule.
    Track,
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::Train => "train",
            Command::Iv(_) => "iv",
            Command::Sweep(_) => "sweep",
            Command::Track => "track",
            Command::Eval(_) => "eval",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct IvArgs {
    /// Number of instruments.
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma separated candidate bandwidths.
    #[arg(long = "bandwidth-grid", value_delimiter = ',')]
    pub bandwidth_grid: Option<Vec<f64>>,
    #[arg(long = "max-n")]
    pub max_n: Option<usize>,
    /// Landweber step size.
    #[arg(long)]
    pub c: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    /// Comma separated labeled fractions (0.01 = 1%).
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub realizations: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint manifest written by `train` (`params.json`).
    #[arg(long)]
    pub checkpoint: PathBuf,
}

/// Config after applying preset, file and overrides, validated.
pub fn resolve_config(command: &Command, common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let default_scenario = match command {
                Command::Track => ScenarioChoice::Schedule,
                _ => ScenarioChoice::Quadratic,
            };
            ExperimentConfig::preset(
                common.preset.unwrap_or(Preset::Desk),
                common.scenario.unwrap_or(default_scenario),
            )
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(lambda) = common.lambda {
        cfg.train.lambda = lambda;
    }
    if let Some(f) = common.labeled_fraction {
        cfg.train.labeled_fraction = f;
    }
    if let Some(epochs) = common.epochs {
        cfg.train.epochs = epochs;
        if matches!(command, Command::Track) {
            cfg.schedule = Some(match cfg.schedule.take() {
                Some(ScheduleSpec::Gradual { .. }) | None => ScheduleSpec::Gradual {
                    epochs_per_phase: epochs,
                },
                Some(ScheduleSpec::Oscillating { .. }) => ScheduleSpec::Oscillating {
                    epochs_per_phase: epochs,
                },
                Some(ScheduleSpec::Custom { mut phases }) => {
                    phases.iter_mut().for_each(|p| p.epochs = epochs);
                    ScheduleSpec::Custom { phases }
                }
            });
        }
    }
    match command {
        Command::Iv(a) => {
            if let Some(k) = a.k {
                cfg.iv.k = k;
            }
            if let Some(g) = &a.bandwidth_grid {
                cfg.iv.bandwidth_grid = Some(g.clone());
            }
            if let Some(n) = a.max_n {
                cfg.iv.max_n = n;
            }
            if let Some(c) = a.c {
                cfg.iv.c = c;
            }
        }
        Command::Sweep(a) => {
            if let Some(f) = &a.fractions {
                cfg.sweep.fractions = f.clone();
            }
            if let Some(r) = a.realizations {
                cfg.sweep.realizations = r;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trained model together with the data it was trained on.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub dataset: Dataset,
    pub outcome: TrainOutcome,
    pub metrics: CellMetrics,
}

/// Generate data, train, and score on the training and shifted test grids.
pub fn train_run(cfg: &ExperimentConfig) -> Result<TrainRun> {
    let dataset = config::generate(cfg)?;
    let outcome = trainer::train(
        &dataset.y_train,
        &cfg.smoother,
        &dataset.phi_train,
        &cfg.network,
        &cfg.train_config(),
    )?
    .completed()?;
    let metrics = evaluate(cfg, &dataset, &outcome.params)?;
    Ok(TrainRun {
        dataset,
        outcome,
        metrics,
    })
}

pub fn evaluate(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    params: &ParamStore,
) -> Result<CellMetrics> {
    let train_est = trainer::predict(&dataset.y_train, &cfg.smoother, &cfg.network, params)?;
    let test_est = trainer::predict(&dataset.y_test, &cfg.smoother, &cfg.network, params)?;
    let train = trainer::metrics(&train_est, &dataset.phi_train)?;
    let test = trainer::metrics(&test_est, &dataset.phi_test)?;
    Ok(CellMetrics {
        train_mse: train.mse,
        test_mse: test.mse,
        train_error_norm: train.error_norm,
        test_error_norm: test.error_norm,
        final_w1: train.w1,
    })
}

/// IV reconstruction on the training grid of a 1D config.
pub fn iv_run(cfg: &ExperimentConfig) -> Result<(Field, iv::IvReport)> {
    let dataset = config::generate(cfg)?;
    let w = config::instruments(cfg)?;
    let grid = cfg.train_grid()?;
    let x: Vec<f64> = grid.coordinates().into_iter().map(|p| p[0]).collect();
    let (phi, report) = iv::run_iv(&x, dataset.y_train.values(), &w, &cfg.iv)?;
    Ok((dataset.phi_train.with_values(phi)?, report))
}

/// Train every (fraction, realization) cell of `cfg.sweep`.
pub fn sweep_run(cfg: &ExperimentConfig, threads: usize) -> Result<evalkit::SweepResult> {
    let plan = SweepPlan::new(
        cfg.sweep.fractions.clone(),
        cfg.sweep.realizations,
        cfg.seed,
    );
    evalkit::sweep(&plan, threads, |fraction, seed| {
        let mut cell = cfg.clone();
        cell.seed = seed;
        cell.train.labeled_fraction = fraction;
        Ok(train_run(&cell)?.metrics)
    })
}

/// Number of worker threads: `ENDOFAIR_THREADS` if set, else all cores.
pub fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                Error::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got {v:?}"
                ))
            }),
        Err(_) => Ok(std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)),
    }
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    format_version: u32,
    subcommand: &'a str,
    config: &'a ExperimentConfig,
    config_sha256: String,
    seed: u64,
    git_describe: String,
    wall_time_secs: f64,
    metrics: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    inputs: Option<Value>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn cell_csv(m: &CellMetrics) -> String {
    format!(
        "train_mse,test_mse,train_error_norm,test_error_norm,final_w1\n{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
        m.train_mse, m.test_mse, m.train_error_norm, m.test_error_norm, m.final_w1
    )
}

/// Artifacts and manifest metrics of one subcommand.
struct Output {
    metrics: Value,
    inputs: Option<Value>,
}

fn run_gen(cfg: &ExperimentConfig, dir: &Path) -> Result<Output> {
    let data = config::generate(cfg)?;
    data.phi_train.write_csv(&dir.join("phi_star.csv"))?;
    data.y_train.write_csv(&dir.join("y.csv"))?;
    data.phi_test.write_csv(&dir.join("phi_star_test.csv"))?;
    data.y_test.write_csv(&dir.join("y_test.csv"))?;
    write_json(&dir.join("grid.json"), data.phi_train.grid())?;
    write_json(
        &dir.join("meta.json"),
        &json!({
            "scenario": cfg.scenario,
            "noise": cfg.noise,
            "seed": cfg.seed,
            "test_shift": data.test_shift,
            "test_grid": data.phi_test.grid(),
        }),
    )?;
    if cfg.dims() == 1 {
        let w = config::instruments(cfg)?;
        let mut csv = (0..w.cols())
            .map(|j| format!("w{}", j + 1))
            .collect::<Vec<_>>()
            .join(",")
            + "\n";
        for i in 0..w.rows() {
            let row: Vec<String> = w.row(i).iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(csv, "{}", row.join(","));
        }
        write(&dir.join("instruments.csv"), &csv)?;
    }
    Ok(Output {
        metrics: json!({ "points": data.y_train.len(), "test_shift": data.test_shift }),
        inputs: None,
    })
}

fn run_train(cfg: &ExperimentConfig, dir: &Path) -> Result<Output> {
    let run = train_run(cfg)?;
    run.outcome.trace.write_csv(&dir.join("trace.csv"))?;
    save_checkpoint(&dir.join("params"), &cfg.network, &run.outcome.params)?;
    run.outcome.estimate.write_csv(&dir.join("estimate.csv"))?;
    write(&dir.join("metrics.csv"), &cell_csv(&run.metrics))?;
    Ok(Output {
        metrics: serde_json::to_value(run.metrics)?,
        inputs: None,
    })
}

fn run_iv(cfg: &ExperimentConfig, dir: &Path) -> Result<Output> {
    let (phi, report) = iv_run(cfg)?;
    let phi_star = config::generate(cfg)?.phi_train;
    let m = trainer::metrics(&phi, &phi_star)?;
    phi.write_csv(&dir.join("iv_estimate.csv"))?;
    write_json(&dir.join("iv_diagnostics.json"), &report)?;
    write(
        &dir.join("metrics.csv"),
        &format!(
            "mse,error_norm,w1\n{:.16e},{:.16e},{:.16e}\n",
            m.mse, m.error_norm, m.w1
        ),
    )?;
    Ok(Output {
        metrics: json!({
            "mse": m.mse,
            "error_norm": m.error_norm,
            "w1": m.w1,
            "bandwidth_t": report.bandwidth_t.bandwidth,
            "bandwidth_tstar": report.bandwidth_tstar.bandwidth,
            "chosen_n": report.iteration.chosen_n,
        }),
        inputs: None,
    })
}

fn run_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<Output> {
    let result = sweep_run(cfg, thread_count()?)?;
    result.write_csv(&dir.join("sweep.csv"))?;
    let summary = evalkit::summarize(&result)?;
    let summary_text = evalkit::summary_csv(&summary);
    write(&dir.join("sweep_summary.csv"), &summary_text)?;
    write(&dir.join("metrics.csv"), &summary_text)?;
    let (inversions, within) = evalkit::train_inversions(&summary);
    Ok(Output {
        metrics: json!({
            "rows": result.rows.len(),
            "failures": result.failures,
            "summary": summary,
            "train_inversions": inversions,
            "inversions_within_pooled_std": within,
        }),
        inputs: None,
    })
}

fn run_track(cfg: &ExperimentConfig, dir: &Path) -> Result<Output> {
    let phases = config::phase_data(cfg)?;
    let outcome =
        trainer::train_time_varying(&phases, &cfg.smoother, &cfg.network, &cfg.train_config())?
            .completed()?;
    outcome.trace.write_csv(&dir.join("trace.csv"))?;
    save_checkpoint(&dir.join("params"), &cfg.network, &outcome.params)?;
    outcome.estimate.write_csv(&dir.join("estimate.csv"))?;
    let peaks = trainer::boundary_peaks(&outcome.trace, SPIKE_WINDOW);
    let mut ends = Vec::new();
    let mut epoch = 0;
    for p in &phases {
        epoch += p.epochs;
        ends.push(outcome.trace.records[epoch - 1].combined);
    }
    let last = phases.last().expect("schedule has phases");
    let final_metrics = trainer::metrics(&outcome.estimate, &last.phi_star)?;
    let mut csv = String::from("phase,boundary_epoch,spike_peak,phase_end_loss\n");
    for (i, end) in ends.iter().enumerate() {
        let (b, peak) = match i.checked_sub(1) {
            Some(j) => (
                outcome.trace.boundaries[j].to_string(),
                format!("{:.16e}", peaks[j]),
            ),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(csv, "{i},{b},{peak},{end:.16e}");
    }
    write(&dir.join("metrics.csv"), &csv)?;
    Ok(Output {
        metrics: json!({
            "boundaries": outcome.trace.boundaries,
            "spike_peaks": peaks,
            "phase_end_losses": ends,
            "final_mse": final_metrics.mse,
            "final_w1": final_metrics.w1,
        }),
        inputs: None,
    })
}

fn run_eval(cfg: &ExperimentConfig, dir: &Path, args: &EvalArgs) -> Result<Output> {
    let (spec, params) = load_checkpoint(&args.checkpoint)?;
    if spec != cfg.network {
        return Err(Error::Config(format!(
            "checkpoint network {:?} differs from the configured network",
            spec.layers
        )));
    }
    let dataset = config::generate(cfg)?;
    let m = evaluate(cfg, &dataset, &params)?;
    trainer::predict(&dataset.y_train, &cfg.smoother, &cfg.network, &params)?
        .write_csv(&dir.join("estimate.csv"))?;
    trainer::predict(&dataset.y_test, &cfg.smoother, &cfg.network, &params)?
        .write_csv(&dir.join("estimate_test.csv"))?;
    write(&dir.join("metrics.csv"), &cell_csv(&m))?;
    Ok(Output {
        metrics: serde_json::to_value(m)?,
        inputs: Some(json!({ "checkpoint": args.checkpoint })),
    })
}

/// Runs one subcommand and writes its artifacts and `manifest.json` to
/// the configured output directory. Returns the manifest path.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let started = Instant::now();
    let cfg = resolve_config(&cli.command, &cli.common)?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let out = match &cli.command {
        Command::Gen => run_gen(&cfg, &dir)?,
        Command::Train => run_train(&cfg, &dir)?,
        Command::Iv(_) => run_iv(&cfg, &dir)?,
        Command::Sweep(_) => run_sweep(&cfg, &dir)?,
        Command::Track => run_track(&cfg, &dir)?,
        Command::Eval(a) => run_eval(&cfg, &dir, a)?,
    };
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT,
        subcommand: cli.command.name(),
        config: &cfg,
        config_sha256: cfg.hash()?,
        seed: cfg.seed,
        git_describe: git_describe(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        metrics: out.metrics,
        inputs: out.inputs,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Machine-readable error report printed on stderr.
pub fn error_json(err: &Error) -> String {
    json!({
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    })
    .to_string()
}
