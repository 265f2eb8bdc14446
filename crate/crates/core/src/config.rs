//! Experiment configuration, presets and seeded dataset generation.

use std::path::PathBuf;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{
    self, NoiseModel, NoiseModel1D, NoiseModel2D, Phase, PhaseSchedule, Scenario,
};
use crate::error::{Error, Result};
use crate::evalkit::{DEFAULT_FRACTIONS, DEFAULT_REALIZATIONS};
use crate::iv::IvConfig;
use crate::network::{AdamConfig, NetworkSpec};
use crate::numerics::{Field, Grid, SeededRng};
use crate::smoothing::SmootherSpec;
use crate::trainer::TrainConfig;

/// The JSON schema every config file is checked against.
pub const SCHEMA: &str = include_str!("../schema/experiment.schema.json");

/// RNG streams derived from the experiment seed. Streams 0 and 1 belong to
/// the trainer (initialization, labeled subset).
const TRAIN_NOISE_STREAM: u64 = 2;
const TEST_SHIFT_STREAM: u64 = 3;
const TEST_NOISE_STREAM: u64 = 4;
const INSTRUMENT_STREAM: u64 = 5;
/// Phase `i` of a time-varying run draws its noise from stream `PHASE_STREAM_BASE + i`.
const PHASE_STREAM_BASE: u64 = 16;

/// Epochs of the desk-scale 2D presets.
pub const DESK_2D_EPOCHS: usize = 4_000;
/// Adam step of the desk-scale 2D presets.
pub const DESK_2D_LR: f64 = 3e-5;
/// Epochs per phase of the time-varying presets.
pub const SCHEDULE_EPOCHS_PER_PHASE: usize = 5_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    /// Labeled fractions as proportions (0.01 = 1%).
    pub fractions: Vec<f64>,
    pub realizations: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            realizations: DEFAULT_REALIZATIONS,
        }
    }
}

/// Sequence of fair scores for time-varying runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Four slowly changing sin/cos scores.
    Gradual {
        epochs_per_phase: usize,
    },
    /// Four sin/cos scores of increasing frequency.
    Oscillating {
        epochs_per_phase: usize,
    },
    Custom {
        phases: Vec<PhaseSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub scenario: Scenario,
    pub epochs: usize,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<PhaseSchedule> {
        match self {
            ScheduleSpec::Gradual { epochs_per_phase } => PhaseSchedule::gradual(*epochs_per_phase),
            ScheduleSpec::Oscillating { epochs_per_phase } => {
                PhaseSchedule::oscillating(*epochs_per_phase)
            }
            ScheduleSpec::Custom { phases } => PhaseSchedule::new(
                phases
                    .iter()
                    .map(|p| Phase {
                        scenario: p.scenario.clone(),
                        epochs: p.epochs,
                    })
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub noise: NoiseModel,
    /// Points per axis: `[T]` or `[T1, T2]`.
    pub grid: Vec<usize>,
    pub smoother: SmootherSpec,
    pub network: NetworkSpec,
    /// `train.seed` is replaced by the top-level `seed` when a run starts.
    pub train: TrainConfig,
    #[serde(default)]
    pub iv: IvConfig,
    #[serde(default)]
    pub sweep: SweepSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleSpec>,
    pub output_dir: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioChoice {
    /// `x²` on a 1D grid.
    Quadratic,
    /// Euclidean norm on a 2D grid.
    Pnorm,
    /// `sin(x1²) + cos(x2²)` on a 2D grid.
    Sincos,
    /// Time-varying sin/cos scores on a 2D grid.
    Schedule,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, scenario: ScenarioChoice) -> Self {
        let full = preset == Preset::Paper;
        let scenario_choice = scenario;
        match scenario {
            ScenarioChoice::Quadratic => {
                let (t, taps, hidden) = if full {
                    (1000, 10, 1000)
                } else {
                    (200, 2, 200)
                };
                Self {
                    scenario: Scenario::Quadratic1D,
                    noise: NoiseModel::OneD(NoiseModel1D::STANDARD),
                    grid: vec![t],
                    smoother: SmootherSpec::moving_average(taps),
                    network: NetworkSpec::dense_1d(t, hidden),
                    train: TrainConfig {
                        epochs: 300,
                        labeled_fraction: 0.0,
                        ..TrainConfig::default()
                    },
                    iv: IvConfig::default(),
                    sweep: SweepSettings::default(),
                    schedule: None,
                    output_dir: PathBuf::from("runs"),
                    seed: 0,
                }
            }
            ScenarioChoice::Pnorm | ScenarioChoice::Sincos | ScenarioChoice::Schedule => {
                let (n, stddev) = if full { (100, 5.0) } else { (50, 2.5) };
                let scenario = match scenario {
                    ScenarioChoice::Pnorm => Scenario::PNorm2D { p: 2.0 },
                    _ => Scenario::SinCos2D {
                        a: 1.0,
                        b: 1.0,
                        c: 1.0,
                        d: 1.0,
                    },
                };
                let schedule = (scenario_choice == ScenarioChoice::Schedule).then_some(
                    ScheduleSpec::Gradual {
                        epochs_per_phase: SCHEDULE_EPOCHS_PER_PHASE,
                    },
                );
                Self {
                    scenario,
                    noise: NoiseModel::TwoD(NoiseModel2D::STANDARD),
                    grid: vec![n, n],
                    smoother: SmootherSpec::gaussian(stddev),
                    network: NetworkSpec::conv_2d(n, n, n, n),
                    train: TrainConfig {
                        epochs: if full { 12_000 } else { DESK_2D_EPOCHS },
                        labeled_fraction: 0.01,
                        adam: AdamConfig {
                            lr: if full { 1e-5 } else { DESK_2D_LR },
                            ..AdamConfig::default()
                        },
                        ..TrainConfig::default()
                    },
                    iv: IvConfig::default(),
                    sweep: SweepSettings::default(),
                    schedule,
                    output_dir: PathBuf::from("runs"),
                    seed: 0,
                }
            }
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn dims(&self) -> usize {
        self.grid.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.grid.len();
        if !(1..=2).contains(&dims) {
            return Err(config_error(format!(
                "grid must list 1 or 2 axis sizes, got {:?}",
                self.grid
            )));
        }
        if self.grid.iter().any(|&n| n < 2) {
            return Err(config_error(format!(
                "every grid axis needs at least 2 points, got {:?}",
                self.grid
            )));
        }
        let wrap = |e: Error| config_error(e.to_string());
        self.scenario.validate().map_err(wrap)?;
        if self.scenario.dims() != dims {
            return Err(config_error(format!(
                "scenario takes {} coordinates but the grid has {dims} axes",
                self.scenario.dims()
            )));
        }
        if self.noise.dims() != dims {
            return Err(config_error(format!(
                "noise model takes {} coordinates but the grid has {dims} axes",
                self.noise.dims()
            )));
        }
        self.smoother.validate().map_err(wrap)?;
        match (&self.smoother, dims) {
            (SmootherSpec::MovingAverage { .. }, 1) | (SmootherSpec::GaussianBlur { .. }, 2) => {}
            _ => {
                return Err(config_error(format!(
                    "smoother {:?} does not apply to a {dims}D grid",
                    self.smoother
                )))
            }
        }
        if self.network.input_shape != self.grid {
            return Err(config_error(format!(
                "network input shape {:?} differs from grid {:?}",
                self.network.input_shape, self.grid
            )));
        }
        let out = self.network.output_shape().map_err(wrap)?;
        if out != self.grid {
            return Err(config_error(format!(
                "network output shape {out:?} differs from grid {:?}",
                self.grid
            )));
        }
        self.train.validate().map_err(wrap)?;
        self.iv.validate().map_err(wrap)?;
        if self.sweep.realizations < 2 {
            return Err(config_error("sweep needs at least 2 realizations"));
        }
        if self.sweep.fractions.is_empty()
            || self
                .sweep
                .fractions
                .iter()
                .any(|f| !(0.0..=1.0).contains(f))
        {
            return Err(config_error(format!(
                "sweep fractions must be non-empty and in [0, 1], got {:?}",
                self.sweep.fractions
            )));
        }
        if let Some(schedule) = &self.schedule {
            let built = schedule.build().map_err(wrap)?;
            if let Some(p) = built.phases().iter().find(|p| p.scenario.dims() != dims) {
                return Err(config_error(format!(
                    "schedule phase {:?} does not match the {dims}D grid",
                    p.scenario
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    /// Parse a config, or the `config` member of a run manifest, after
    /// checking it against [`SCHEMA`].
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("format_version").is_some() {
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
        }
        check_schema(&value)?;
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.to_path_buf(),
                message: j.to_string(),
            },
            other => other,
        })
    }

    /// Shape of fields on the training grid.
    pub fn train_grid(&self) -> Result<Grid> {
        Ok(match self.grid.as_slice() {
            [t] => datagen::train_grid_1d(*t)?.into(),
            [n1, n2] => datagen::train_grid_2d(*n1, *n2)?.into(),
            other => return Err(config_error(format!("unsupported grid {other:?}"))),
        })
    }

    /// Training configuration with the experiment seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train
        }
    }
}

/// Validate `value` against [`SCHEMA`].
pub fn check_schema(value: &serde_json::Value) -> Result<()> {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA)?;
    let validator = jsonschema::validator_for(&schema)
        .map_err(|e| config_error(format!("invalid schema: {e}")))?;
    let problems: Vec<String> = validator
        .iter_errors(value)
        .map(|e| format!("{} at '{}'", e, e.instance_path()))
        .collect();
    if problems.is_empty() {
        Ok(())
    } else {
        Err(config_error(problems.join("; ")))
    }
}

/// Schema generated from the config types.
pub fn generated_schema() -> String {
    let schema = schemars::schema_for!(ExperimentConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"
}

/// Fair scores and observations on the training grid and its shifted copy.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub phi_train: Field,
    pub y_train: Field,
    pub phi_test: Field,
    pub y_test: Field,
    /// Offset of the test grid.
    pub test_shift: f64,
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    generate_for(cfg, &cfg.scenario)
}

fn generate_for(cfg: &ExperimentConfig, scenario: &Scenario) -> Result<Dataset> {
    let train_grid = cfg.train_grid()?;
    let mut shift_rng = SeededRng::with_stream(cfg.seed, TEST_SHIFT_STREAM);
    let (test_grid, test_shift): (Grid, f64) = match cfg.grid.as_slice() {
        [t] => {
            let (g, e) = datagen::test_grid_1d(*t, &mut shift_rng)?;
            (g.into(), e)
        }
        [n1, n2] => {
            let (g, e) = datagen::test_grid_2d(*n1, *n2, &mut shift_rng)?;
            (g.into(), e)
        }
        other => return Err(config_error(format!("unsupported grid {other:?}"))),
    };
    let phi_train = datagen::eval_scenario(scenario, &train_grid)?;
    let phi_test = datagen::eval_scenario(scenario, &test_grid)?;
    let y_train = datagen::corrupt(
        &phi_train,
        &cfg.noise,
        &mut SeededRng::with_stream(cfg.seed, TRAIN_NOISE_STREAM),
    )?;
    let y_test = datagen::corrupt(
        &phi_test,
        &cfg.noise,
        &mut SeededRng::with_stream(cfg.seed, TEST_NOISE_STREAM),
    )?;
    Ok(Dataset {
        phi_train,
        y_train,
        phi_test,
        y_test,
        test_shift,
    })
}

/// Instruments for the IV baseline (1D experiments).
pub fn instruments(cfg: &ExperimentConfig) -> Result<datagen::IvMatrix> {
    let t = match cfg.grid.as_slice() {
        [t] => *t,
        other => {
            return Err(config_error(format!(
                "the IV baseline needs a 1D grid, got {other:?}"
            )))
        }
    };
    datagen::gen_iv(
        cfg.iv.k,
        t,
        &mut SeededRng::with_stream(cfg.seed, INSTRUMENT_STREAM),
    )
}

/// Observations and fair scores for every phase of the configured schedule.
pub fn phase_data(cfg: &ExperimentConfig) -> Result<Vec<crate::trainer::PhaseData>> {
    let schedule = cfg
        .schedule
        .as_ref()
        .ok_or_else(|| config_error("time-varying runs need a schedule"))?
        .build()?;
    let grid = cfg.train_grid()?;
    schedule
        .phases()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let phi_star = datagen::eval_scenario(&p.scenario, &grid)?;
            let y = datagen::corrupt(
                &phi_star,
                &cfg.noise,
                &mut SeededRng::with_stream(cfg.seed, PHASE_STREAM_BASE + i as u64),
            )?;
            Ok(crate::trainer::PhaseData {
                y,
                phi_star,
                epochs: p.epochs,
            })
        })
        .collect()
}
