//! Synthetic fair scores, endogenous noise, train/test grids, time-varying
//! schedules and the instrumental-variable generator.

use std::fmt;
use std::sync::Arc;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::numerics::{linspace, Field, Grid, Grid1D, Grid2D, SeededRng};

/// Half-width of the truncated-normal instrument support.
pub const IV_SCALE: f64 = 1.853;

pub const DOMAIN: (f64, f64) = (-3.0, 3.0);

/// Half-width of the uniform shift applied to test grids.
pub const TEST_SHIFT: f64 = 0.5;

pub type ScoreFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// User supplied score function with a declared arity.
#[derive(Clone)]
pub struct CustomScenario {
    pub name: String,
    pub dims: usize,
    pub eval: ScoreFn,
}

impl fmt::Debug for CustomScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomScenario")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .finish()
    }
}

/// The fair score function `φ*`.
#[derive(Debug, Clone, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    /// `x²`
    Quadratic1D,
    /// `(|x1|^p + |x2|^p)^(1/p)`
    PNorm2D { p: f64 },
    /// `a·sin(b·x1²) + c·cos(d·x2²)`
    SinCos2D { a: f64, b: f64, c: f64, d: f64 },
    #[serde(skip)]
    Custom(CustomScenario),
}

impl PartialEq for Scenario {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scenario::Quadratic1D, Scenario::Quadratic1D) => true,
            (Scenario::PNorm2D { p: a }, Scenario::PNorm2D { p: b }) => a == b,
            (
                Scenario::SinCos2D { a, b, c, d },
                Scenario::SinCos2D {
                    a: a2,
                    b: b2,
                    c: c2,
                    d: d2,
                },
            ) => (a, b, c, d) == (a2, b2, c2, d2),
            (Scenario::Custom(x), Scenario::Custom(y)) => {
                x.name == y.name && x.dims == y.dims && Arc::ptr_eq(&x.eval, &y.eval)
            }
            _ => false,
        }
    }
}

impl Scenario {
    pub fn dims(&self) -> usize {
        match self {
            Scenario::Quadratic1D => 1,
            Scenario::PNorm2D { .. } | Scenario::SinCos2D { .. } => 2,
            Scenario::Custom(c) => c.dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scenario::PNorm2D { p } if !(*p >= 1.0) => Err(Error::InvalidArgument(format!(
                "p-norm scenario needs p >= 1, got {p}"
            ))),
            Scenario::SinCos2D { a, b, c, d } if ![a, b, c, d].iter().all(|v| v.is_finite()) => {
                Err(Error::InvalidArgument(
                    "non-finite sin/cos coefficient".into(),
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Scenario::Quadratic1D => x[0] * x[0],
            Scenario::PNorm2D { p } => (x[0].abs().powf(*p) + x[1].abs().powf(*p)).powf(1.0 / p),
            Scenario::SinCos2D { a, b, c, d } => {
                a * (b * x[0] * x[0]).sin() + c * (d * x[1] * x[1]).cos()
            }
            Scenario::Custom(c) => (c.eval)(x),
        }
    }
}

pub fn eval_scenario(scenario: &Scenario, grid: &Grid) -> Result<Field> {
    scenario.validate()?;
    if scenario.dims() != grid.dims() {
        return Err(Error::ArityMismatch(format!(
            "scenario takes {} coordinates, grid has {}",
            scenario.dims(),
            grid.dims()
        )));
    }
    Field::from_fn(*grid, |x| scenario.value(x))
}

/// `μ(x) = αx`, constant `σ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NoiseModel1D {
    pub alpha: f64,
    pub sigma: f64,
}

/// `μ = α1·x1 + β1·x2 + γ1·x1·x2`, `σ = α2·|x1| + β2·|x2| + γ2·|x1|·|x2|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NoiseModel2D {
    pub alpha1: f64,
    pub beta1: f64,
    pub gamma1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub gamma2: f64,
}

impl NoiseModel1D {
    pub const STANDARD: Self = Self {
        alpha: 2.0,
        sigma: 1.0,
    };
}

impl NoiseModel2D {
    pub const STANDARD: Self = Self {
        alpha1: 0.2,
        beta1: 0.2,
        gamma1: 1.0,
        alpha2: 0.5,
        beta2: 0.5,
        gamma2: 0.2,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    OneD(NoiseModel1D),
    TwoD(NoiseModel2D),
}

impl NoiseModel {
    pub fn dims(&self) -> usize {
        match self {
            NoiseModel::OneD(_) => 1,
            NoiseModel::TwoD(_) => 2,
        }
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        match self {
            NoiseModel::OneD(m) => m.alpha * x[0],
            NoiseModel::TwoD(m) => m.alpha1 * x[0] + m.beta1 * x[1] + m.gamma1 * x[0] * x[1],
        }
    }

    pub fn std_dev(&self, x: &[f64]) -> f64 {
        match self {
            NoiseModel::OneD(m) => m.sigma,
            NoiseModel::TwoD(m) => {
                m.alpha2 * x[0].abs() + m.beta2 * x[1].abs() + m.gamma2 * x[0].abs() * x[1].abs()
            }
        }
    }
}

/// Draw one realization of the endogenous noise `U(x)` on `grid`.
pub fn sample_noise(grid: &Grid, noise: &NoiseModel, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if noise.dims() != grid.dims() {
        return Err(Error::ArityMismatch(format!(
            "noise model takes {} coordinates, grid has {}",
            noise.dims(),
            grid.dims()
        )));
    }
    grid.coordinates()
        .iter()
        .map(|x| {
            let sd = noise.std_dev(x);
            if !(sd >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "noise standard deviation {sd} < 0 at {x:?}"
                )));
            }
            Ok(rng.normal(noise.mean(x), sd))
        })
        .collect()
}

/// Observed biased score `Y = φ* + U(x)`.
pub fn corrupt(phi: &Field, noise: &NoiseModel, rng: &mut SeededRng) -> Result<Field> {
    let u = sample_noise(phi.grid(), noise, rng)?;
    phi.with_values(phi.values().iter().zip(u).map(|(p, u)| p + u).collect())
}

pub fn train_grid_1d(count: usize) -> Result<Grid1D> {
    linspace(DOMAIN.0, DOMAIN.1, count)
}

/// Training grid shifted by `ε ~ U(-0.5, 0.5)`; returns the grid and `ε`.
pub fn test_grid_1d(count: usize, rng: &mut SeededRng) -> Result<(Grid1D, f64)> {
    let eps = rng.uniform_range(-TEST_SHIFT, TEST_SHIFT);
    Ok((shifted_grid_1d(count, eps)?, eps))
}

pub fn shifted_grid_1d(count: usize, eps: f64) -> Result<Grid1D> {
    train_grid_1d(count)?.shifted(eps)
}

pub fn train_grid_2d(count1: usize, count2: usize) -> Result<Grid2D> {
    Ok(Grid2D::new(
        linspace(DOMAIN.0, DOMAIN.1, count1)?,
        linspace(DOMAIN.0, DOMAIN.1, count2)?,
    ))
}

/// Both axes shifted by one shared `ε ~ U(-0.5, 0.5)`.
pub fn test_grid_2d(count1: usize, count2: usize, rng: &mut SeededRng) -> Result<(Grid2D, f64)> {
    let eps = rng.uniform_range(-TEST_SHIFT, TEST_SHIFT);
    Ok((shifted_grid_2d(count1, count2, eps)?, eps))
}

pub fn shifted_grid_2d(count1: usize, count2: usize, eps: f64) -> Result<Grid2D> {
    let g = train_grid_2d(count1, count2)?;
    Ok(Grid2D::new(g.axis1.shifted(eps)?, g.axis2.shifted(eps)?))
}

/// One phase of a time-varying fair score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase {
    pub scenario: Scenario,
    pub epochs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSchedule {
    phases: Vec<Phase>,
}

impl PhaseSchedule {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::InvalidArgument("schedule needs a phase".into()));
        }
        for p in &phases {
            if p.epochs == 0 {
                return Err(Error::InvalidArgument("phase with zero epochs".into()));
            }
            p.scenario.validate()?;
        }
        Ok(Self { phases })
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.epochs).sum()
    }

    /// Epoch indices at which a new phase starts (excluding 0).
    pub fn boundaries(&self) -> Vec<usize> {
        self.phases
            .iter()
            .scan(0, |acc, p| {
                *acc += p.epochs;
                Some(*acc)
            })
            .take(self.phases.len() - 1)
            .collect()
    }

    /// Four slowly changing sin/cos scores.
    pub fn gradual(epochs_per_phase: usize) -> Result<Self> {
        let coeffs = [(0.25, 1.75), (0.5, 1.5), (1.0, 1.5), (1.0, 1.0)];
        Self::new(
            coeffs
                .iter()
                .map(|&(a, c)| Phase {
                    scenario: Scenario::SinCos2D {
                        a,
                        b: 1.0,
                        c,
                        d: 1.0,
                    },
                    epochs: epochs_per_phase,
                })
                .collect(),
        )
    }

    /// Four scores with increasing oscillation frequency.
    pub fn oscillating(epochs_per_phase: usize) -> Result<Self> {
        Self::new(
            (1..=4)
                .map(|f| Phase {
                    scenario: Scenario::SinCos2D {
                        a: 1.0,
                        b: f as f64,
                        c: 1.0,
                        d: f as f64,
                    },
                    epochs: epochs_per_phase,
                })
                .collect(),
        )
    }
}

/// `n × k` instrument matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IvMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl IvMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Instrument value for a running-mean level `τ ∈ [0, 1]`.
///
/// `τ` is mapped linearly into `[Φ(-1), Φ(1)]` and pulled back through `Φ⁻¹`,
/// giving a value in `[-IV_SCALE, IV_SCALE]`.
pub fn iv_transform(tau: f64) -> f64 {
    let normal = Normal::standard();
    let lo = normal.cdf(-1.0);
    let hi = normal.cdf(1.0);
    let w = normal.inverse_cdf(lo + tau * (hi - lo)) * IV_SCALE;
    w.clamp(-IV_SCALE, IV_SCALE)
}

/// Running means `τ_j = (1/j) Σ_{l≤j} e_l`.
pub fn running_means(e: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    e.iter()
        .enumerate()
        .map(|(j, v)| {
            acc += v;
            acc / (j + 1) as f64
        })
        .collect()
}

/// Normalized weights `ε_j = √(k/2)·e_j / Σe`. They do not enter the
/// instruments themselves; exposed for completeness of the recipe.
pub fn normalized_weights(e: &[f64]) -> Vec<f64> {
    let k = e.len() as f64;
    let total: f64 = e.iter().sum();
    e.iter().map(|v| (k / 2.0).sqrt() * v / total).collect()
}

/// Instruments from one draw of `e = (e_1..e_k)`.
pub fn iv_row(e: &[f64]) -> Vec<f64> {
    running_means(e).into_iter().map(iv_transform).collect()
}

/// `n` observations of `k` instruments; `e` is redrawn for every row.
pub fn gen_iv(k: usize, n: usize, rng: &mut SeededRng) -> Result<IvMatrix> {
    if k == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "instrument matrix needs k >= 1 and n >= 1, got k={k}, n={n}"
        )));
    }
    let mut entries = Vec::with_capacity(n * k);
    let mut e = vec![0.0; k];
    for _ in 0..n {
        for v in e.iter_mut() {
            *v = rng.uniform();
        }
        entries.extend(iv_row(&e));
    }
    Ok(IvMatrix {
        rows: n,
        cols: k,
        entries,
    })
}
