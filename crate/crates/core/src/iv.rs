//! Instrumental-variable baseline.
//!
//! The conditional expectations `T φ = E[φ(X) | W]` and `T* ψ = E[ψ(W) | X]`
//! are estimated by local linear regression with a Gaussian kernel. Both are
//! linear smoothers, so on a sample they are `n × n` matrices whose row `j`
//! holds the weights producing the fit at query `j`. The equation
//! `T φ = r`, with `r = E[Y | W]`, is then solved by Landweber-Fridman
//! iteration with the iteration count as regularization parameter.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::datagen::IvMatrix;
use crate::error::{Error, Result};

/// Relative tolerance under which two cross-validation scores count as tied.
const TIE_TOL: f64 = 1e-9;

/// Leave-one-out is undefined at points that carry essentially all of their
/// own fit.
const MIN_LEVERAGE_GAP: f64 = 1e-10;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: vec![rows, cols],
                actual: vec![data.len()],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cols],
                actual: vec![v.len()],
            });
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: vec![self.cols, other.cols],
                actual: vec![other.rows, other.cols],
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        // SAFETY: the three buffers are live, disjoint, and sized to the
        // dimensions and row-major strides passed alongside them.
        unsafe {
            matrixmultiply::dgemm(
                self.rows,
                self.cols,
                other.cols,
                1.0,
                self.data.as_ptr(),
                self.cols as isize,
                1,
                other.data.as_ptr(),
                other.cols as isize,
                1,
                0.0,
                out.data.as_mut_ptr(),
                out.cols as isize,
                1,
            );
        }
        Ok(out)
    }

    fn axpy(&mut self, alpha: f64, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalLinearRegressor {
    dim: usize,
    predictors: Vec<f64>,
    targets: Vec<f64>,
    bandwidth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    /// The local design was singular and a kernel-weighted mean was used.
    pub fallback: bool,
}

impl LocalLinearRegressor {
    /// `predictors` is `n × dim`, row-major.
    pub fn new(
        dim: usize,
        predictors: Vec<f64>,
        targets: Vec<f64>,
        bandwidth: f64,
    ) -> Result<Self> {
        if dim == 0 || predictors.len() != targets.len() * dim {
            return Err(Error::ShapeMismatch {
                expected: vec![targets.len(), dim],
                actual: vec![predictors.len()],
            });
        }
        if targets.len() <= dim + 1 {
            return Err(Error::InvalidArgument(format!(
                "local linear regression in {dim} dimensions needs more than {} samples, got {}",
                dim + 1,
                targets.len()
            )));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be > 0, got {bandwidth}"
            )));
        }
        if predictors.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("regression data must be finite".into()));
        }
        Ok(Self {
            dim,
            predictors,
            targets,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn predict(&self, query: &[f64]) -> Result<Prediction> {
        let (weights, fallback) = self.smoother_weights(query)?;
        Ok(Prediction {
            value: weights.iter().zip(&self.targets).map(|(w, y)| w * y).sum(),
            fallback,
        })
    }

    /// Weights `l` with `prediction(query) = Σ l_i y_i`.
    pub fn smoother_weights(&self, query: &[f64]) -> Result<(Vec<f64>, bool)> {
        if query.len() != self.dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim],
                actual: vec![query.len()],
            });
        }
        Ok(smoother_row(
            self.dim,
            &self.predictors,
            self.bandwidth,
            query,
        ))
    }
}

fn smoother_row(dim: usize, predictors: &[f64], h: f64, query: &[f64]) -> (Vec<f64>, bool) {
    let n = predictors.len() / dim;
    let sq: Vec<f64> = (0..n)
        .map(|i| {
            predictors[i * dim..(i + 1) * dim]
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b).powi(2))
                .sum()
        })
        .collect();
    // Relative to the nearest sample so that at least one weight is 1.
    let nearest = sq.iter().cloned().fold(f64::INFINITY, f64::min);
    let kernel: Vec<f64> = sq
        .iter()
        .map(|d| (-(d - nearest) / (2.0 * h * h)).exp())
        .collect();

    let p = dim + 1;
    let mut gram = vec![0.0; p * p];
    let mut z = vec![0.0; p];
    z[0] = 1.0;
    for i in 0..n {
        let w = kernel[i];
        if w == 0.0 {
            continue;
        }
        for d in 0..dim {
            z[d + 1] = predictors[i * dim + d] - query[d];
        }
        for a in 0..p {
            let wa = w * z[a];
            for b in a..p {
                gram[a * p + b] += wa * z[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[a * p + b] = gram[b * p + a];
        }
    }

    match solve_first_column(&gram, p) {
        Some(coef) => {
            let weights = (0..n)
                .map(|i| {
                    let mut s = coef[0];
                    for d in 0..dim {
                        s += coef[d + 1] * (predictors[i * dim + d] - query[d]);
                    }
                    kernel[i] * s
                })
                .collect();
            (weights, false)
        }
        None => {
            let total: f64 = kernel.iter().sum();
            (kernel.iter().map(|k| k / total).collect(), true)
        }
    }
}

/// `A⁻¹ e₁` for symmetric positive semidefinite `A`, or `None` when `A` is
/// numerically singular after diagonal scaling.
fn solve_first_column(a: &[f64], p: usize) -> Option<Vec<f64>> {
    let scale: Vec<f64> = (0..p).map(|i| a[i * p + i]).collect();
    if scale.iter().any(|&d| !(d > 0.0)) {
        return None;
    }
    let s: Vec<f64> = scale.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut v = a[i * p + j] * s[i] * s[j];
            for k in 0..j {
                v -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if v < 1e-10 {
                    return None;
                }
                l[i * p + i] = v.sqrt();
            } else {
                l[i * p + j] = v / l[j * p + j];
            }
        }
    }
    // Solve (S A S) u = S e₁, then x = S u.
    let mut u = vec![0.0; p];
    u[0] = s[0];
    for i in 0..p {
        let mut v = u[i];
        for k in 0..i {
            v -= l[i * p + k] * u[k];
        }
        u[i] = v / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut v = u[i];
        for k in i + 1..p {
            v -= l[k * p + i] * u[k];
        }
        u[i] = v / l[i * p + i];
    }
    Some(u.iter().zip(&s).map(|(a, b)| a * b).collect())
}

/// Smoother matrix of a local linear fit on `predictors` (`n × dim`),
/// evaluated at each row of `queries`. Returns the matrix and the number of
/// rows that fell back to a kernel-weighted mean.
pub fn hat_matrix(
    dim: usize,
    predictors: &[f64],
    bandwidth: f64,
    queries: &[f64],
) -> Result<(Matrix, usize)> {
    if dim == 0 || !predictors.len().is_multiple_of(dim) || !queries.len().is_multiple_of(dim) {
        return Err(Error::InvalidArgument(format!(
            "predictor and query buffers must hold rows of {dim} values"
        )));
    }
    let n = predictors.len() / dim;
    let q = queries.len() / dim;
    let mut data = Vec::with_capacity(n * q);
    let mut fallbacks = 0;
    for j in 0..q {
        let (row, fell_back) =
            smoother_row(dim, predictors, bandwidth, &queries[j * dim..(j + 1) * dim]);
        fallbacks += fell_back as usize;
        data.extend(row);
    }
    Ok((Matrix::new(q, n, data)?, fallbacks))
}

/// Mean squared leave-one-out error of the local linear fit. Removing a
/// sample from a kernel-weighted least-squares fit at its own location gives
/// `(y_i - ŷ_i) / (1 - L_ii)` as the held-out residual.
pub fn loo_error(dim: usize, predictors: &[f64], targets: &[f64], bandwidth: f64) -> Result<f64> {
    let (hat, _) = hat_matrix(dim, predictors, bandwidth, predictors)?;
    let fitted = hat.matvec(targets)?;
    let n = targets.len();
    let mut total = 0.0;
    for i in 0..n {
        let gap = 1.0 - hat.get(i, i);
        if gap.abs() < MIN_LEVERAGE_GAP {
            return Ok(f64::INFINITY);
        }
        total += ((targets[i] - fitted[i]) / gap).powi(2);
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthChoice {
    pub bandwidth: f64,
    /// `(h, leave-one-out error)` for every candidate, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Candidate with the smallest leave-one-out error; ties go to the larger bandwidth.
pub fn choose_bandwidth(
    dim: usize,
    predictors: &[f64],
    targets: &[f64],
    grid: &[f64],
) -> Result<BandwidthChoice> {
    if grid.is_empty() {
        return Err(Error::Empty("bandwidth grid".into()));
    }
    LocalLinearRegressor::new(dim, predictors.to_vec(), targets.to_vec(), grid[0])?;
    if let Some(h) = grid.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "bandwidth must be > 0, got {h}"
        )));
    }
    let scores: Vec<(f64, f64)> = grid
        .iter()
        .map(|&h| Ok((h, loo_error(dim, predictors, targets, h)?)))
        .collect::<Result<_>>()?;
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let spread = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / targets.len() as f64;
    let bandwidth = pick_min(&scores, spread);
    Ok(BandwidthChoice { bandwidth, scores })
}

/// Argmin over `(key, score)` preferring the larger key among ties. Scores
/// below `floor · 1e-12` are indistinguishable from zero.
fn pick_min(scores: &[(f64, f64)], floor: f64) -> f64 {
    let best = scores.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * best.max(floor * 1e-12);
    scores
        .iter()
        .filter(|s| s.1 <= best + tol || (best.is_infinite() && s.1.is_infinite()))
        .map(|s| s.0)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandweberConfig {
    pub c: f64,
    pub max_n: usize,
    /// Iterations to run; `max_n` when absent.
    #[serde(default)]
    pub chosen_n: Option<usize>,
}

impl Default for LandweberConfig {
    fn default() -> Self {
        Self {
            c: 0.5,
            max_n: 30,
            chosen_n: None,
        }
    }
}

impl LandweberConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "landweber c must lie in (0, 1), got {}",
                self.c
            )));
        }
        if self.max_n == 0 {
            return Err(Error::InvalidArgument(
                "landweber max_n must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.chosen_n.unwrap_or(self.max_n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandweberRun {
    pub phi: Vec<f64>,
    /// `‖T φ_i − r‖` for `i = 0..=N`.
    pub residuals: Vec<f64>,
}

/// `φ_0 = c T*(r)`, then `N` updates `φ ← φ + c T*(r − T φ)`.
pub fn landweber_fridman(
    r: &[f64],
    apply_t: impl Fn(&[f64]) -> Result<Vec<f64>>,
    apply_tstar: impl Fn(&[f64]) -> Result<Vec<f64>>,
    cfg: &LandweberConfig,
) -> Result<LandweberRun> {
    cfg.validate()?;
    let c = cfg.c;
    let mut phi: Vec<f64> = apply_tstar(r)?.into_iter().map(|v| c * v).collect();
    let mut residuals = Vec::with_capacity(cfg.iterations() + 1);
    for i in 0..=cfg.iterations() {
        let t_phi = apply_t(&phi)?;
        if t_phi.len() != r.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![r.len()],
                actual: vec![t_phi.len()],
            });
        }
        let gap: Vec<f64> = r.iter().zip(&t_phi).map(|(a, b)| a - b).collect();
        residuals.push(gap.iter().map(|v| v * v).sum::<f64>().sqrt());
        if i == cfg.iterations() {
            break;
        }
        let step = apply_tstar(&gap)?;
        for (p, s) in phi.iter_mut().zip(&step) {
            *p += c * s;
        }
        if let Some(bad) = phi.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "landweber iterate {} has a non-finite entry at index {bad}",
                i + 1
            )));
        }
    }
    Ok(LandweberRun { phi, residuals })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationChoice {
    pub chosen_n: usize,
    /// Leave-one-out error for `N = 1..=max_n`.
    pub errors: Vec<f64>,
}

/// Iteration count minimizing the leave-one-out error in predicting `y`.
///
/// With `r = R y`, the fit `T φ_N` is a linear smoother `M_N y` where
/// `φ_N = A_N y`, `A_0 = c T* R` and `A_{i+1} = A_i + c T*(R − T A_i)`. The
/// held-out residual is `(y_j − (M_N y)_j) / (1 − (M_N)_jj)`. Ties go to
/// the larger `N`.
pub fn choose_n_loocv(
    y: &[f64],
    r_hat: &Matrix,
    t: &Matrix,
    tstar: &Matrix,
    c: f64,
    max_n: usize,
) -> Result<IterationChoice> {
    LandweberConfig {
        c,
        max_n,
        chosen_n: None,
    }
    .validate()?;
    let n = y.len();
    for m in [r_hat, t, tstar] {
        if m.rows() != n || m.cols() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n, n],
                actual: vec![m.rows(), m.cols()],
            });
        }
    }
    let tstar_r = tstar.matmul(r_hat)?;
    let normal = tstar.matmul(t)?;
    let mut a = tstar_r.clone();
    a.data.iter_mut().for_each(|v| *v *= c);
    let mut errors = Vec::with_capacity(max_n);
    for _ in 1..=max_n {
        let sa = normal.matmul(&a)?;
        a.axpy(c, &tstar_r);
        a.axpy(-c, &sa);
        let phi = a.matvec(y)?;
        let fitted = t.matvec(&phi)?;
        let mut total = 0.0;
        for j in 0..n {
            let leverage: f64 = t
                .row(j)
                .iter()
                .enumerate()
                .map(|(l, v)| v * a.get(l, j))
                .sum();
            let gap = 1.0 - leverage;
            if gap.abs() < MIN_LEVERAGE_GAP {
                total = f64::INFINITY;
                break;
            }
            total += ((y[j] - fitted[j]) / gap).powi(2);
        }
        errors.push(total / n as f64);
    }
    let scored: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .map(|(i, e)| ((i + 1) as f64, *e))
        .collect();
    let spread = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
    Ok(IterationChoice {
        chosen_n: pick_min(&scored, spread) as usize,
        errors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct IvConfig {
    /// Number of instruments.
    pub k: usize,
    /// Candidate bandwidths. When absent, multiples of the predictor
    /// spread (root of the summed per-coordinate variances) are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_grid: Option<Vec<f64>>,
    pub max_n: usize,
    pub c: f64,
}

impl Default for IvConfig {
    fn default() -> Self {
        Self {
            k: 2,
            bandwidth_grid: None,
            max_n: 30,
            c: 0.5,
        }
    }
}

impl IvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("IV baseline needs k >= 1".into()));
        }
        if let Some(g) = &self.bandwidth_grid {
            if g.is_empty() || g.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                return Err(Error::InvalidArgument(format!(
                    "bandwidths must be positive and finite, got {g:?}"
                )));
            }
        }
        LandweberConfig {
            c: self.c,
            max_n: self.max_n,
            chosen_n: None,
        }
        .validate()
    }
}

/// Multipliers of the predictor spread tried when no grid is given.
pub const DEFAULT_BANDWIDTH_FACTORS: [f64; 10] =
    [0.03, 0.05, 0.08, 0.12, 0.2, 0.3, 0.5, 0.8, 1.2, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvReport {
    pub k: usize,
    pub bandwidth_t: BandwidthChoice,
    pub bandwidth_tstar: BandwidthChoice,
    pub iteration: IterationChoice,
    /// `‖T φ_i − r‖` for the chosen run.
    pub residuals: Vec<f64>,
    pub fallback_rows_t: usize,
    pub fallback_rows_tstar: usize,
}

/// Estimate `φ*` on the sample points `x` from observations `y` and instruments `w`.
///
/// The bandwidth of `T` (instruments as predictors) is chosen by
/// leave-one-out on the regression of `y` on `w`, which also yields
/// `r = T y`. The bandwidth of `T*` is chosen on the regression of `r` on `x`.
pub fn run_iv(x: &[f64], y: &[f64], w: &IvMatrix, cfg: &IvConfig) -> Result<(Vec<f64>, IvReport)> {
    let n = x.len();
    if y.len() != n || w.rows() != n {
        return Err(Error::ShapeMismatch {
            expected: vec![n],
            actual: vec![y.len(), w.rows()],
        });
    }
    if w.cols() != cfg.k {
        return Err(Error::InvalidArgument(format!(
            "config asks for {} instruments, matrix has {}",
            cfg.k,
            w.cols()
        )));
    }
    cfg.validate()?;

    let grid_for = |dim: usize, pts: &[f64]| -> Vec<f64> {
        if let Some(g) = &cfg.bandwidth_grid {
            return g.clone();
        }
        let rows = pts.len() / dim;
        let spread: f64 = (0..dim)
            .map(|d| {
                let mean = (0..rows).map(|i| pts[i * dim + d]).sum::<f64>() / rows as f64;
                (0..rows)
                    .map(|i| (pts[i * dim + d] - mean).powi(2))
                    .sum::<f64>()
                    / rows as f64
            })
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        DEFAULT_BANDWIDTH_FACTORS
            .iter()
            .map(|f| f * spread)
            .collect()
    };

    let k = cfg.k;
    let bandwidth_t = choose_bandwidth(k, w.entries(), y, &grid_for(k, w.entries()))?;
    let (t, fallback_rows_t) = hat_matrix(k, w.entries(), bandwidth_t.bandwidth, w.entries())?;
    let r = t.matvec(y)?;
    let bandwidth_tstar = choose_bandwidth(1, x, &r, &grid_for(1, x))?;
    let (tstar, fallback_rows_tstar) = hat_matrix(1, x, bandwidth_tstar.bandwidth, x)?;

    let iteration = choose_n_loocv(y, &t, &t, &tstar, cfg.c, cfg.max_n)?;
    let run = landweber_fridman(
        &r,
        |v| t.matvec(v),
        |v| tstar.matvec(v),
        &LandweberConfig {
            c: cfg.c,
            max_n: cfg.max_n,
            chosen_n: Some(iteration.chosen_n),
        },
    )?;
    Ok((
        run.phi,
        IvReport {
            k,
            bandwidth_t,
            bandwidth_tstar,
            iteration,
            residuals: run.residuals,
            fallback_rows_t,
            fallback_rows_tstar,
        },
    ))
}
