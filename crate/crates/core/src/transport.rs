//! 1-Wasserstein distances between scalar empirical distributions.
//!
//! Two routes are provided: the closed form for equal-size uniform atom sets
//! (mean absolute difference of sorted atoms) and an entropic solver working
//! on the dual potentials in the log domain. The entropic solver anneals the
//! regularization from the diameter of the support down to the target value;
//! at the default `ε = 1e-4` a direct kernel `exp(-C/ε)` would underflow for
//! any displacement larger than about 0.07.
//!
//! Conventions: with uniform weights `α`, `β` and ground cost
//! `C_ij = |a_i - b_j|`, the entropic cost is the dual value
//! `OT_ε = <α, f> + <β, g>` at the fixed point
//!
//! ```text
//! f_i = -ε log Σ_j β_j exp((g_j - C_ij) / ε)
//! g_j = -ε log Σ_i α_i exp((f_i - C_ij) / ε)
//! ```
//!
//! and the debiased divergence is `OT_ε(a,b) - ½ OT_ε(a,a) - ½ OT_ε(b,b)`.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::EmpiricalDistribution;

/// Plan entries with log-weight below `-HESSIAN_CUTOFF` are left out of the
/// Newton system (they stay in every transform).
const HESSIAN_CUTOFF: f64 = 40.0;

/// Marginal tolerance for the intermediate annealing levels, which only
/// provide a warm start for the next one.
const WARM_TOL: f64 = 1e-3;

/// Alternating sweeps continue while each one shrinks the violation at
/// least by this factor; slower progress switches the level to Newton steps.
const SWEEP_RATE: f64 = 0.95;

/// The Newton system is stored densely; larger problems only sweep.
const NEWTON_MAX_ATOMS: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    /// Iteration cap per annealing level.
    pub max_iters: usize,
    /// L1 marginal violation at which a level stops.
    pub tol: f64,
    /// Number of geometric annealing levels, the last one at `epsilon`.
    pub eps_scaling_steps: usize,
    pub debiased: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iters: 10_000,
            tol: 1e-9,
            eps_scaling_steps: 16,
            debiased: true,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sinkhorn epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sinkhorn tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_iters == 0 || self.eps_scaling_steps == 0 {
            return Err(Error::InvalidArgument(
                "sinkhorn needs max_iters >= 1 and eps_scaling_steps >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Geometric schedule from `start` (clamped to at least `epsilon`) down to `epsilon`.
    pub fn schedule(&self, start: f64) -> Vec<f64> {
        let start = start.max(self.epsilon);
        let steps = self.eps_scaling_steps;
        if steps == 1 || start == self.epsilon {
            return vec![self.epsilon];
        }
        let ratio = (self.epsilon / start).ln();
        (0..steps)
            .map(|k| {
                if k + 1 == steps {
                    self.epsilon
                } else {
                    start * (ratio * k as f64 / (steps - 1) as f64).exp()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    pub cost: f64,
    pub potential_f: Vec<f64>,
    pub potential_g: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// L1 marginal violation at the final level (largest over the
    /// sub-problems when debiased).
    pub marginal_violation: f64,
}

/// Closed-form W1 between two uniform atom sets of equal size.
pub fn exact_w1_1d(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<f64> {
    check_equal_counts(a, b)?;
    let sa = a.sorted_atoms();
    let sb = b.sorted_atoms();
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64)
}

/// Subgradient of [`exact_w1_1d`] with respect to the atoms of `a`:
/// `(1/n)·sign(a_(k) - b_(k))` routed back through the sort permutation.
pub fn exact_w1_grad_1d(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<Vec<f64>> {
    check_equal_counts(a, b)?;
    let n = a.len();
    let order = argsort(a.atoms());
    let sb = b.sorted_atoms();
    let mut grad = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        let d = a.atoms()[i] - sb[rank];
        grad[i] = sign(d) / n as f64;
    }
    Ok(grad)
}

/// Exact W1 together with its subgradient.
pub fn exact_w1_with_grad(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
) -> Result<(f64, Vec<f64>)> {
    check_equal_counts(a, b)?;
    let n = a.len();
    let order = argsort(a.atoms());
    let sb = b.sorted_atoms();
    let mut grad = vec![0.0; n];
    let mut cost = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let d = a.atoms()[i] - sb[rank];
        cost += d.abs();
        grad[i] = sign(d) / n as f64;
    }
    Ok((cost / n as f64, grad))
}

fn check_equal_counts(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "exact 1D W1 needs equal atom counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
    idx
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Entropic W1 between `a` and `b` (debiased unless disabled in `cfg`).
pub fn sinkhorn_w1(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    cfg: &SinkhornConfig,
) -> Result<TransportResult> {
    Ok(solve(a, b, cfg, false)?.0)
}

/// Gradient of [`sinkhorn_w1`] with respect to the atoms of `a`.
pub fn w1_grad_atoms(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    cfg: &SinkhornConfig,
) -> Result<Vec<f64>> {
    let (res, grad) = sinkhorn_with_grad(a, b, cfg)?;
    if !res.converged {
        return Err(Error::NotConverged {
            iterations: res.iterations_used,
            violation: res.marginal_violation,
        });
    }
    Ok(grad)
}

/// Cost and gradient in one solve. Unlike [`w1_grad_atoms`] this does not
/// fail on non-convergence; check `converged`.
pub fn sinkhorn_with_grad(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    cfg: &SinkhornConfig,
) -> Result<(TransportResult, Vec<f64>)> {
    let (res, grad) = solve(a, b, cfg, true)?;
    Ok((res, grad.expect("gradient requested")))
}

/// Cost after each annealing level, as `(ε, cost)` pairs.
pub fn annealing_trace(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    cfg: &SinkhornConfig,
) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    let schedule = cfg.schedule(diameter(a.atoms(), b.atoms()));
    let mut ab = Dual::new(a.atoms(), b.atoms());
    let mut aa = Dual::new(a.atoms(), a.atoms());
    let mut bb = Dual::new(b.atoms(), b.atoms());
    let mut out = Vec::with_capacity(schedule.len());
    for &eps in &schedule {
        let level_tol = cfg.tol;
        ab.run_level(eps, level_tol, cfg.max_iters);
        let mut cost = ab.cost();
        if cfg.debiased {
            aa.run_level(eps, level_tol, cfg.max_iters);
            bb.run_level(eps, level_tol, cfg.max_iters);
            cost -= 0.5 * (aa.cost() + bb.cost());
        }
        out.push((eps, cost));
    }
    Ok(out)
}

fn diameter(x: &[f64], y: &[f64]) -> f64 {
    let lo = x.iter().chain(y).cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().chain(y).cloned().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Canonical argument order so that swapping inputs yields bit-identical costs.
fn canonical_first(a: &[f64], b: &[f64]) -> bool {
    if a.len() != b.len() {
        return a.len() < b.len();
    }
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    true
}

fn solve(
    a: &EmpiricalDistribution,
    b: &EmpiricalDistribution,
    cfg: &SinkhornConfig,
    want_grad: bool,
) -> Result<(TransportResult, Option<Vec<f64>>)> {
    cfg.validate()?;
    let swapped = !canonical_first(a.atoms(), b.atoms());
    let (x, y) = if swapped {
        (b.atoms(), a.atoms())
    } else {
        (a.atoms(), b.atoms())
    };
    let schedule = cfg.schedule(diameter(x, y));

    let mut cross = Dual::new(x, y);
    let mut status = cross.anneal(&schedule, cfg);
    let mut cost = cross.cost();

    let mut grad = None;
    if want_grad {
        grad = Some(if swapped {
            cross.grad_second(cfg.epsilon)
        } else {
            cross.grad_first(cfg.epsilon)
        });
    }

    if cfg.debiased {
        // Self terms: only the one belonging to `a` carries a gradient.
        let mut self_a = Dual::new(a.atoms(), a.atoms());
        status = status.merge(self_a.anneal(&schedule, cfg));
        let mut self_b = Dual::new(b.atoms(), b.atoms());
        status = status.merge(self_b.anneal(&schedule, cfg));
        cost -= 0.5 * (self_a.cost() + self_b.cost());
        if let Some(g) = grad.as_mut() {
            // d/da of ½ OT(a,a) equals the one-sided gradient of the symmetric problem.
            for (gi, si) in g.iter_mut().zip(self_a.grad_first(cfg.epsilon)) {
                *gi -= si;
            }
        }
    }

    let (potential_f, potential_g) = if swapped {
        (cross.potential_y(), cross.potential_x())
    } else {
        (cross.potential_x(), cross.potential_y())
    };
    Ok((
        TransportResult {
            cost,
            potential_f,
            potential_g,
            iterations_used: status.iterations,
            converged: status.converged,
            marginal_violation: status.violation,
        },
        grad,
    ))
}

#[derive(Debug, Clone, Copy)]
struct Status {
    iterations: usize,
    converged: bool,
    violation: f64,
}

impl Status {
    fn merge(self, other: Status) -> Status {
        Status {
            iterations: self.iterations + other.iterations,
            converged: self.converged && other.converged,
            violation: self.violation.max(other.violation),
        }
    }
}

/// A point set sorted ascending, remembering where each atom came from.
struct Sorted {
    values: Vec<f64>,
    order: Vec<usize>,
}

impl Sorted {
    fn new(v: &[f64]) -> Self {
        let order = argsort(v);
        Self {
            values: order.iter().map(|&i| v[i]).collect(),
            order,
        }
    }

    /// Scatter a vector indexed by sorted position back to input order.
    fn unsort(&self, sorted: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; sorted.len()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = sorted[k];
        }
        out
    }
}

/// Dual potentials of one entropic problem between uniform atom sets, kept
/// in sorted atom order.
///
/// Sorting lets every soft c-transform run in O(n + m), see [`side_sums`].
struct Dual {
    x: Sorted,
    y: Sorted,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl Dual {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let (x, y) = (Sorted::new(x), Sorted::new(y));
        let (n, m) = (x.values.len(), y.values.len());
        Self {
            x,
            y,
            f: vec![0.0; n],
            g: vec![0.0; m],
        }
    }

    fn anneal(&mut self, schedule: &[f64], cfg: &SinkhornConfig) -> Status {
        let mut status = Status {
            iterations: 0,
            converged: false,
            violation: f64::INFINITY,
        };
        for (k, &eps) in schedule.iter().enumerate() {
            let last = k + 1 == schedule.len();
            let tol = if last { cfg.tol } else { cfg.tol.max(WARM_TOL) };
            let level = self.run_level(eps, tol, cfg.max_iters);
            status.iterations += level.iterations;
            if last {
                status.converged = level.converged;
                status.violation = level.violation;
            }
        }
        status
    }

    /// Solve one level at fixed `eps` until the L1 marginal violation of the
    /// plan is within `tol`. Starts with alternating exact updates; when those
    /// stall, switches to Newton steps on `g`. On exit `f` is the exact
    /// transform of `g`, so row marginals hold to rounding and the violation
    /// is measured on the columns.
    fn run_level(&mut self, eps: f64, tol: f64, max_iters: usize) -> Status {
        let log_alpha = -(self.x.values.len() as f64).ln();
        let log_beta = -(self.y.values.len() as f64).ln();
        self.f = soft_transform(&self.x.values, &self.y.values, &self.g, log_beta, eps);
        let mut violation = self.column_violation(eps);
        let mut it = 0;
        let mut newton = false;
        while it < max_iters && violation > tol {
            if newton {
                violation = self.newton_step(eps, violation);
            } else {
                self.g = soft_transform(&self.y.values, &self.x.values, &self.f, log_alpha, eps);
                self.f = soft_transform(&self.x.values, &self.y.values, &self.g, log_beta, eps);
                let v = self.column_violation(eps);
                newton = v > SWEEP_RATE * violation && self.y.values.len() <= NEWTON_MAX_ATOMS;
                violation = v;
            }
            it += 1;
        }
        Status {
            iterations: it,
            converged: violation <= tol,
            violation,
        }
    }

    /// `Σ_j |(πᵀ1)_j - β_j|` for the plan with rows normalized by `f`.
    fn column_violation(&self, eps: f64) -> f64 {
        let beta = 1.0 / self.y.values.len() as f64;
        let log_alpha = -(self.x.values.len() as f64).ln();
        let g_hat = soft_transform(&self.y.values, &self.x.values, &self.f, log_alpha, eps);
        self.g
            .iter()
            .zip(&g_hat)
            .map(|(g, h)| beta * (((g - h) / eps).exp() - 1.0).abs())
            .sum()
    }

    /// One damped Newton step on the concave semi-dual
    /// `J(g) = <α, T(g)> + <β, g>`, whose Hessian is `-(diag(πᵀ1) - πᵀ diag(1/α) π)/ε`.
    /// The plan is banded in sorted order, so the system is factored inside
    /// its envelope. Falls back to an alternating update when no step length
    /// reduces the violation. Returns the new violation.
    fn newton_step(&mut self, eps: f64, violation: f64) -> f64 {
        let (n, m) = (self.x.values.len(), self.y.values.len());
        let (alpha, beta) = (1.0 / n as f64, 1.0 / m as f64);
        let log_alpha = alpha.ln();
        let log_beta = beta.ln();

        // Plan rows as (first column, weights), each row summing to α.
        // Entries below the cutoff are left out of the Hessian only.
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(n);
        let mut z = vec![0.0; m];
        for (i, &s) in self.x.values.iter().enumerate() {
            for j in 0..m {
                z[j] = (self.f[i] + self.g[j] - (s - self.y.values[j]).abs()) / eps + log_beta;
            }
            let lo = z.iter().position(|&v| v > -HESSIAN_CUTOFF).unwrap_or(0);
            let hi = z.iter().rposition(|&v| v > -HESSIAN_CUTOFF).unwrap_or(lo);
            let w: Vec<f64> = z[lo..=hi].iter().map(|v| alpha * v.exp()).collect();
            rows.push((lo, w));
        }

        let mut col = vec![0.0; m];
        let mut first: Vec<usize> = (0..m).collect();
        let mut hess = vec![0.0; m * m];
        for (lo, w) in &rows {
            for (a, &wa) in w.iter().enumerate() {
                let ja = lo + a;
                col[ja] += wa;
                first[ja] = first[ja].min(*lo);
                for (b, &wb) in w.iter().enumerate().take(a + 1) {
                    hess[ja * m + lo + b] -= wa * wb / alpha;
                }
            }
        }
        for j in 0..m {
            hess[j * m + j] += col[j];
        }
        let rhs: Vec<f64> = col.iter().map(|c| eps * (beta - c)).collect();
        let step = envelope_solve(&mut hess, &first, m, rhs);

        // Potentials never need to move further than the support diameter.
        let span = diameter(&self.x.values, &self.y.values).max(eps);
        let largest = step.iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
        let current = self.g.clone();
        let mut t = if largest > span { span / largest } else { 1.0 };
        for _ in 0..30 {
            self.g = current.iter().zip(&step).map(|(g, d)| g + t * d).collect();
            self.f = soft_transform(&self.x.values, &self.y.values, &self.g, log_beta, eps);
            let v = self.column_violation(eps);
            if v < violation && self.f.iter().chain(&self.g).all(|p| p.is_finite()) {
                return v;
            }
            t *= 0.5;
        }
        self.g = current;
        self.f = soft_transform(&self.x.values, &self.y.values, &self.g, log_beta, eps);
        self.g = soft_transform(&self.y.values, &self.x.values, &self.f, log_alpha, eps);
        self.f = soft_transform(&self.x.values, &self.y.values, &self.g, log_beta, eps);
        self.column_violation(eps)
    }

    fn cost(&self) -> f64 {
        mean(&self.f) + mean(&self.g)
    }

    fn potential_x(&self) -> Vec<f64> {
        self.x.unsort(&self.f)
    }

    fn potential_y(&self) -> Vec<f64> {
        self.y.unsort(&self.g)
    }

    /// `Σ_j π_ij sign(x_i - y_j)` with each row of the plan normalized to `α_i`.
    fn grad_first(&self, eps: f64) -> Vec<f64> {
        let sorted = plan_gradient(&self.x.values, &self.y.values, &self.g, eps);
        self.x.unsort(&sorted)
    }

    fn grad_second(&self, eps: f64) -> Vec<f64> {
        let sorted = plan_gradient(&self.y.values, &self.x.values, &self.f, eps);
        self.y.unsort(&sorted)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `log(exp(a) + exp(b))` without overflow.
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-sum-exp of the terms `(pot_j - |s - d_j|)/ε` for each sorted source
/// point `s`, split into targets left of `s` (`d_j < s`), level with it, and
/// right of it. On the left `|s - d_j| = s - d_j`, so the sum factors into
/// `exp(-s/ε)` times a prefix sum over `(pot_j + d_j)/ε`; the right side is
/// a suffix sum in the same way. Exact, O(n + m), and stable for any `ε`.
fn side_sums(src: &[f64], dst: &[f64], pot: &[f64], eps: f64) -> Vec<[f64; 3]> {
    let m = dst.len();
    let mut prefix = vec![f64::NEG_INFINITY; m + 1];
    for j in 0..m {
        prefix[j + 1] = log_add_exp(prefix[j], (pot[j] + dst[j]) / eps);
    }
    let mut suffix = vec![f64::NEG_INFINITY; m + 1];
    for j in (0..m).rev() {
        suffix[j] = log_add_exp(suffix[j + 1], (pot[j] - dst[j]) / eps);
    }
    let (mut lo, mut hi) = (0, 0);
    src.iter()
        .map(|&s| {
            while lo < m && dst[lo] < s {
                lo += 1;
            }
            hi = hi.max(lo);
            while hi < m && dst[hi] <= s {
                hi += 1;
            }
            let level = (lo..hi).fold(f64::NEG_INFINITY, |acc, j| log_add_exp(acc, pot[j] / eps));
            [prefix[lo] - s / eps, level, suffix[hi] + s / eps]
        })
        .collect()
}

/// Soft c-transform `out_i = -ε log Σ_j exp(log_w + (pot_j - |src_i - dst_j|)/ε)`
/// for sorted `src` and `dst`.
fn soft_transform(src: &[f64], dst: &[f64], pot: &[f64], log_w: f64, eps: f64) -> Vec<f64> {
    side_sums(src, dst, pot, eps)
        .into_iter()
        .map(|[l, e, r]| -eps * (log_add_exp(log_add_exp(l, e), r) + log_w))
        .collect()
}

/// `Σ_j π_ij sign(src_i - dst_j)` for the plan whose rows are normalized to
/// `1/n` against `pot`.
fn plan_gradient(src: &[f64], dst: &[f64], pot: &[f64], eps: f64) -> Vec<f64> {
    let n = src.len() as f64;
    side_sums(src, dst, pot, eps)
        .into_iter()
        .map(|[l, e, r]| {
            let total = log_add_exp(log_add_exp(l, e), r);
            ((l - total).exp() - (r - total).exp()) / n
        })
        .collect()
}

/// Solve `S δ = rhs` for symmetric positive semidefinite `S` (row-major,
/// lower triangle used) whose row `j` is zero left of `first[j]`. The last
/// coordinate and any coordinate with a vanishing pivot are pinned to zero,
/// which fixes the constant shift `S` annihilates.
fn envelope_solve(s: &mut [f64], first: &[usize], m: usize, mut rhs: Vec<f64>) -> Vec<f64> {
    let mut pinned = vec![false; m];
    if m > 0 {
        pinned[m - 1] = true;
    }
    for j in 0..m {
        let diag = s[j * m + j];
        for k in first[j]..j {
            if pinned[k] {
                s[j * m + k] = 0.0;
                continue;
            }
            let lo = first[j].max(first[k]);
            let dot: f64 = (lo..k).map(|l| s[j * m + l] * s[k * m + l]).sum();
            s[j * m + k] = (s[j * m + k] - dot) / s[k * m + k];
        }
        if pinned[j] {
            s[j * m + j] = 1.0;
            continue;
        }
        let pivot = diag - (first[j]..j).map(|l| s[j * m + l].powi(2)).sum::<f64>();
        if pivot <= 1e-12 * diag.abs() || !pivot.is_finite() {
            pinned[j] = true;
            s[j * m + j] = 1.0;
        } else {
            s[j * m + j] = pivot.sqrt();
        }
    }
    for j in 0..m {
        if pinned[j] {
            rhs[j] = 0.0;
            continue;
        }
        let dot: f64 = (first[j]..j).map(|l| s[j * m + l] * rhs[l]).sum();
        rhs[j] = (rhs[j] - dot) / s[j * m + j];
    }
    for j in (0..m).rev() {
        if pinned[j] {
            rhs[j] = 0.0;
            continue;
        }
        rhs[j] /= s[j * m + j];
        let v = rhs[j];
        for l in first[j]..j {
            rhs[l] -= s[j * m + l] * v;
        }
    }
    rhs
}
