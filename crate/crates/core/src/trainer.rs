//! Weakly supervised training of the refinement network.
//!
//! The objective is `Σ_{i∈L} (φ*_i − φ̂_i)² + λ·W1(target, φ̂)` where `L` is a
//! small labeled subset of the grid and `target` is the empirical
//! distribution of the fair score. Optimization is full batch: the whole
//! smoothed signal goes through the network once per epoch.

use std::fmt::Write as _;
use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, AdamConfig, AdamState, NetworkSpec, ParamStore, Tensor};
use crate::numerics::{error_norm, mse, EmpiricalDistribution, Field, SeededRng};
use crate::smoothing::{smooth, SmootherSpec};
use crate::transport::{exact_w1_with_grad, sinkhorn_with_grad, SinkhornConfig};

/// RNG stream for parameter initialization.
const INIT_STREAM: u64 = 0;
/// RNG stream for the labeled subset.
const LABEL_STREAM: u64 = 1;

/// Supervised error below which a specialist counts as fitting the labels.
/// Default weight-scale multiplier. Full He scaling lets the convolutional
/// network reach the target histogram through a scrambled arrangement of
/// values; a tenth of it keeps the early output smooth in the input.
pub const DEFAULT_INIT_GAIN: f64 = 0.1;
pub const LABEL_FIT_THRESHOLD: f64 = 1e-6;
/// W1 below which a specialist counts as matching the target distribution.
pub const DISTRIBUTION_FIT_THRESHOLD: f64 = 1e-4;

/// How the W1 term and its gradient are computed during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum W1Backend {
    /// Sorted matching; exact for the equal-size atom sets used here.
    #[default]
    Exact,
    /// Annealed entropic solver.
    Sinkhorn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub labeled_fraction: f64,
    pub seed: u64,
    /// Multiplier on the He-uniform weight bound at initialization.
    pub init_gain: f64,
    pub w1_backend: W1Backend,
    pub sinkhorn: SinkhornConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epochs: 300,
            labeled_fraction: 0.0,
            seed: 0,
            init_gain: DEFAULT_INIT_GAIN,
            w1_backend: W1Backend::Exact,
            sinkhorn: SinkhornConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            return Err(Error::InvalidArgument(format!(
                "labeled fraction must lie in [0, 1], got {}",
                self.labeled_fraction
            )));
        }
        if !(self.init_gain > 0.0 && self.init_gain.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "init gain must be positive, got {}",
                self.init_gain
            )));
        }
        self.sinkhorn.validate()?;
        self.adam.validate()
    }
}

/// Sorted, distinct indices into the flattened grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSet {
    indices: Vec<usize>,
}

impl LabeledSet {
    pub fn new(mut indices: Vec<usize>, total: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(
                "labeled indices must be distinct".into(),
            ));
        }
        if let Some(&last) = indices.last() {
            if last >= total {
                return Err(Error::InvalidArgument(format!(
                    "labeled index {last} out of range for {total} points"
                )));
            }
        }
        Ok(Self { indices })
    }

    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Number of labeled points for `fraction` of `total`, guarding against
/// products like `0.29 · 100` landing just below an integer.
pub fn labeled_count(total: usize, fraction: f64) -> usize {
    ((fraction * total as f64 + 1e-9).floor() as usize).min(total)
}

/// Uniform sample without replacement of `⌊fraction·total⌋` indices.
pub fn select_labeled(total: usize, fraction: f64, rng: &mut SeededRng) -> Result<LabeledSet> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "labeled fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let amount = labeled_count(total, fraction);
    LabeledSet::new(rng.sample_indices(total, amount), total)
}

/// Target distribution built from the multiset of fair-score values only.
pub fn target_distribution(phi_star: &Field) -> Result<EmpiricalDistribution> {
    let mut atoms = phi_star.values().to_vec();
    atoms.sort_by(f64::total_cmp);
    EmpiricalDistribution::new(atoms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub supervised: f64,
    pub wasserstein: f64,
}

/// W1 between the predicted atoms and `target`, with the gradient in the atoms.
pub fn w1_term(
    predicted: &[f64],
    target: &EmpiricalDistribution,
    backend: W1Backend,
    sinkhorn: &SinkhornConfig,
) -> Result<(f64, Vec<f64>)> {
    let pred = EmpiricalDistribution::new(predicted.to_vec())?;
    match backend {
        W1Backend::Exact => exact_w1_with_grad(&pred, target),
        W1Backend::Sinkhorn => {
            let (res, grad) = sinkhorn_with_grad(&pred, target, sinkhorn)?;
            if !res.converged {
                return Err(Error::NotConverged {
                    iterations: res.iterations_used,
                    violation: res.marginal_violation,
                });
            }
            Ok((res.cost, grad))
        }
    }
}

/// Objective value and its gradient with respect to `phi_hat`.
fn loss_and_grad(
    phi_hat: &[f64],
    phi_star: &[f64],
    labeled: &LabeledSet,
    target: &EmpiricalDistribution,
    lambda: f64,
    backend: W1Backend,
    sinkhorn: &SinkhornConfig,
) -> Result<(LossParts, Vec<f64>)> {
    let mut grad = vec![0.0; phi_hat.len()];
    let mut supervised = 0.0;
    for &i in labeled.indices() {
        let d = phi_hat[i] - phi_star[i];
        supervised += d * d;
        grad[i] = 2.0 * d;
    }
    let (wasserstein, w1_grad) = if lambda > 0.0 {
        w1_term(phi_hat, target, backend, sinkhorn)?
    } else {
        // Reported for diagnostics only.
        (
            w1_term(phi_hat, target, W1Backend::Exact, sinkhorn)?.0,
            Vec::new(),
        )
    };
    for (g, w) in grad.iter_mut().zip(&w1_grad) {
        *g += lambda * w;
    }
    Ok((
        LossParts {
            total: supervised + lambda * wasserstein,
            supervised,
            wasserstein,
        },
        grad,
    ))
}

/// `Σ_{i∈L} (φ*_i − φ̂_i)² + λ·W1(target, φ̂)`.
pub fn combined_loss(
    phi_hat: &Field,
    phi_star: &Field,
    labeled: &LabeledSet,
    target: &EmpiricalDistribution,
    lambda: f64,
    backend: W1Backend,
    sinkhorn: &SinkhornConfig,
) -> Result<LossParts> {
    check_fields(phi_hat, phi_star)?;
    check_labels(labeled, phi_hat.len())?;
    let mut supervised = 0.0;
    for &i in labeled.indices() {
        supervised += (phi_hat.values()[i] - phi_star.values()[i]).powi(2);
    }
    let wasserstein = w1_term(phi_hat.values(), target, backend, sinkhorn)?.0;
    Ok(LossParts {
        total: supervised + lambda * wasserstein,
        supervised,
        wasserstein,
    })
}

fn check_fields(a: &Field, b: &Field) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch(format!(
            "{:?} vs {:?}",
            a.grid(),
            b.grid()
        )));
    }
    Ok(())
}

fn check_labels(labeled: &LabeledSet, total: usize) -> Result<()> {
    match labeled.indices().last() {
        Some(&last) if last >= total => Err(Error::InvalidArgument(format!(
            "labeled index {last} out of range for {total} points"
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub combined: f64,
    pub wasserstein: f64,
    pub supervised: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<usize>,
}

/// Per-epoch losses, evaluated at the parameters entering each epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub lambda: f64,
    pub records: Vec<LossRecord>,
    /// Epochs at which a new phase starts (time-varying runs only).
    #[serde(default)]
    pub boundaries: Vec<usize>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }

    pub fn combined(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.combined).collect()
    }

    pub fn to_csv(&self) -> String {
        let phased = self.records.iter().any(|r| r.phase.is_some());
        let mut out = String::from(if phased {
            "epoch,combined,wasserstein,supervised,phase\n"
        } else {
            "epoch,combined,wasserstein,supervised\n"
        });
        for r in &self.records {
            let _ = write!(
                out,
                "{},{:.16e},{:.16e},{:.16e}",
                r.epoch, r.combined, r.wasserstein, r.supervised
            );
            if phased {
                let _ = write!(out, ",{}", r.phase.unwrap_or(0));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Training stopped because the loss or the parameters became non-finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub epoch: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final parameters, or the last finite ones after a divergence.
    pub params: ParamStore,
    pub trace: LossTrace,
    pub labeled: LabeledSet,
    /// Smoothed observation fed to the network.
    pub initial_estimate: Field,
    /// Network output at `params`.
    pub estimate: Field,
    pub divergence: Option<Divergence>,
}

impl TrainOutcome {
    /// Error unless training ran to completion.
    pub fn completed(self) -> Result<Self> {
        match &self.divergence {
            None => Ok(self),
            Some(d) => Err(Error::Numerical(format!(
                "training diverged at epoch {}: {}",
                d.epoch, d.message
            ))),
        }
    }
}

/// One stretch of training against a fixed observation and fair score.
#[derive(Debug, Clone)]
pub struct PhaseData {
    pub y: Field,
    pub phi_star: Field,
    pub epochs: usize,
}

/// Train `net` on the smoothed observation `y`. `phi_star` is read only at
/// the labeled indices and, as an unordered multiset, to build the target.
pub fn train(
    y: &Field,
    smoother: &SmootherSpec,
    phi_star: &Field,
    net: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let labeled = select_labeled(
        y.len(),
        cfg.labeled_fraction,
        &mut SeededRng::with_stream(cfg.seed, LABEL_STREAM),
    )?;
    let params = network::init_params_scaled(
        net,
        &mut SeededRng::with_stream(cfg.seed, INIT_STREAM),
        cfg.init_gain,
    )?;
    train_from(
        &[PhaseData {
            y: y.clone(),
            phi_star: phi_star.clone(),
            epochs: cfg.epochs,
        }],
        smoother,
        net,
        cfg,
        labeled,
        params,
    )
}

/// Train through consecutive phases with one parameter state. The labeled
/// indices stay fixed; their values and the target distribution switch with
/// each phase. `cfg.epochs` is ignored in favour of the per-phase counts.
pub fn train_time_varying(
    phases: &[PhaseData],
    smoother: &SmootherSpec,
    net: &NetworkSpec,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let first = phases
        .first()
        .ok_or_else(|| Error::Empty("time-varying training needs a phase".into()))?;
    let labeled = select_labeled(
        first.y.len(),
        cfg.labeled_fraction,
        &mut SeededRng::with_stream(cfg.seed, LABEL_STREAM),
    )?;
    let params = network::init_params_scaled(
        net,
        &mut SeededRng::with_stream(cfg.seed, INIT_STREAM),
        cfg.init_gain,
    )?;
    train_from(phases, smoother, net, cfg, labeled, params)
}

/// Training loop from given parameters and labeled set.
pub fn train_from(
    phases: &[PhaseData],
    smoother: &SmootherSpec,
    net: &NetworkSpec,
    cfg: &TrainConfig,
    labeled: LabeledSet,
    mut params: ParamStore,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.check_layout(net)?;
    if phases.is_empty() {
        return Err(Error::Empty("training needs a phase".into()));
    }
    let out_shape = net.output_shape()?;
    struct Prepared {
        input: Tensor,
        initial: Field,
        phi_star: Field,
        target: EmpiricalDistribution,
        epochs: usize,
    }
    let mut prepared = Vec::with_capacity(phases.len());
    for p in phases {
        check_fields(&p.y, &p.phi_star)?;
        check_fields(&p.y, &phases[0].y)?;
        if p.y.grid().shape() != net.input_shape || out_shape != net.input_shape {
            return Err(Error::ShapeMismatch {
                expected: net.input_shape.clone(),
                actual: p.y.grid().shape(),
            });
        }
        let initial = smooth(&p.y, smoother)?;
        prepared.push(Prepared {
            input: Tensor::new(net.input_shape.clone(), initial.values().to_vec())?,
            initial,
            phi_star: p.phi_star.clone(),
            target: target_distribution(&p.phi_star)?,
            epochs: p.epochs,
        });
    }
    check_labels(&labeled, phases[0].y.len())?;

    let mut adam = AdamState::new(cfg.adam, &params)?;
    let mut trace = LossTrace {
        lambda: cfg.lambda,
        ..LossTrace::default()
    };
    let phased = phases.len() > 1;
    let mut epoch = 0;
    let mut divergence = None;
    'phases: for (phase_index, phase) in prepared.iter().enumerate() {
        if phase_index > 0 {
            trace.boundaries.push(epoch);
        }
        for _ in 0..phase.epochs {
            let tape = network::forward_tape(net, &params, &phase.input)?;
            if tape.output().data().iter().any(|v| !v.is_finite()) {
                divergence = Some(Divergence {
                    epoch: epoch + 1,
                    message: "non-finite network output".into(),
                });
                break 'phases;
            }
            let (parts, grad) = loss_and_grad(
                tape.output().data(),
                phase.phi_star.values(),
                &labeled,
                &phase.target,
                cfg.lambda,
                cfg.w1_backend,
                &cfg.sinkhorn,
            )?;
            epoch += 1;
            if !parts.total.is_finite() {
                divergence = Some(Divergence {
                    epoch,
                    message: format!("non-finite loss {}", parts.total),
                });
                break 'phases;
            }
            trace.records.push(LossRecord {
                epoch,
                combined: parts.total,
                wasserstein: parts.wasserstein,
                supervised: parts.supervised,
                phase: phased.then_some(phase_index),
            });
            let (grads, _) = network::backward_tape(
                net,
                &params,
                &tape,
                &Tensor::new(out_shape.clone(), grad)?,
            )?;
            let previous = params.clone();
            adam.step(&mut params, &grads)?;
            if !params.is_finite() {
                params = previous;
                divergence = Some(Divergence {
                    epoch,
                    message: "non-finite parameters after update".into(),
                });
                break 'phases;
            }
        }
    }

    let last = prepared.last().expect("non-empty");
    let output = network::forward(net, &params, &last.input)?;
    Ok(TrainOutcome {
        estimate: last.initial.with_values(output.into_data())?,
        initial_estimate: last.initial.clone(),
        params,
        trace,
        labeled,
        divergence,
    })
}

/// Network output for the smoothed version of `y`.
pub fn predict(
    y: &Field,
    smoother: &SmootherSpec,
    net: &NetworkSpec,
    params: &ParamStore,
) -> Result<Field> {
    let initial = smooth(y, smoother)?;
    let out = network::forward(
        net,
        params,
        &Tensor::new(net.input_shape.clone(), initial.values().to_vec())?,
    )?;
    initial.with_values(out.into_data())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub error_norm: f64,
    /// Exact W1 between the estimate and the fair-score distribution.
    pub w1: f64,
}

pub fn metrics(estimate: &Field, phi_star: &Field) -> Result<Metrics> {
    let w1 = w1_term(
        estimate.values(),
        &target_distribution(phi_star)?,
        W1Backend::Exact,
        &SinkhornConfig::default(),
    )?
    .0;
    Ok(Metrics {
        mse: mse(estimate, phi_star)?,
        error_norm: error_norm(estimate, phi_star)?,
        w1,
    })
}

/// Which restricted minimizer a specialist stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialistKind {
    /// Reproduces the labeled values.
    LabelFit,
    /// Reproduces the target distribution.
    DistributionFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub kind: SpecialistKind,
    pub lhs: f64,
    pub rhs: f64,
    /// The specialist's own residual on the term it is meant to zero.
    pub specialist_fit: f64,
    /// `None` when the specialist misses its membership threshold.
    pub satisfied: Option<bool>,
}

/// Checks the bound relating the minimizer `θ*` of the combined loss to a
/// specialist that zeroes one of the two terms:
///
/// - label fit: `supervised(θ*) ≤ λ·W1(specialist)`
/// - distribution fit: `W1(θ*) ≤ supervised(specialist) / λ`
///
/// each up to a relative `slack` of the right-hand side.
#[allow(clippy::too_many_arguments)]
pub fn theorem_gap_probe(
    input: &Field,
    net: &NetworkSpec,
    params_star: &ParamStore,
    specialist: &ParamStore,
    kind: SpecialistKind,
    phi_star: &Field,
    labeled: &LabeledSet,
    lambda: f64,
    slack: f64,
) -> Result<ProbeReport> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "probe needs lambda > 0, got {lambda}"
        )));
    }
    let target = target_distribution(phi_star)?;
    let tensor = Tensor::new(net.input_shape.clone(), input.values().to_vec())?;
    let eval = |p: &ParamStore| -> Result<LossParts> {
        let out = input.with_values(network::forward(net, p, &tensor)?.into_data())?;
        combined_loss(
            &out,
            phi_star,
            labeled,
            &target,
            lambda,
            W1Backend::Exact,
            &SinkhornConfig::default(),
        )
    };
    let star = eval(params_star)?;
    let spec = eval(specialist)?;
    let (lhs, rhs, fit, threshold) = match kind {
        SpecialistKind::LabelFit => (
            star.supervised,
            lambda * spec.wasserstein,
            spec.supervised,
            LABEL_FIT_THRESHOLD,
        ),
        SpecialistKind::DistributionFit => (
            star.wasserstein,
            spec.supervised / lambda,
            spec.wasserstein,
            DISTRIBUTION_FIT_THRESHOLD,
        ),
    };
    Ok(ProbeReport {
        kind,
        lhs,
        rhs,
        specialist_fit: fit,
        satisfied: (fit <= threshold).then_some(lhs <= rhs * (1.0 + slack)),
    })
}

/// Largest combined loss within `window` epochs after each boundary.
pub fn boundary_peaks(trace: &LossTrace, window: usize) -> Vec<f64> {
    trace
        .boundaries
        .iter()
        .map(|&b| {
            trace
                .records
                .iter()
                .filter(|r| r.epoch > b && r.epoch <= b + window)
                .map(|r| r.combined)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}
