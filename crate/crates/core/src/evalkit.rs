//! Labeled-fraction sweeps and their summaries.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Labeled fractions of the sweep: 0.0% to 1.0% in steps of 0.2%.
pub const DEFAULT_FRACTIONS: [f64; 6] = [0.0, 0.002, 0.004, 0.006, 0.008, 0.01];
pub const DEFAULT_REALIZATIONS: usize = 10;

/// Metrics of one trained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub train_mse: f64,
    pub test_mse: f64,
    pub train_error_norm: f64,
    pub test_error_norm: f64,
    pub final_w1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub realization: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: CellMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub fraction: f64,
    pub realization: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub fractions: Vec<f64>,
    /// One seed per realization; each is shared by every fraction so that
    /// realizations differ only in the labeled count.
    pub seeds: Vec<u64>,
}

impl SweepPlan {
    /// Seeds `base_seed, base_seed + 1, ...`.
    pub fn new(fractions: Vec<f64>, realizations: usize, base_seed: u64) -> Self {
        Self {
            fractions,
            seeds: (0..realizations as u64)
                .map(|r| base_seed.wrapping_add(r))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Empty("sweep needs at least one fraction".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::InvalidArgument(format!(
                "sweep fraction {f} outside [0, 1]"
            )));
        }
        if self.seeds.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "sweep needs at least 2 realizations, got {}",
                self.seeds.len()
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<(f64, usize, u64)> {
        self.fractions
            .iter()
            .flat_map(|&f| self.seeds.iter().enumerate().map(move |(r, &s)| (f, r, s)))
            .collect()
    }
}

/// Runs `cell(fraction, seed)` for every cell of `plan` on up to `threads`
/// workers. Failed cells are recorded and left out of the rows.
pub fn sweep<F>(plan: &SweepPlan, threads: usize, cell: F) -> Result<SweepResult>
where
    F: Fn(f64, u64) -> Result<CellMetrics> + Sync,
{
    plan.validate()?;
    let cells = plan.cells();
    let run = || -> Vec<(f64, usize, u64, Result<CellMetrics>)> {
        cells
            .par_iter()
            .map(|&(f, r, s)| (f, r, s, cell(f, s)))
            .collect()
    };
    let outcomes = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
        .install(run);
    let mut result = SweepResult::default();
    for (fraction, realization, seed, outcome) in outcomes {
        match outcome {
            Ok(metrics) => result.rows.push(SweepRow {
                fraction,
                realization,
                seed,
                metrics,
            }),
            Err(e) => {
                warn!("sweep cell fraction={fraction} realization={realization} failed: {e}");
                result.failures.push(SweepFailure {
                    fraction,
                    realization,
                    seed,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub fraction: f64,
    pub count: usize,
    pub train_mean: f64,
    pub train_std: f64,
    pub test_mean: f64,
    pub test_std: f64,
    /// Only one row contributed, so the standard deviation is reported as 0.
    pub std_undefined: bool,
}

/// Arithmetic mean and sample standard deviation; `(mean, 0, true)` for a
/// single value.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64, bool)> {
    if values.is_empty() {
        return Err(Error::Empty("no values to summarize".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0, true));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt(), false))
}

/// Per-fraction train and test MSE statistics, in order of first appearance.
pub fn summarize(result: &SweepResult) -> Result<Vec<SummaryRow>> {
    if result.rows.is_empty() {
        return Err(Error::Empty("sweep produced no rows".into()));
    }
    let mut fractions: Vec<f64> = Vec::new();
    for r in &result.rows {
        if !fractions.contains(&r.fraction) {
            fractions.push(r.fraction);
        }
    }
    fractions
        .into_iter()
        .map(|f| {
            let rows: Vec<&SweepRow> = result.rows.iter().filter(|r| r.fraction == f).collect();
            let train: Vec<f64> = rows.iter().map(|r| r.metrics.train_mse).collect();
            let test: Vec<f64> = rows.iter().map(|r| r.metrics.test_mse).collect();
            let (train_mean, train_std, single) = mean_std(&train)?;
            let (test_mean, test_std, _) = mean_std(&test)?;
            Ok(SummaryRow {
                fraction: f,
                count: rows.len(),
                train_mean,
                train_std,
                test_mean,
                test_std,
                std_undefined: single,
            })
        })
        .collect()
}

/// Adjacent pairs (in fraction order) whose train mean goes up, and
/// whether every such rise is within the pooled standard deviation of the pair.
pub fn train_inversions(summary: &[SummaryRow]) -> (usize, bool) {
    let mut rows = summary.to_vec();
    rows.sort_by(|a, b| a.fraction.total_cmp(&b.fraction));
    let mut count = 0;
    let mut within = true;
    for w in rows.windows(2) {
        let rise = w[1].train_mean - w[0].train_mean;
        if rise > 0.0 {
            count += 1;
            let pooled = ((w[0].train_std.powi(2) + w[1].train_std.powi(2)) / 2.0).sqrt();
            within &= rise <= pooled;
        }
    }
    (count, within)
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fraction,realization,seed,train_mse,test_mse,train_error_norm,test_error_norm,final_w1\n");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.fraction,
                r.realization,
                r.seed,
                m.train_mse,
                m.test_mse,
                m.train_error_norm,
                m.test_error_norm,
                m.final_w1
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("fraction,train_mean,train_std,test_mean,test_std\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.fraction, r.train_mean, r.train_std, r.test_mean, r.test_std
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(v: f64) -> CellMetrics {
        CellMetrics {
            train_mse: v,
            test_mse: 2.0 * v,
            train_error_norm: 100.0 * v,
            test_error_norm: 200.0 * v,
            final_w1: 0.0,
        }
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[1.0, 2.0, 3.0]).unwrap(), (2.0, 1.0, false));
        assert_eq!(mean_std(&[4.0]).unwrap(), (4.0, 0.0, true));
        assert!(mean_std(&[]).is_err());
    }

    #[test]
    fn equal_seeds_give_zero_spread() {
        let plan = SweepPlan {
            fractions: vec![0.0, 0.01],
            seeds: vec![7, 7],
        };
        let result = sweep(&plan, 2, |f, s| Ok(metrics(f + s as f64))).unwrap();
        assert_eq!(result.rows.len(), 4);
        for row in summarize(&result).unwrap() {
            assert_eq!(row.train_std, 0.0);
            assert_eq!(row.count, 2);
        }
    }

    #[test]
    fn default_grid_has_sixty_cells() {
        let plan = SweepPlan::new(DEFAULT_FRACTIONS.to_vec(), DEFAULT_REALIZATIONS, 0);
        assert_eq!(plan.cells().len(), 60);
        assert!(SweepPlan::new(vec![0.0], 1, 0).validate().is_err());
        assert!(SweepPlan::new(vec![], 3, 0).validate().is_err());
    }

    #[test]
    fn failures_are_excluded() {
        let plan = SweepPlan::new(vec![0.0, 0.5], 3, 10);
        let result = sweep(&plan, 1, |f, s| {
            if f > 0.0 && s == 11 {
                Err(Error::Numerical("boom".into()))
            } else {
                Ok(metrics(1.0 - f))
            }
        })
        .unwrap();
        assert_eq!(result.rows.len(), 5);
        assert_eq!(result.failures.len(), 1);
        let summary = summarize(&result).unwrap();
        assert_eq!(summary[1].count, 2);
        assert!(result.to_csv().lines().count() == 6);
    }

    #[test]
    fn inversions_counted_in_fraction_order() {
        let row = |fraction: f64, train_mean: f64, train_std: f64| SummaryRow {
            fraction,
            count: 2,
            train_mean,
            train_std,
            test_mean: 0.0,
            test_std: 0.0,
            std_undefined: false,
        };
        let rows = [
            row(0.0, 1.0, 0.1),
            row(0.01, 0.1, 0.05),
            row(0.005, 0.5, 0.1),
            row(0.0075, 0.55, 0.1),
        ];
        assert_eq!(train_inversions(&rows), (1, true));
        let rows = [row(0.0, 1.0, 0.0), row(0.5, 2.0, 0.0)];
        assert_eq!(train_inversions(&rows), (1, false));
        let csv = summary_csv(&[row(0.0, 1.0, 0.1)]);
        assert!(csv.starts_with("fraction,train_mean,train_std,test_mean,test_std\n"));
    }
}
