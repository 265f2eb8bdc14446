//! Local estimators producing the initial estimate from the observed score.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmootherSpec {
    /// Trailing window mean over `taps` samples (1D).
    MovingAverage { taps: usize },
    /// Separable Gaussian blur in grid-index units (2D). A missing radius
    /// defaults to `ceil(4·stddev)`.
    GaussianBlur {
        stddev: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truncation_radius: Option<usize>,
    },
}

impl SmootherSpec {
    pub fn moving_average(taps: usize) -> Self {
        SmootherSpec::MovingAverage { taps }
    }

    pub fn gaussian(stddev: f64) -> Self {
        SmootherSpec::GaussianBlur {
            stddev,
            truncation_radius: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SmootherSpec::MovingAverage { taps: 0 } => Err(Error::InvalidArgument(
                "moving average needs taps >= 1".into(),
            )),
            SmootherSpec::GaussianBlur { stddev, .. } if !(stddev > 0.0 && stddev.is_finite()) => {
                Err(Error::InvalidArgument(format!(
                    "gaussian blur needs stddev > 0, got {stddev}"
                )))
            }
            SmootherSpec::GaussianBlur {
                truncation_radius: Some(0),
                ..
            } => Err(Error::InvalidArgument(
                "gaussian truncation radius must be positive".into(),
            )),
            _ => Ok(()),
        }
    }
}

pub fn smooth(y: &Field, spec: &SmootherSpec) -> Result<Field> {
    spec.validate()?;
    match (spec, y.grid()) {
        (SmootherSpec::MovingAverage { taps }, Grid::One(_)) => {
            y.with_values(trailing_mean(y.values(), *taps))
        }
        (
            SmootherSpec::GaussianBlur {
                stddev,
                truncation_radius,
            },
            Grid::Two(g),
        ) => {
            let radius = truncation_radius.unwrap_or_else(|| (4.0 * stddev).ceil() as usize);
            let kernel = gaussian_kernel(*stddev, radius);
            let (n1, n2) = (g.axis1.count(), g.axis2.count());
            let mut rows = vec![0.0; n1 * n2];
            for i in 0..n1 {
                let out = convolve_renormalized(&y.values()[i * n2..(i + 1) * n2], &kernel);
                rows[i * n2..(i + 1) * n2].copy_from_slice(&out);
            }
            let mut result = vec![0.0; n1 * n2];
            let mut column = vec![0.0; n1];
            for j in 0..n2 {
                for i in 0..n1 {
                    column[i] = rows[i * n2 + j];
                }
                for (i, v) in convolve_renormalized(&column, &kernel)
                    .into_iter()
                    .enumerate()
                {
                    result[i * n2 + j] = v;
                }
            }
            y.with_values(result)
        }
        (SmootherSpec::MovingAverage { .. }, _) => Err(Error::ArityMismatch(
            "moving average applies to 1D fields".into(),
        )),
        (SmootherSpec::GaussianBlur { .. }, _) => Err(Error::ArityMismatch(
            "gaussian blur applies to 2D fields".into(),
        )),
    }
}

/// Mean of `values[i+1-taps ..= i]`, shortened at the left edge.
fn trailing_mean(values: &[f64], taps: usize) -> Vec<f64> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(taps);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Unnormalized weights `exp(-d²/2σ²)` for `d = -radius..=radius`.
fn gaussian_kernel(stddev: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r)
        .map(|d| (-(d as f64).powi(2) / (2.0 * stddev * stddev)).exp())
        .collect()
}

/// Centered convolution with weights renormalized over the in-range taps.
fn convolve_renormalized(values: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = values.len() as isize;
    let r = (kernel.len() / 2) as isize;
    (0..n)
        .map(|i| {
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (k, w) in kernel.iter().enumerate() {
                let j = i + k as isize - r;
                if (0..n).contains(&j) {
                    acc += w * values[j as usize];
                    wsum += w;
                }
            }
            acc / wsum
        })
        .collect()
}
