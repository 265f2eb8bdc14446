use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(self.lr > 0.0 && self.lr.is_finite())
            || !unit(self.beta1)
            || !unit(self.beta2)
            || !(self.eps_hat > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "invalid adam settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// Moment estimates mirroring a [`ParamStore`], plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params
            .entries()
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Ok(Self {
            config,
            first: zeros.clone(),
            second: zeros,
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        if params.entries().len() != self.first.len() || grads.entries().len() != self.first.len() {
            return Err(Error::InvalidArgument(format!(
                "adam state tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.entries().len(),
                grads.entries().len()
            )));
        }
        for (((_, p), (_, g)), m) in params
            .entries()
            .iter()
            .zip(grads.entries())
            .zip(&self.first)
        {
            if p.shape() != g.shape() || p.len() != m.len() {
                return Err(Error::ShapeMismatch {
                    expected: p.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps_hat,
        } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for ((((_, p), (_, g)), m), v) in params
            .entries_mut()
            .iter_mut()
            .zip(grads.entries())
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *w -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps_hat);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Tensor;
    use proptest::prelude::*;

    fn scalar(v: f64) -> ParamStore {
        ParamStore::new(vec![("w".into(), Tensor::vector(vec![v]).unwrap())])
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p).unwrap();
        adam.step(&mut p, &scalar(1.0)).unwrap();
        let moved = p.flatten()[0].abs();
        assert!((moved - 1e-5).abs() < 1e-12);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = scalar(0.7);
        let mut adam = AdamState::new(AdamConfig::default(), &p).unwrap();
        for _ in 0..100 {
            adam.step(&mut p, &scalar(0.0)).unwrap();
        }
        assert_eq!(p.flatten()[0], 0.7);
    }

    #[test]
    fn quadratic_trace_matches_scalar_reference() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = scalar(1.0);
        let mut adam = AdamState::new(cfg, &p).unwrap();
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * p.flatten()[0];
            adam.step(&mut p, &scalar(g)).unwrap();
            let gr = 2.0 * w;
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p.flatten()[0] - w).abs() < 1e-14, "step {t}");
        }
    }

    #[test]
    fn mismatched_state_rejected() {
        let mut p = scalar(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p).unwrap();
        let two = ParamStore::new(vec![("w".into(), Tensor::vector(vec![1.0, 2.0]).unwrap())]);
        assert!(adam.step(&mut p, &two).is_err());
        assert!(AdamState::new(
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            &p
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn update_bounded_by_lr(grads in prop::collection::vec(-1e3f64..1e3, 1..60)) {
            // The bias-corrected step never exceeds lr·(1-β1)/sqrt(1-β2) and,
            // for a constant gradient, stays within lr up to rounding.
            let mut p = scalar(0.0);
            let mut adam = AdamState::new(AdamConfig::default(), &p).unwrap();
            for g in &grads {
                let before = p.flatten()[0];
                adam.step(&mut p, &scalar(*g)).unwrap();
                let step = (p.flatten()[0] - before).abs();
                prop_assert!(step <= 1e-5 * (1.0 - 0.9) / (1.0f64 - 0.999).sqrt() * (1.0 + 1e-9));
            }
            let mut p = scalar(0.0);
            let mut adam = AdamState::new(AdamConfig::default(), &p).unwrap();
            for _ in &grads {
                let before = p.flatten()[0];
                adam.step(&mut p, &scalar(grads[0])).unwrap();
                prop_assert!((p.flatten()[0] - before).abs() <= 1e-5 * (1.0 + 1e-9));
            }
        }
    }
}
