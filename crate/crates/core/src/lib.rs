//! Debiasing continuous scores corrupted by covariate-dependent noise.
//!
//! The pipeline smooths an observed score, then refines it with a small
//! network trained on a handful of labeled values plus a 1-Wasserstein
//! penalty toward the distribution of fair scores. An instrumental-variable
//! estimator solved by Landweber-Fridman iteration is provided as a baseline.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod iv;
pub mod network;
pub mod numerics;
pub mod smoothing;
pub mod trainer;
pub mod transport;

pub use error::{Error, Result};
