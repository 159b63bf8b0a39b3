//! BART-based treatment-effect estimation.

// `!(x > 0.0)` checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bart;
pub mod bcf;
pub mod data;
pub mod dgp;
pub mod error;
pub mod eval;
pub mod folds;
pub mod kfold;
pub mod learners;
pub mod posterior;
pub mod propensity;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases used by the experiment runner.
pub type Dataset = data::Dataset<f64>;
pub type GroundTruth = data::GroundTruth<f64>;
pub type EffectReport = report::EffectReport<f64>;
pub type BartPosterior = bart::BartPosterior<f64>;
pub type PosteriorDraws = posterior::PosteriorDraws<f64>;
pub type IntervalEstimate = posterior::IntervalEstimate<f64>;

/// Single-precision aliases.
pub type Dataset32 = data::Dataset<f32>;
pub type EffectReport32 = report::EffectReport<f32>;
pub type BartPosterior32 = bart::BartPosterior<f32>;
