//! Credit-rating stack: boosted-tree default classification, leaf-based PD
//! calibration, differential-evolution rating buckets, statistical
//! back-testing and local explanations.
//!
//! The numeric kernels ([`metrics`], [`linmod`], [`autoenc`], [`validate`])
//! are generic over [`Real`]; the aliases below fix them to `f64`, which is
//! what the pipeline uses.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autoenc;
pub mod calib;
pub mod data;
pub mod encode;
pub mod error;
pub mod explain;
pub mod gbdt;
pub mod linmod;
pub mod metrics;
pub mod pipeline;
pub mod rating;
pub mod scalar;
pub mod select;
pub mod synth;
pub mod validate;

pub use error::{Error, Result};
pub use scalar::Real;

pub use data::{Dataset, FeatureKind};
pub use gbdt::{GbdtConfig, GbdtModel};
pub use rating::{DeConfig, RatingScale};

pub type LogisticModel = linmod::LogisticModel<f64>;
pub type LogisticConfig = linmod::LogisticConfig<f64>;
pub type AutoencoderParams = autoenc::AutoencoderParams<f64>;
pub type ConfusionMatrix = metrics::ConfusionMatrix<f64>;
pub type TrafficLightParams = validate::TrafficLightParams<f64>;

pub type LogisticModel32 = linmod::LogisticModel<f32>;
pub type AutoencoderParams32 = autoenc::AutoencoderParams<f32>;
