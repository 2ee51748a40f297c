//! Leakage-aware out-of-fold distillation of black-box probabilistic teachers
//! into small, CPU-fast tabular students.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: CSV loading, imputation, stratified folds and splits, synthetic data.
//! - [`teacher`]: out-of-fold soft labels, reference teachers, multi-teacher averaging,
//!   soft-label files and the leakage audit.
//! - [`distill`]: per-sample temperatures, confidence weights, soft logits and the mixed loss.
//! - [`gbdt`], [`mlp`], [`baselines`]: student and baseline models.
//! - [`metrics`], [`bench`]: evaluation and latency measurement.
//! - [`pipeline`], [`ablation`], [`stats`]: end-to-end orchestration.
//!
//! The loss and metric kernels are generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below pin them to `f64`, which is what the trainers use.

pub mod ablation;
pub mod baselines;
pub mod bench;
pub mod dataset;
pub mod distill;
pub mod error;
pub mod gbdt;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod stats;
pub mod teacher;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Loss configuration used by the trainers.
pub type LossConfig = distill::LossConfig<f64>;
/// Per-sample distillation targets used by the trainers.
pub type DistillTargets = distill::DistillTargets<f64>;
/// Single-precision loss configuration.
pub type LossConfigF32 = distill::LossConfig<f32>;
/// Single-precision distillation targets.
pub type DistillTargetsF32 = distill::DistillTargets<f32>;
