//! Group-level statistics of covariance and correlation matrices on the
//! manifold of symmetric positive definite matrices.
//!
//! * [`spd`]: matrix functions, tangent maps, orthonormal coordinates and the
//!   affine-invariant distance.
//! * [`estimation`]: confound removal, Ledoit-Wolf shrinkage and correlation
//!   normalization of subject time series.
//! * [`group_model`]: intrinsic mean, whitened residuals, dispersion and
//!   likelihood of the group model.
//! * [`inference`]: bootstrap null distributions and per-pair tests of a
//!   single subject against controls.
//! * [`simulation`]: synthetic populations and ROC evaluation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod group_model;
pub mod inference;
pub mod simulation;
pub mod spd;

pub use error::{Error, Result};
pub use estimation::{ConfoundSet, TimeSeries};
pub use group_model::{FrechetConfig, GroupModel, Parametrization};
pub use inference::{NullConfig, NullDistribution, PairTest, TestReport};
pub use simulation::{RocCurve, SimConfig};
pub use spd::{SpdMatrix, SymMatrix, TangentVector};
