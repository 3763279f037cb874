//! Recursive multi-fidelity co-kriging.
//!
//! Levels are fitted one at a time, cheapest first. Each level is a
//! Gaussian process whose trend includes an adjustment of the level below.
//! The crate covers conjugate and Jeffreys-prior estimation, simple and
//! universal prediction, closed-form cross-validation, nested design
//! generation and accuracy metrics. The numeric core is generic over
//! [`Scalar`] (`f32` or `f64`); aliases for `f64` are provided below.

// Negated comparisons double as NaN checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod crossval;
pub mod design;
mod error;
pub mod gp;
pub mod io;
pub mod joint;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod model;
mod optim;
mod scalar;
pub mod synthetic;

pub use error::{Category, Error, Result};
pub use scalar::Scalar;

pub use crossval::{brute_force_cv, fast_cv, loo_rmse, CVReport, CVRequest, RhoSource, TrendSource, VarianceSource};
pub use gp::{BasisSpec, BasisTerm, Objective, OptimizeOptions, PriorSpec, ThetaBounds};
pub use kernels::KernelFamily;
pub use model::{fit, LevelPrediction, LevelSpec, PredictionMode, ThetaChoice};

pub type KernelSpec = kernels::KernelSpec<f64>;
pub type LevelData = gp::LevelData<f64>;
pub type FittedLevel = gp::FittedLevel<f64>;
pub type MultiFidelityModel = model::MultiFidelityModel<f64>;
pub type Prediction = model::Prediction<f64>;
pub type Prior = gp::PriorSpec<f64>;
