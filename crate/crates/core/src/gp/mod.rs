//! Per-level estimation: experience matrices, conjugate and Jeffreys
//! posteriors, restricted likelihood and length-scale optimization.

mod basis;
mod estimate;
mod level;
mod optimize;

pub use basis::{BasisSpec, BasisTerm};
pub use estimate::{
    build_experience_matrix, concentrated_reml, fit_level, sigma2_eml, trend_posterior, variance_posterior,
    FittedLevel, NuggetPolicy, TrendPosterior, VariancePosterior,
};
pub use level::{LevelData, PriorSpec};
pub use optimize::{objective_value, optimize_theta, start_points, Objective, OptimizeOptions, ThetaBounds};
