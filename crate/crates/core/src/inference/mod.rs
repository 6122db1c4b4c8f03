//! Laplace approximation, grid integration over hyperparameters, and
//! model diagnostics.

mod data;
pub mod diagnostics;
pub mod fit;
pub mod gaussian;
mod likelihood;
pub mod numerics;

pub use data::Dataset;
pub use diagnostics::{cpo_logscore, dic, rmse};
pub use fit::{fit, FitConfig, FitResult, MarginalSummary, RegionSummary};
pub use gaussian::{Engine, FixedEffectsPrior, NewtonConfig};
pub use likelihood::Likelihood;
