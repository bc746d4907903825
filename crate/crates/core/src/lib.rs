//! Fair valuation of hybrid insurance liabilities by two-step regression
//! hedging: a quadratic hedge for the traded part and a quantile (or
//! expectile) hedge of the residual, in one-period and multi-period
//! backward-recursive settings.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar to `f64` for the common case.

pub mod dynamic;
pub mod error;
pub mod hedge;
pub mod linalg;
pub mod loss;
pub mod regressor;
pub mod report;
pub mod rng;
pub mod risk;
pub mod scalar;
pub mod scenario;
pub mod solvers;
pub mod valuation;

pub use error::{Error, Result};
pub use hedge::{AssetPanel, HedgeStrategy};
pub use loss::{LossKind, LossSpec};
pub use risk::Sample;
pub use scalar::Real;

pub type Sample64 = risk::Sample<f64>;
pub type Sample32 = risk::Sample<f32>;
pub type LossSpec64 = loss::LossSpec<f64>;
pub type AssetPanel64 = hedge::AssetPanel<f64>;
pub type ScenarioSet64 = scenario::ScenarioSet<f64>;
pub type FairValue64 = valuation::FairValue<f64>;
pub type StatePanel64 = regressor::StatePanel<f64>;
pub type PathPanel64 = dynamic::PathPanel<f64>;
