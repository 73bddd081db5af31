//! Interacting reinforced stochastic processes on hierarchical networks.
//!
//! Agents hold inclinations `Z_n` in `[0,1]^N`, act with probabilities
//! `W^T Z_n` and reinforce with step sizes `r(n) ~ c n^-gamma`. The crate
//! simulates the process, evaluates the limiting covariances from the
//! Jordan data of `W`, and builds chi-square tests and confidence sets on
//! top of them.
//!
//! The model, spectral and covariance code is generic over [`scalar::Real`]
//! (`f32` or `f64`); the statistical layers work in `f64`. The aliases
//! below fix the scalar to `f64`.

// Comparisons such as `!(x < 1)` are written so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod scalar;
pub mod simulate;
pub mod spectral;
pub mod stream;

pub use error::{Error, Result, Violation};
pub use model::{step_size, validate_network};
pub use spectral::{classify_regime, Regime};

pub type Network = model::HierarchicalNetwork<f64>;
pub type Schedule = model::StepSizeSchedule<f64>;
pub type Spectral = spectral::SpectralDecomposition<f64>;
pub type State = simulate::ProcessState<f64>;
pub type Initial = simulate::InitialSpec<f64>;
pub type RealMatrix = linalg::Matrix<f64>;
pub type ComplexMatrix = linalg::Matrix<scalar::C<f64>>;
pub type Report = asymptotics::CovarianceReport<f64>;
