//! Linear-protocol simulator for feedback and delayed-CSI transmission
//! schemes on MIMO X-channels, K-user X-channels and K-user interference
//! channels.
//!
//! Every transmitted and received signal is tracked as an exact linear
//! combination of information symbols and noise samples ([`ledger`]), so
//! a scheme's sum degrees of freedom can be checked three ways: exact
//! symbol/slot counting, almost-sure rank verification of every receiver's
//! equations, and the slope of the achievable rate against log₂ P.
//!
//! The numeric core ([`complexla`], [`ledger`]) is generic over the real
//! scalar; the simulator itself runs in `f64` through the aliases below.

pub mod analysis;
pub mod channel_env;
pub mod complexla;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod scalar;
pub mod scheme_kic;
pub mod scheme_kx;
pub mod scheme_mat_bc;
pub mod scheme_x2_mimo;
pub mod transcript;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision complex matrix used throughout the simulator.
pub type CMatrix = complexla::Matrix<f64>;
/// Single-precision variant of the kernel matrix.
pub type CMatrix32 = complexla::Matrix<f32>;
pub type LinExpr = ledger::LinExpr<f64>;
pub type Signal = ledger::Signal<f64>;
/// Exact rational used for all DoF accounting.
pub type Rational = num_rational::Ratio<i64>;

/// Seeded generator used for every trial.
pub type TrialRng = rand_chacha::ChaCha8Rng;
