//! Continued-fraction value mixing for cooperative multi-agent Q-learning.
//!
//! Generic code is written against [`scalar::Scalar`] (floats on the
//! differentiation tape) and [`scalar::Field`] (exact series arithmetic);
//! the aliases below fix the concrete types used by training and checks.

pub mod agents;
pub mod config;
pub mod diffcore;
pub mod envs;
pub mod interpret;
pub mod mixer;
pub mod pade;
pub mod params;
pub mod scalar;
pub mod trainer;
pub mod verify;
pub mod vib;

/// Exact rational used by the series checks.
pub type Rational = num_rational::BigRational;
pub type ExactPoly = pade::Poly<Rational>;
pub type ExactSeries = pade::FormalSeries<Rational>;
pub type Tape = diffcore::Tape<f64>;
pub type Tensor = diffcore::Tensor<f64>;
