//! Desk-scale laboratory for value-guided decoding over exactly solvable
//! reasoning tasks.
//!
//! The crate provides two toy reasoning environments (Game of 24 and a
//! synthetic chain task), stochastic generator policies with queryable step
//! distributions, outcome- and process-supervised value/reward models, an
//! exact dynamic-programming value oracle, value-guided beam search with the
//! usual decoding baselines, and an experiment harness that reports accuracy
//! and correct-answer proportion with multi-seed aggregation.
//!
//! Probability arithmetic is generic over the [`scalar::Prob`] trait so the
//! same code runs on fast `f64` values or exact rationals; see the type
//! aliases below for the concrete instantiations used throughout.

pub mod env;
pub mod error;
pub mod experiments;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod search;
pub mod value_models;

pub use error::{CoreError, Result};

/// Exact rational used for every Game-of-24 quantity (inputs, step results,
/// expression values). Magnitudes stay tiny, so 64-bit ratios suffice.
pub type GameValue = num_rational::Rational64;

/// Arbitrary-precision rational probability, the exact instantiation of
/// [`scalar::Prob`].
pub type ExactProb = num_rational::BigRational;

/// Fast floating-point probability, the approximate instantiation of
/// [`scalar::Prob`].
pub type ApproxProb = f64;
