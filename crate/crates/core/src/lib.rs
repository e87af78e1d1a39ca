//! Rényi-differentially-private posterior sampling.
//!
//! Mechanisms that release one sample from a (modified) Bayesian posterior:
//! conjugate exponential families with closed-form Rényi divergences and
//! calibrated diffusion/concentration coefficients, and generalized linear
//! models with Gaussian priors. Also included are the utility metrics,
//! dataset preprocessing and experiment harness used to study the
//! privacy/utility tradeoff.

pub mod calibrate;
pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod expfam;
pub mod extended_real;
pub mod glm;
pub mod mechanisms;
pub mod metrics;
pub mod quadrature;
pub mod rng;
pub mod slice;
pub mod specfun;

pub use calibrate::{find_m, find_r, CalibrationResult, Coefficient};
pub use error::{Error, Result};
pub use expfam::{ConjugateSystem, NaturalParam, PrivacyBudget};
pub use mechanisms::{MechanismOutput, Mode};
pub use rng::RngStream;
