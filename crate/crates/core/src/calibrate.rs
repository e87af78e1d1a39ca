//! Binary-search calibration of the diffusion coefficient `r` and the
//! concentration coefficient `m` against a target RDP budget.
//!
//! The search keeps the best candidate whose supremum was actually evaluated
//! and found within budget. It never assumes the predicate is monotone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{ConjugateSystem, NaturalParam, PrivacyBudget};

pub const DEFAULT_MAX_ITERS: usize = 500;

/// Lower end of the search interval.
pub const MIN_COEFFICIENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    /// Scales the data contribution: `η₀ + r Σ (S(xᵢ), 1)`.
    Diffusion,
    /// Scales the prior: `η₀ / m + Σ (S(xᵢ), 1)`.
    Concentration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub coefficient: f64,
    /// Supremum divergence at `coefficient`; serialized as a string `"inf"` when infinite.
    #[serde(with = "crate::extended_real")]
    pub achieved_sup: f64,
    pub iterations_used: usize,
    pub satisfied: bool,
}

/// Worst-case divergence of the mechanism at a given coefficient.
pub fn privacy_at(
    system: &ConjugateSystem,
    eta0: &NaturalParam,
    n: usize,
    kind: Coefficient,
    coefficient: f64,
    lambda: f64,
) -> Result<f64> {
    let n = n as f64;
    match kind {
        Coefficient::Diffusion => system.sup_neighbor_divergence(eta0, coefficient * n, coefficient, lambda),
        Coefficient::Concentration => {
            system.sup_neighbor_divergence(&eta0.scaled(1.0 / coefficient), n, 1.0, lambda)
        }
    }
}

pub fn find_r(
    system: &ConjugateSystem,
    eta0: &NaturalParam,
    n: usize,
    budget: PrivacyBudget,
    max_iters: usize,
) -> Result<CalibrationResult> {
    calibrate(system, eta0, n, budget, max_iters, Coefficient::Diffusion)
}

pub fn find_m(
    system: &ConjugateSystem,
    eta0: &NaturalParam,
    n: usize,
    budget: PrivacyBudget,
    max_iters: usize,
) -> Result<CalibrationResult> {
    calibrate(system, eta0, n, budget, max_iters, Coefficient::Concentration)
}

pub fn calibrate(
    system: &ConjugateSystem,
    eta0: &NaturalParam,
    n: usize,
    budget: PrivacyBudget,
    max_iters: usize,
    kind: Coefficient,
) -> Result<CalibrationResult> {
    if !system.is_normalizable(eta0) {
        return Err(Error::Usage(format!("prior {:?} is not normalizable", eta0.coords())));
    }
    if max_iters == 0 {
        return Err(Error::Usage("max_iters must be at least 1".into()));
    }
    let (lambda, epsilon) = (budget.lambda(), budget.epsilon());
    let eval = |c: f64| privacy_at(system, eta0, n, kind, c, lambda);

    let at_one = eval(1.0)?;
    if at_one <= epsilon {
        return Ok(CalibrationResult {
            coefficient: 1.0,
            achieved_sup: at_one,
            iterations_used: 1,
            satisfied: true,
        });
    }

    let (mut lo, mut hi) = (MIN_COEFFICIENT, 1.0);
    let mut best: Option<(f64, f64)> = None;
    let mut last = (1.0, at_one);
    let mut iterations = 1;
    while iterations < max_iters {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        iterations += 1;
        let value = eval(mid)?;
        last = (mid, value);
        if value <= epsilon {
            if best.is_none_or(|(c, _)| mid > c) {
                best = Some((mid, value));
            }
            lo = mid;
        } else {
            hi = mid;
        }
    }

    Ok(match best {
        Some((coefficient, achieved_sup)) => CalibrationResult {
            coefficient,
            achieved_sup,
            iterations_used: iterations,
            satisfied: true,
        },
        None => CalibrationResult {
            coefficient: last.0,
            achieved_sup: last.1,
            iterations_used: iterations,
            satisfied: false,
        },
    })
}
