//! Log-gamma, digamma and trigamma for positive real arguments.
//!
//! All three use the same scheme: shift the argument upward with the
//! functional recurrence until it reaches [`ASYMPTOTIC_CUTOFF`], then sum
//! the Stirling-type asymptotic series. Truncation error of the series at
//! the cutoff is below 1e-17.

use crate::error::{Error, Result};

/// Smallest accepted argument. Anything below this is a domain error.
pub const MIN_ARGUMENT: f64 = 1e-300;

const ASYMPTOTIC_CUTOFF: f64 = 15.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// A finite, strictly positive real.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PositiveReal(f64);

impl PositiveReal {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value >= MIN_ARGUMENT {
            Ok(PositiveReal(value))
        } else {
            Err(Error::Domain(format!(
                "expected a finite argument >= {MIN_ARGUMENT:e}, got {value}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PositiveReal {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        PositiveReal::new(value)
    }
}

/// ln Γ(x).
pub fn ln_gamma(x: PositiveReal) -> f64 {
    raw::ln_gamma(x.0)
}

/// ψ₀(x), the derivative of ln Γ.
pub fn digamma(x: PositiveReal) -> f64 {
    raw::digamma(x.0)
}

/// ψ₁(x), the second derivative of ln Γ.
pub fn trigamma(x: PositiveReal) -> f64 {
    raw::trigamma(x.0)
}

/// Checked convenience wrappers taking plain `f64`.
pub fn try_ln_gamma(x: f64) -> Result<f64> {
    PositiveReal::new(x).map(ln_gamma)
}

pub fn try_digamma(x: f64) -> Result<f64> {
    PositiveReal::new(x).map(digamma)
}

pub fn try_trigamma(x: f64) -> Result<f64> {
    PositiveReal::new(x).map(trigamma)
}

/// Unchecked kernels. Callers guarantee `x >= MIN_ARGUMENT`.
pub(crate) mod raw {
    use super::{ASYMPTOTIC_CUTOFF, HALF_LN_2PI};

    pub(crate) fn ln_gamma(x: f64) -> f64 {
        if x >= ASYMPTOTIC_CUTOFF {
            return stirling_ln_gamma(x);
        }
        // ln Γ(x) = ln Γ(x + k) - ln(x (x+1) ... (x+k-1))
        let mut shifted = x;
        let mut product = 1.0;
        let mut log_acc = 0.0;
        while shifted < ASYMPTOTIC_CUTOFF {
            product *= shifted;
            // keep the running product away from underflow for tiny x
            if !(1e-200..=1e200).contains(&product) {
                log_acc += product.ln();
                product = 1.0;
            }
            shifted += 1.0;
        }
        stirling_ln_gamma(shifted) - (log_acc + product.ln())
    }

    fn stirling_ln_gamma(x: f64) -> f64 {
        // Bernoulli terms B_{2k} / (2k (2k-1) x^{2k-1})
        const C: [f64; 8] = [
            1.0 / 12.0,
            -1.0 / 360.0,
            1.0 / 1260.0,
            -1.0 / 1680.0,
            1.0 / 1188.0,
            -691.0 / 360_360.0,
            1.0 / 156.0,
            -3617.0 / 122_400.0,
        ];
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        let mut series = 0.0;
        for &c in C.iter().rev() {
            series = series * inv2 + c;
        }
        (x - 0.5) * x.ln() - x + HALF_LN_2PI + series * inv
    }

    pub(crate) fn digamma(x: f64) -> f64 {
        let mut shifted = x;
        let mut acc = 0.0;
        while shifted < ASYMPTOTIC_CUTOFF {
            acc -= 1.0 / shifted;
            shifted += 1.0;
        }
        // B_{2k} / (2k x^{2k})
        const C: [f64; 7] = [
            1.0 / 12.0,
            -1.0 / 120.0,
            1.0 / 252.0,
            -1.0 / 240.0,
            1.0 / 132.0,
            -691.0 / 32_760.0,
            1.0 / 12.0,
        ];
        let inv = 1.0 / shifted;
        let inv2 = inv * inv;
        let mut series = 0.0;
        for &c in C.iter().rev() {
            series = series * inv2 + c;
        }
        acc + shifted.ln() - 0.5 * inv - series * inv2
    }

    pub(crate) fn trigamma(x: f64) -> f64 {
        let mut shifted = x;
        let mut acc = 0.0;
        while shifted < ASYMPTOTIC_CUTOFF {
            acc += 1.0 / (shifted * shifted);
            shifted += 1.0;
        }
        // B_{2k} / x^{2k+1}
        const C: [f64; 7] = [
            1.0 / 6.0,
            -1.0 / 30.0,
            1.0 / 42.0,
            -1.0 / 30.0,
            5.0 / 66.0,
            -691.0 / 2730.0,
            7.0 / 6.0,
        ];
        let inv = 1.0 / shifted;
        let inv2 = inv * inv;
        let mut series = 0.0;
        for &c in C.iter().rev() {
            series = series * inv2 + c;
        }
        acc + inv + 0.5 * inv2 + series * inv2 * inv
    }
}
