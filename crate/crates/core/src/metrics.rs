//! Utility metrics: KL divergences to the true posterior, held-out
//! log-likelihood and GLM test metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{ConjugateSystem, NaturalParam};
use crate::glm::{ln_normal_cdf, ln_normal_pdf, softplus, GlmDataset, Link};
use crate::quadrature::gauss_legendre_on;
use crate::specfun::raw::{digamma, ln_gamma};

fn beta_shapes(eta: &NaturalParam) -> Result<(f64, f64)> {
    let system = ConjugateSystem::BetaBernoulli;
    match system.concentrations(eta) {
        Some(c) if eta.len() == 2 => Ok((c[0], c[1])),
        _ => Err(Error::Usage(format!("{:?} is not a normalizable Beta parameter", eta.coords()))),
    }
}

fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `KL(P ‖ Q)` between the Beta distributions with natural parameters `eta_p`, `eta_q`.
pub fn kl_beta(eta_p: &NaturalParam, eta_q: &NaturalParam) -> Result<f64> {
    let (a1, b1) = beta_shapes(eta_p)?;
    let (a2, b2) = beta_shapes(eta_q)?;
    let kl = ln_beta_fn(a2, b2) - ln_beta_fn(a1, b1)
        + (a1 - a2) * digamma(a1)
        + (b1 - b2) * digamma(b1)
        + (a2 - a1 + b2 - b1) * digamma(a1 + b1);
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub n_nodes_outer: usize,
    pub n_nodes_inner: usize,
    /// Largest accepted change when both node counts are doubled.
    pub tolerance: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            n_nodes_outer: 256,
            n_nodes_inner: 256,
            tolerance: 1e-6,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes_outer < 32 || self.n_nodes_inner < 32 {
            return Err(Error::Usage("quadrature needs at least 32 nodes per dimension".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Usage("quadrature tolerance must be positive".into()));
        }
        Ok(())
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct Component {
    ln_weight: f64,
    a: f64,
    b: f64,
    ln_norm: f64,
}

impl Component {
    fn new(ln_weight: f64, a: f64, b: f64) -> Self {
        Component {
            ln_weight,
            a,
            b,
            ln_norm: ln_beta_fn(a, b),
        }
    }

    fn ln_density(&self, ln_rho: f64, ln_1m_rho: f64) -> f64 {
        (self.a - 1.0) * ln_rho + (self.b - 1.0) * ln_1m_rho - self.ln_norm
    }
}

struct NoisyCountProblem {
    a0: f64,
    c0: f64,
    s: f64,
    n: f64,
    sigma: f64,
}

impl NoisyCountProblem {
    fn mixture(&self, n_inner: usize) -> Vec<Component> {
        let Self { a0, c0, s, n, sigma } = *self;
        let mut parts = vec![
            Component::new(ln_normal_cdf(-s / sigma), a0, c0 + n),
            Component::new(ln_normal_cdf((s - n) / sigma), a0 + n, c0),
        ];
        let lo = (s - 10.0 * sigma).max(0.0);
        let hi = (s + 10.0 * sigma).min(n);
        if hi > lo {
            let (t, w) = gauss_legendre_on(n_inner, lo, hi);
            for (t, w) in t.into_iter().zip(w) {
                let u = (t - s) / sigma;
                let ln_w = w.ln() + ln_normal_pdf(u) - sigma.ln();
                parts.push(Component::new(ln_w, a0 + t, c0 + n - t));
            }
        }
        parts
    }

    fn kl(&self, n_outer: usize, n_inner: usize) -> f64 {
        let (pa, pb) = (self.a0 + self.s, self.c0 + self.n - self.s);
        let truth = Component::new(0.0, pa, pb);
        let mean = pa / (pa + pb);
        let sd = (pa * pb / ((pa + pb).powi(2) * (pa + pb + 1.0))).sqrt();
        let lo = (mean - 12.0 * sd).max(0.0);
        let hi = (mean + 12.0 * sd).min(1.0);
        let mixture = self.mixture(n_inner);
        let (rho, w) = gauss_legendre_on(n_outer, lo, hi);
        let mut terms = vec![0.0; mixture.len()];
        let mut total = 0.0;
        for (rho, w) in rho.into_iter().zip(w) {
            let (lr, l1r) = (rho.ln(), (-rho).ln_1p());
            let ln_p = truth.ln_density(lr, l1r);
            for (slot, c) in terms.iter_mut().zip(&mixture) {
                *slot = c.ln_weight + c.ln_density(lr, l1r);
            }
            let ln_a = log_sum_exp(&terms);
            total += w * ln_p.exp() * (ln_p - ln_a);
        }
        total.max(0.0)
    }
}

/// `KL(P ‖ A)` between the true Beta posterior `P` and the output
/// distribution `A` of the noisy-count baseline with noise scale `sigma`.
///
/// The noisy count is projected onto `[0, n]`, so `A` mixes the two edge
/// posteriors (with the clipped Gaussian tail masses) and a continuum of
/// interior posteriors. Both integrals use Gauss–Legendre rules; the result
/// at doubled node counts is returned, and an accuracy error is raised if
/// it moved by more than the tolerance.
pub fn kl_gaussian_mechanism(eta0: &NaturalParam, data: &[f64], sigma: f64, cfg: QuadratureConfig) -> Result<f64> {
    cfg.validate()?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Usage(format!("noise scale must be positive and finite, got {sigma}")));
    }
    let (a0, c0) = beta_shapes(eta0)?;
    let stats = ConjugateSystem::BetaBernoulli.sufficient_stats(data)?;
    let problem = NoisyCountProblem {
        a0,
        c0,
        s: stats.iter().map(|v| v[0]).sum(),
        n: data.len() as f64,
        sigma,
    };
    let coarse = problem.kl(cfg.n_nodes_outer, cfg.n_nodes_inner);
    let fine = problem.kl(2 * cfg.n_nodes_outer, 2 * cfg.n_nodes_inner);
    let change = (fine - coarse).abs();
    if change > cfg.tolerance {
        return Err(Error::Accuracy {
            estimate: fine,
            change,
            tolerance: cfg.tolerance,
        });
    }
    Ok(fine)
}

/// `ln p(X_H | θ) = Σ [xᵢθ − ln(1 + e^θ)]` for Bernoulli bits.
pub fn heldout_loglik(theta: f64, heldout_bits: &[f64]) -> f64 {
    let ones: f64 = heldout_bits.iter().sum();
    ones * theta - heldout_bits.len() as f64 * softplus(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmMetrics {
    pub error_rate: f64,
    pub neg_loglik: f64,
}

/// Test error and negative log-likelihood of weights `w`.
///
/// The prediction is 1 exactly when `g⁻¹(w·x) ≥ ½`.
pub fn glm_test_metrics(w: &[f64], test: &GlmDataset, link: Link) -> Result<GlmMetrics> {
    if test.is_empty() {
        return Err(Error::Validation("test set is empty".into()));
    }
    if test.dim() != w.len() {
        return Err(Error::Usage(format!(
            "weights have {} entries but features have {}",
            w.len(),
            test.dim()
        )));
    }
    let threshold = link.midpoint();
    let mut errors = 0usize;
    let mut nll = 0.0;
    for (x, &y) in test.features.iter().zip(&test.labels) {
        let z: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
        let positive = y == 1.0;
        if (z >= threshold) != positive {
            errors += 1;
        }
        nll -= link.log_likelihood(positive, z);
    }
    Ok(GlmMetrics {
        error_rate: errors as f64 / test.len() as f64,
        neg_loglik: nll,
    })
}
