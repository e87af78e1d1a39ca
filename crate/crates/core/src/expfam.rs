//! Conjugate exponential-family systems and their Rényi divergences.
//!
//! A posterior in a conjugate system is identified by its natural parameter
//! `η = (χ, α)`: the summed sufficient statistics `χ` (length `d`) followed by
//! the pseudo-observation count `α`. Observing a record `x` adds `(S(x), 1)`.
//!
//! The order-λ Rényi divergence between two members of the same family is
//!
//! ```text
//! D_λ(P‖Q) = [C(λη_P + (1-λ)η_Q) - λ C(η_P)] / (λ - 1) + C(η_Q)
//! ```
//!
//! where `C` is the log-partition function. `C` returns `+∞` outside the
//! normalizable set, and that infinity propagates through divergences and
//! suprema instead of being reported as an error.

use std::ops::{Add, Mul, Sub};

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::raw::{digamma, ln_gamma, trigamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Natural parameter of a conjugate prior or posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NaturalParam(Vec<f64>);

impl NaturalParam {
    pub fn new(coords: Vec<f64>) -> Self {
        NaturalParam(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The last coordinate: the effective number of observations.
    pub fn pseudo_count(&self) -> f64 {
        *self.0.last().unwrap_or(&0.0)
    }

    pub fn scaled(&self, factor: f64) -> NaturalParam {
        NaturalParam(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self + factor * other`, componentwise.
    pub fn add_scaled(&self, other: &NaturalParam, factor: f64) -> NaturalParam {
        assert_eq!(self.len(), other.len(), "natural parameter length mismatch");
        NaturalParam(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + factor * b)
                .collect(),
        )
    }

    pub fn distance(&self, other: &NaturalParam) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for NaturalParam {
    fn from(v: Vec<f64>) -> Self {
        NaturalParam(v)
    }
}

impl Add for &NaturalParam {
    type Output = NaturalParam;
    fn add(self, rhs: &NaturalParam) -> NaturalParam {
        self.add_scaled(rhs, 1.0)
    }
}

impl Sub for &NaturalParam {
    type Output = NaturalParam;
    fn sub(self, rhs: &NaturalParam) -> NaturalParam {
        self.add_scaled(rhs, -1.0)
    }
}

impl Mul<f64> for &NaturalParam {
    type Output = NaturalParam;
    fn mul(self, rhs: f64) -> NaturalParam {
        self.scaled(rhs)
    }
}

/// An RDP order/level pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    lambda: f64,
    epsilon: f64,
}

impl PrivacyBudget {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 1.0) {
            return Err(Error::Usage(format!("order lambda must be finite and > 1, got {lambda}")));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::Usage(format!("epsilon must be finite and > 0, got {epsilon}")));
        }
        Ok(PrivacyBudget { lambda, epsilon })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// A conjugate model with bounded sufficient statistics.
///
/// Serializes as `{"family": "beta_bernoulli"}`,
/// `{"family": "dirichlet_categorical", "d": 3}` or
/// `{"family": "gaussian_mean", "sigma_obs": 1.0, "clip": 2.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ConjugateSystem {
    /// Bernoulli likelihood with a Beta prior, `η = (a, b)` for `Beta(a, b - a)`.
    /// Observations may be any value in `[0, 1]`.
    BetaBernoulli,
    /// Categorical over `d` categories with a Dirichlet prior. `η` has `d`
    /// coordinates: counts of categories `1..d-1`, then the total count.
    DirichletCategorical { d: usize },
    /// Gaussian mean with known noise scale. Observations are clamped to
    /// `[-clip, clip]` and `S(x) = x / sigma_obs²`.
    GaussianMean { sigma_obs: f64, clip: f64 },
}

impl ConjugateSystem {
    pub fn beta_bernoulli() -> Self {
        ConjugateSystem::BetaBernoulli
    }

    pub fn dirichlet(d: usize) -> Result<Self> {
        let s = ConjugateSystem::DirichletCategorical { d };
        s.validate()?;
        Ok(s)
    }

    pub fn gaussian_mean(sigma_obs: f64, clip: f64) -> Result<Self> {
        let s = ConjugateSystem::GaussianMean { sigma_obs, clip };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ConjugateSystem::BetaBernoulli => Ok(()),
            ConjugateSystem::DirichletCategorical { d } if d >= 2 => Ok(()),
            ConjugateSystem::DirichletCategorical { d } => {
                Err(Error::Usage(format!("dirichlet system needs d >= 2 categories, got {d}")))
            }
            ConjugateSystem::GaussianMean { sigma_obs, clip } => {
                if sigma_obs.is_finite() && sigma_obs > 0.0 && clip.is_finite() && clip > 0.0 {
                    Ok(())
                } else {
                    Err(Error::Usage(format!(
                        "gaussian system needs positive sigma_obs and clip, got {sigma_obs}, {clip}"
                    )))
                }
            }
        }
    }

    /// Number of sufficient-statistic coordinates.
    pub fn stat_dim(&self) -> usize {
        match *self {
            ConjugateSystem::BetaBernoulli | ConjugateSystem::GaussianMean { .. } => 1,
            ConjugateSystem::DirichletCategorical { d } => d - 1,
        }
    }

    /// Length of a natural parameter for this system.
    pub fn param_len(&self) -> usize {
        self.stat_dim() + 1
    }

    /// Diameter of the sufficient-statistic set.
    pub fn delta(&self) -> f64 {
        match *self {
            ConjugateSystem::BetaBernoulli => 1.0,
            ConjugateSystem::DirichletCategorical { d: 2 } => 1.0,
            ConjugateSystem::DirichletCategorical { .. } => std::f64::consts::SQRT_2,
            ConjugateSystem::GaussianMean { sigma_obs, clip } => 2.0 * clip / (sigma_obs * sigma_obs),
        }
    }

    /// Sufficient statistic of one raw observation.
    ///
    /// Beta–Bernoulli accepts any value in `[0, 1]`; Dirichlet expects a
    /// category label `1..=d`; the Gaussian system clamps to `[-clip, clip]`.
    pub fn sufficient_stat(&self, x: f64) -> Result<Vec<f64>> {
        match *self {
            ConjugateSystem::BetaBernoulli => {
                if (0.0..=1.0).contains(&x) {
                    Ok(vec![x])
                } else {
                    Err(Error::Validation(format!("beta-bernoulli observation {x} outside [0, 1]")))
                }
            }
            ConjugateSystem::DirichletCategorical { d } => {
                if x.fract() != 0.0 || x < 1.0 || x > d as f64 {
                    return Err(Error::Validation(format!("category {x} outside 1..={d}")));
                }
                let k = x as usize;
                let mut s = vec![0.0; d - 1];
                if k < d {
                    s[k - 1] = 1.0;
                }
                Ok(s)
            }
            ConjugateSystem::GaussianMean { sigma_obs, clip } => {
                if x.is_nan() {
                    return Err(Error::Validation("NaN observation".into()));
                }
                Ok(vec![x.clamp(-clip, clip) / (sigma_obs * sigma_obs)])
            }
        }
    }

    pub fn sufficient_stats(&self, data: &[f64]) -> Result<Vec<Vec<f64>>> {
        data.iter().map(|&x| self.sufficient_stat(x)).collect()
    }

    /// Extreme points of the sufficient-statistic set. `pset` is the convex
    /// hull of `η₀ + n (s, 1)` over these.
    pub fn extreme_stats(&self) -> Vec<Vec<f64>> {
        match *self {
            ConjugateSystem::BetaBernoulli => vec![vec![0.0], vec![1.0]],
            ConjugateSystem::DirichletCategorical { d } => (1..=d)
                .map(|k| self.sufficient_stat(k as f64).expect("valid category"))
                .collect(),
            ConjugateSystem::GaussianMean { sigma_obs, clip } => {
                let s = clip / (sigma_obs * sigma_obs);
                vec![vec![-s], vec![s]]
            }
        }
    }

    /// Extreme points of `Diff`: `S(i) - S(j)` for every ordered pair of
    /// distinct extreme statistics.
    pub fn diff_directions(&self) -> Vec<Vec<f64>> {
        let ext = self.extreme_stats();
        let mut out = Vec::with_capacity(ext.len() * (ext.len() - 1));
        for (i, si) in ext.iter().enumerate() {
            for (j, sj) in ext.iter().enumerate() {
                if i != j {
                    out.push(si.iter().zip(sj).map(|(a, b)| a - b).collect());
                }
            }
        }
        out
    }

    fn check_len(&self, eta: &NaturalParam) -> Result<()> {
        if eta.len() != self.param_len() {
            return Err(Error::Usage(format!(
                "natural parameter has {} coordinates, system expects {}",
                eta.len(),
                self.param_len()
            )));
        }
        if !eta.is_finite() {
            return Err(Error::Usage(format!("natural parameter {:?} is not finite", eta.coords())));
        }
        Ok(())
    }

    /// Gamma shape parameters implied by `η`, when all are positive.
    ///
    /// Beta gives `[a, b - a]`; Dirichlet gives the `d` category counts with
    /// the implicit last category at the end.
    pub fn concentrations(&self, eta: &NaturalParam) -> Option<Vec<f64>> {
        match *self {
            ConjugateSystem::GaussianMean { .. } => None,
            _ => {
                let c = eta.coords();
                let (head, total) = c.split_at(c.len() - 1);
                let rest = total[0] - head.iter().sum::<f64>();
                let mut out = head.to_vec();
                out.push(rest);
                out.iter().all(|&v| v > 0.0).then_some(out)
            }
        }
    }

    pub fn is_normalizable(&self, eta: &NaturalParam) -> bool {
        self.check_len(eta).is_ok() && self.log_partition_unchecked(eta).is_finite()
    }

    /// `C(η)`, or `+∞` when `η` is not normalizable.
    pub fn log_partition(&self, eta: &NaturalParam) -> Result<f64> {
        self.check_len(eta)?;
        Ok(self.log_partition_unchecked(eta))
    }

    fn log_partition_unchecked(&self, eta: &NaturalParam) -> f64 {
        match *self {
            ConjugateSystem::GaussianMean { sigma_obs, .. } => {
                let (e1, e2) = (eta.coords()[0], eta.coords()[1]);
                if e2 <= 0.0 {
                    return f64::INFINITY;
                }
                let s2 = sigma_obs * sigma_obs;
                0.5 * (LN_2PI + (s2 / e2).ln()) + s2 * e1 * e1 / (2.0 * e2)
            }
            _ => match self.concentrations(eta) {
                Some(counts) => {
                    counts.iter().map(|&c| ln_gamma(c)).sum::<f64>() - ln_gamma(eta.pseudo_count())
                }
                None => f64::INFINITY,
            },
        }
    }

    /// Hessian of `C` at a normalizable `η`.
    pub fn hessian(&self, eta: &NaturalParam) -> Option<Vec<Vec<f64>>> {
        match *self {
            ConjugateSystem::GaussianMean { sigma_obs, .. } => {
                let (e1, e2) = (eta.coords()[0], eta.coords()[1]);
                if e2 <= 0.0 {
                    return None;
                }
                let s2 = sigma_obs * sigma_obs;
                let off = -s2 * e1 / (e2 * e2);
                Some(vec![
                    vec![s2 / e2, off],
                    vec![off, 0.5 / (e2 * e2) + s2 * e1 * e1 / (e2 * e2 * e2)],
                ])
            }
            _ => {
                let counts = self.concentrations(eta)?;
                let k = counts.len() - 1;
                let tail = trigamma(counts[k]);
                let total = trigamma(eta.pseudo_count());
                let mut h = vec![vec![0.0; k + 1]; k + 1];
                for i in 0..k {
                    for j in 0..k {
                        h[i][j] = tail + if i == j { trigamma(counts[i]) } else { 0.0 };
                    }
                    h[i][k] = -tail;
                    h[k][i] = -tail;
                }
                h[k][k] = tail - total;
                Some(h)
            }
        }
    }

    /// Gradient of `C` (the mean of `T(θ)`) at a normalizable `η`.
    pub fn gradient(&self, eta: &NaturalParam) -> Option<Vec<f64>> {
        match *self {
            ConjugateSystem::GaussianMean { sigma_obs, .. } => {
                let (e1, e2) = (eta.coords()[0], eta.coords()[1]);
                if e2 <= 0.0 {
                    return None;
                }
                let s2 = sigma_obs * sigma_obs;
                Some(vec![s2 * e1 / e2, -0.5 / e2 - s2 * e1 * e1 / (2.0 * e2 * e2)])
            }
            _ => {
                let counts = self.concentrations(eta)?;
                let k = counts.len() - 1;
                let tail = digamma(counts[k]);
                let mut g: Vec<f64> = counts[..k].iter().map(|&c| digamma(c) - tail).collect();
                g.push(tail - digamma(eta.pseudo_count()));
                Some(g)
            }
        }
    }

    /// `η₀ + r Σ (S(xᵢ), 1)` for precomputed statistics.
    pub fn posterior_update(&self, eta0: &NaturalParam, stats: &[Vec<f64>], r: f64) -> Result<NaturalParam> {
        self.check_len(eta0)?;
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Usage(format!("scale r must lie in (0, 1], got {r}")));
        }
        let dim = self.stat_dim();
        let mut sum = vec![0.0; dim + 1];
        for s in stats {
            if s.len() != dim {
                return Err(Error::Usage(format!(
                    "sufficient statistic has {} coordinates, system expects {dim}",
                    s.len()
                )));
            }
            for (acc, v) in sum.iter_mut().zip(s) {
                *acc += v;
            }
            sum[dim] += 1.0;
        }
        Ok(eta0.add_scaled(&NaturalParam(sum), r))
    }

    /// Posterior update from raw observations.
    pub fn update_with_data(&self, eta0: &NaturalParam, data: &[f64], r: f64) -> Result<NaturalParam> {
        let stats = self.sufficient_stats(data)?;
        self.posterior_update(eta0, &stats, r)
    }

    /// Closed-form `D_λ(p(θ|η_P) ‖ p(θ|η_Q))`; `+∞` when the extrapolated
    /// parameter `λη_P + (1-λ)η_Q` is not normalizable.
    pub fn renyi_divergence(&self, eta_p: &NaturalParam, eta_q: &NaturalParam, lambda: f64) -> Result<f64> {
        if !(lambda.is_finite() && lambda > 1.0) {
            return Err(Error::Usage(format!("order lambda must be finite and > 1, got {lambda}")));
        }
        let cp = self.log_partition(eta_p)?;
        let cq = self.log_partition(eta_q)?;
        if !cp.is_finite() || !cq.is_finite() {
            return Err(Error::Usage("divergence between non-normalizable parameters".into()));
        }
        Ok(self.divergence_from_parts(eta_p, eta_q, cp, cq, lambda))
    }

    fn divergence_from_parts(&self, eta_p: &NaturalParam, eta_q: &NaturalParam, cp: f64, cq: f64, lambda: f64) -> f64 {
        // λη_P + (1-λ)η_Q = η_P + (λ-1)(η_P - η_Q)
        let eta_l = eta_p.add_scaled(&(eta_p - eta_q), lambda - 1.0);
        let cl = self.log_partition_unchecked(&eta_l);
        if !cl.is_finite() {
            return f64::INFINITY;
        }
        ((cl - lambda * cp) / (lambda - 1.0) + cq).max(0.0)
    }

    /// Supremum of `D_λ` over `r`-neighboring pairs in `pset(η₀, n_eff)`.
    ///
    /// Evaluated on the boundary pairs: `η_P` ranges over the vertices
    /// `η₀ + n_eff (S(k), 1)` and `η_Q = η_P + r (S(i) - S(j), 0)` over every
    /// ordered pair of distinct extreme statistics. Pairs with a
    /// non-normalizable `η_Q` cannot arise from data and are skipped.
    pub fn sup_neighbor_divergence(&self, eta0: &NaturalParam, n_eff: f64, r: f64, lambda: f64) -> Result<f64> {
        if !self.is_normalizable(eta0) {
            return Err(Error::Usage(format!("prior {:?} is not normalizable", eta0.coords())));
        }
        if !(n_eff >= 0.0 && n_eff.is_finite()) {
            return Err(Error::Usage(format!("effective count must be finite and >= 0, got {n_eff}")));
        }
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Usage(format!("scale r must lie in (0, 1], got {r}")));
        }
        if !(lambda.is_finite() && lambda > 1.0) {
            return Err(Error::Usage(format!("order lambda must be finite and > 1, got {lambda}")));
        }
        let dim = self.stat_dim();
        let directions = self.diff_directions();
        let mut sup: f64 = 0.0;
        for vertex in self.extreme_stats() {
            let mut update = vertex.clone();
            update.push(1.0);
            let eta_p = eta0.add_scaled(&NaturalParam(update), n_eff);
            let cp = self.log_partition_unchecked(&eta_p);
            debug_assert!(cp.is_finite(), "posterior vertex must be normalizable");
            for dir in &directions {
                let mut offset = dir.clone();
                offset.push(0.0);
                debug_assert_eq!(offset.len(), dim + 1);
                let eta_q = eta_p.add_scaled(&NaturalParam(offset), r);
                let cq = self.log_partition_unchecked(&eta_q);
                if !cq.is_finite() {
                    continue;
                }
                let d = self.divergence_from_parts(&eta_p, &eta_q, cp, cq, lambda);
                if d == f64::INFINITY {
                    return Ok(f64::INFINITY);
                }
                sup = sup.max(d);
            }
        }
        Ok(sup)
    }

    /// Largest order below which direct sampling has a finite guarantee:
    /// one plus the smallest implied pseudo-count. Infinite for the Gaussian
    /// system.
    pub fn lambda_star(&self, eta0: &NaturalParam) -> Result<f64> {
        if !self.is_normalizable(eta0) {
            return Err(Error::Usage(format!("prior {:?} is not normalizable", eta0.coords())));
        }
        match self.concentrations(eta0) {
            Some(c) => Ok(1.0 + c.iter().cloned().fold(f64::INFINITY, f64::min)),
            None => Ok(f64::INFINITY),
        }
    }

    /// Folds non-sensitive observations into the prior.
    pub fn fold_public_data(&self, eta0: &NaturalParam, public_stats: &[Vec<f64>]) -> Result<NaturalParam> {
        if !self.is_normalizable(eta0) {
            return Err(Error::Usage(format!("prior {:?} is not normalizable", eta0.coords())));
        }
        self.posterior_update(eta0, public_stats, 1.0)
    }

    /// Draws `θ` in natural-parameter space from `p(θ | η)`.
    ///
    /// Beta: log-odds of a Beta draw. Dirichlet: `ln(p_k / p_d)` for
    /// `k < d`. Gaussian: a draw of the mean.
    pub fn sample_theta<R: Rng + ?Sized>(&self, eta: &NaturalParam, rng: &mut R) -> Result<Vec<f64>> {
        self.check_len(eta)?;
        match *self {
            ConjugateSystem::GaussianMean { sigma_obs, .. } => {
                let (e1, e2) = (eta.coords()[0], eta.coords()[1]);
                if e2 <= 0.0 {
                    return Err(Error::Usage("gaussian posterior needs a positive count".into()));
                }
                let s2 = sigma_obs * sigma_obs;
                let normal = Normal::new(s2 * e1 / e2, (s2 / e2).sqrt())
                    .map_err(|e| Error::Usage(e.to_string()))?;
                Ok(vec![normal.sample(rng)])
            }
            _ => {
                let counts = self
                    .concentrations(eta)
                    .ok_or_else(|| Error::Usage(format!("cannot sample from {:?}", eta.coords())))?;
                let logs = counts
                    .iter()
                    .map(|&c| log_gamma_variate(c, rng))
                    .collect::<Result<Vec<f64>>>()?;
                let last = *logs.last().unwrap();
                Ok(logs[..logs.len() - 1].iter().map(|l| l - last).collect())
            }
        }
    }
}

/// `ln G` for `G ~ Gamma(shape, 1)`.
///
/// Shapes below one use `G = G' U^{1/shape}` with `G' ~ Gamma(shape + 1)`,
/// taken in log space so tiny draws do not underflow to zero.
fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if shape < 1.0 {
        let g = Gamma::new(shape + 1.0, 1.0).map_err(|e| Error::Usage(e.to_string()))?;
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        Ok(g.sample(rng).ln() + u.ln() / shape)
    } else {
        let g = Gamma::new(shape, 1.0).map_err(|e| Error::Usage(e.to_string()))?;
        Ok(g.sample(rng).ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::raw::ln_gamma;

    fn eta(v: &[f64]) -> NaturalParam {
        NaturalParam::new(v.to_vec())
    }

    #[test]
    fn beta_log_partition() {
        let s = ConjugateSystem::BetaBernoulli;
        assert!(s.log_partition(&eta(&[1.0, 2.0])).unwrap().abs() < 1e-13);
        let expected = ln_gamma(6.0) + ln_gamma(12.0) - ln_gamma(18.0);
        assert!((s.log_partition(&eta(&[6.0, 18.0])).unwrap() - expected).abs() < 1e-12);
        assert_eq!(s.log_partition(&eta(&[0.0, 1.0])).unwrap(), f64::INFINITY);
        assert_eq!(s.log_partition(&eta(&[2.0, 2.0])).unwrap(), f64::INFINITY);
        assert!(matches!(s.log_partition(&eta(&[1.0, 2.0, 3.0])), Err(Error::Usage(_))));
    }

    #[test]
    fn gaussian_log_partition_matches_normal_integral() {
        let s = ConjugateSystem::gaussian_mean(2.0, 3.0).unwrap();
        let e = eta(&[0.7, 5.0]);
        // ∫ exp(η₁ μ - η₂ μ² / (2σ²)) dμ = sqrt(2πσ²/η₂) exp(σ² η₁² / (2 η₂))
        let sigma2 = 4.0;
        let expected = (2.0 * std::f64::consts::PI * sigma2 / 5.0).sqrt().ln() + sigma2 * 0.49 / 10.0;
        assert!((s.log_partition(&e).unwrap() - expected).abs() < 1e-12);
        assert_eq!(s.log_partition(&eta(&[0.7, 0.0])).unwrap(), f64::INFINITY);
        assert!((s.delta() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn posterior_updates() {
        let s = ConjugateSystem::BetaBernoulli;
        let mut data = vec![1.0; 38];
        data.extend(vec![0.0; 62]);
        let post = s.update_with_data(&eta(&[6.0, 18.0]), &data, 1.0).unwrap();
        assert_eq!(post, eta(&[44.0, 118.0]));
        let same = s.update_with_data(&eta(&[6.0, 18.0]), &[], 0.5).unwrap();
        assert_eq!(same, eta(&[6.0, 18.0]));

        let dir = ConjugateSystem::dirichlet(3).unwrap();
        let post = dir.update_with_data(&eta(&[1.0, 1.0, 3.0]), &[1.0], 1.0).unwrap();
        assert_eq!(post, eta(&[2.0, 1.0, 4.0]));
        let post = dir.update_with_data(&eta(&[1.0, 1.0, 3.0]), &[3.0], 1.0).unwrap();
        assert_eq!(post, eta(&[1.0, 1.0, 4.0]));
        assert!(dir.update_with_data(&eta(&[1.0, 1.0, 3.0]), &[4.0], 1.0).is_err());
        assert!(s.update_with_data(&eta(&[1.0, 2.0]), &[1.0], 0.0).is_err());
        assert!(s.update_with_data(&eta(&[1.0, 2.0]), &[1.5], 1.0).is_err());
    }

    #[test]
    fn divergence_special_cases() {
        let s = ConjugateSystem::BetaBernoulli;
        for &l in &[1.5, 2.0, 10.0] {
            assert!(s.renyi_divergence(&eta(&[7.0, 19.0]), &eta(&[7.0, 19.0]), l).unwrap() < 1e-12);
        }
        // η_L first coordinate = 6 + 7 (6 - 7) = -1
        let d = s.renyi_divergence(&eta(&[6.0, 18.0]), &eta(&[7.0, 18.0]), 8.0).unwrap();
        assert_eq!(d, f64::INFINITY);
        assert!(s.renyi_divergence(&eta(&[0.0, 18.0]), &eta(&[7.0, 18.0]), 2.0).is_err());
        assert!(s.renyi_divergence(&eta(&[6.0, 18.0]), &eta(&[7.0, 18.0]), 1.0).is_err());
    }

    #[test]
    fn gaussian_divergence_closed_form() {
        // Equal-variance normals: D_λ = λ (m₁ - m₂)² / (2 s²)
        let sigma = 1.5;
        let s = ConjugateSystem::gaussian_mean(sigma, 2.0).unwrap();
        let (p, q) = (eta(&[1.0, 4.0]), eta(&[1.8, 4.0]));
        let s2 = sigma * sigma;
        let (m1, m2, var) = (s2 * 1.0 / 4.0, s2 * 1.8 / 4.0, s2 / 4.0);
        for &l in &[1.5, 3.0, 40.0] {
            let expected = l * (m1 - m2) * (m1 - m2) / (2.0 * var);
            assert!((s.renyi_divergence(&p, &q, l).unwrap() - expected).abs() < 1e-10);
        }
        // every boundary pair has the same divergence λ r² Δ² σ² / (2 η₂)
        let e0 = eta(&[0.0, 2.0]);
        let sup = s.sup_neighbor_divergence(&e0, 10.0, 0.5, 3.0).unwrap();
        let delta = s.delta();
        let expected = 3.0 * 0.25 * delta * delta * s2 / (2.0 * 12.0);
        assert!((sup - expected).abs() < 1e-10);
        assert_eq!(s.lambda_star(&e0).unwrap(), f64::INFINITY);
    }

    #[test]
    fn lambda_star_values() {
        let s = ConjugateSystem::BetaBernoulli;
        assert_eq!(s.lambda_star(&eta(&[6.0, 18.0])).unwrap(), 7.0);
        assert_eq!(s.lambda_star(&eta(&[1.0, 2.0])).unwrap(), 2.0);
        assert_eq!(s.lambda_star(&eta(&[0.5, 1.0])).unwrap(), 1.5);
        assert!(s.lambda_star(&eta(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn folding_public_data() {
        let s = ConjugateSystem::BetaBernoulli;
        let ones = s.sufficient_stats(&[1.0; 10]).unwrap();
        assert_eq!(s.fold_public_data(&eta(&[1.0, 2.0]), &ones).unwrap(), eta(&[11.0, 12.0]));
        assert_eq!(s.fold_public_data(&eta(&[6.0, 18.0]), &[]).unwrap(), eta(&[6.0, 18.0]));
        let mut mixed = vec![1.0; 5];
        mixed.extend([0.0; 5]);
        let folded = s.fold_public_data(&eta(&[1.0, 2.0]), &s.sufficient_stats(&mixed).unwrap()).unwrap();
        assert_eq!(s.lambda_star(&folded).unwrap(), 7.0);
    }

    #[test]
    fn supremum_regimes() {
        let s = ConjugateSystem::BetaBernoulli;
        let e0 = eta(&[6.0, 18.0]);
        assert_eq!(s.sup_neighbor_divergence(&e0, 100.0, 1.0, 15.0).unwrap(), f64::INFINITY);
        let finite = s.sup_neighbor_divergence(&e0, 100.0, 1.0, 2.0).unwrap();
        assert!(finite.is_finite() && finite > 0.0);
        assert!(s.sup_neighbor_divergence(&e0, 0.0, 1e-12, 3.0).unwrap() <= 1e-6);
        assert!(s.sup_neighbor_divergence(&eta(&[0.0, 1.0]), 1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn dirichlet_boundary_pair_count() {
        let s = ConjugateSystem::dirichlet(4).unwrap();
        assert_eq!(s.extreme_stats().len() * s.diff_directions().len(), 4 * 4 * 3);
        let mut beta = ConjugateSystem::BetaBernoulli.diff_directions();
        beta.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(beta, vec![vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let h = 1e-5;
        let cases = [
            (ConjugateSystem::BetaBernoulli, eta(&[3.0, 7.5])),
            (ConjugateSystem::dirichlet(3).unwrap(), eta(&[2.0, 1.5, 6.0])),
            (ConjugateSystem::gaussian_mean(1.2, 1.0).unwrap(), eta(&[0.4, 3.0])),
        ];
        for (s, e) in cases {
            let hess = s.hessian(&e).unwrap();
            let grad = s.gradient(&e).unwrap();
            for j in 0..e.len() {
                let mut step = vec![0.0; e.len()];
                step[j] = h;
                let up = e.add_scaled(&NaturalParam::new(step.clone()), 1.0);
                let dn = e.add_scaled(&NaturalParam::new(step), -1.0);
                let fd_c = (s.log_partition(&up).unwrap() - s.log_partition(&dn).unwrap()) / (2.0 * h);
                assert!((fd_c - grad[j]).abs() < 1e-6, "{s:?} gradient {j}");
                let gu = s.gradient(&up).unwrap();
                let gd = s.gradient(&dn).unwrap();
                for i in 0..e.len() {
                    let fd = (gu[i] - gd[i]) / (2.0 * h);
                    assert!((fd - hess[i][j]).abs() < 1e-5, "{s:?} hessian ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn system_json_shape() {
        let s = ConjugateSystem::dirichlet(3).unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"family":"dirichlet_categorical","d":3}"#);
        let g: ConjugateSystem = serde_json::from_str(r#"{"family":"gaussian_mean","sigma_obs":1.0,"clip":2.0}"#).unwrap();
        assert_eq!(g, ConjugateSystem::GaussianMean { sigma_obs: 1.0, clip: 2.0 });
        assert_eq!(serde_json::to_string(&eta(&[6.0, 18.0])).unwrap(), "[6.0,18.0]");
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
        assert!(PrivacyBudget::new(2.0, 0.0).is_err());
        assert!(PrivacyBudget::new(2.0, f64::INFINITY).is_err());
        assert!(PrivacyBudget::new(2.0, 0.5).is_ok());
    }
}
