//! Releasing mechanisms for conjugate exponential families.
//!
//! Each mechanism draws one `θ` from a posterior whose parameter depends on
//! the data. The private variants calibrate their coefficient first and
//! refuse to release when calibration does not verify a satisfying value.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibrate::{self, CalibrationResult, Coefficient, DEFAULT_MAX_ITERS};
use crate::error::{Error, Result};
use crate::expfam::{ConjugateSystem, NaturalParam, PrivacyBudget};
use crate::rng::RngStream;

/// Mechanism selector shared by the library and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Sample the true posterior.
    Direct,
    /// Scale the data contribution by a calibrated `r`.
    Diffused,
    /// Scale the prior by a calibrated `1/m`.
    Concentrated,
    /// Perturb the sufficient statistic with Gaussian noise.
    Gaussian,
    /// One-posterior-sample baseline (GLM only).
    Ops,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Diffused => "diffused",
            Mode::Concentrated => "concentrated",
            Mode::Gaussian => "gaussian",
            Mode::Ops => "ops",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutput {
    pub mechanism: Mode,
    /// Draw in natural-parameter space.
    pub theta: Vec<f64>,
    /// Parameter of the posterior the draw came from.
    pub posterior_param: NaturalParam,
    pub coefficient_used: f64,
    pub seed: u64,
    /// Privatized statistic, set by the Gaussian baseline only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_statistic: Option<f64>,
}

fn release(
    mechanism: Mode,
    system: &ConjugateSystem,
    posterior: NaturalParam,
    coefficient: f64,
    rng: &mut RngStream,
) -> Result<MechanismOutput> {
    let theta = system.sample_theta(&posterior, rng)?;
    Ok(MechanismOutput {
        mechanism,
        theta,
        posterior_param: posterior,
        coefficient_used: coefficient,
        seed: rng.seed(),
        noisy_statistic: None,
    })
}

fn require_prior(system: &ConjugateSystem, eta0: &NaturalParam) -> Result<()> {
    if system.is_normalizable(eta0) {
        Ok(())
    } else {
        Err(Error::Usage(format!("prior {:?} is not normalizable", eta0.coords())))
    }
}

fn refuse_unless_satisfied(res: &CalibrationResult, kind: &str) -> Result<()> {
    if res.satisfied {
        Ok(())
    } else {
        Err(Error::Refused(format!(
            "no {kind} coefficient met the budget after {} iterations (last sup {})",
            res.iterations_used, res.achieved_sup
        )))
    }
}

pub fn sample_direct(
    system: &ConjugateSystem,
    eta0: &NaturalParam,
    data: &[f64],
    rng: &mut RngStream,
) -> Result<MechanismOutput> {
    require_prior(system, eta0)?;
    let posterior = system.update_with_data(eta0, data, 1.0)?;
    release(Mode::Direct, system, posterior, 1.0, rng)
}

/// Posterior `η₀ + r Σ (S(xᵢ), 1)` for an already-calibrated `r`.
pub fn diffused_posterior(system: &ConjugateSystem, eta0: &NaturalParam, data: &[f64], r: f64) -> Result<NaturalParam> {
    system.update_with_data(eta0, data, r)
}

/// Posterior `η₀ / m + Σ (S(xᵢ), 1)` for an already-calibrated `m`.
pub fn concentrated_posterior(system: &ConjugateSystem, eta0: &NaturalParam, data: &[f64], m: f64) -> Result<NaturalParam> {
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::Usage(format!("concentration m must lie in (0, 1], got {m}")));
    }
    system.update_with_data(&eta0.scaled(1.0 / m), data, 1.0)
}

pub fn sample_diffused(
    system: &ConjugateSystem,
    eta0: &NaturalParam,
    data: &[f64],
    budget: PrivacyBudget,
    rng: &mut RngStream,
) -> Result<MechanismOutput> {
    sample_calibrated(Coefficient::Diffusion, system, eta0, data, budget, DEFAULT_MAX_ITERS, rng)
}

pub fn sample_concentrated(
    system: &ConjugateSystem,
    eta0: &NaturalParam,
    data: &[f64],
    budget: PrivacyBudget,
    rng: &mut RngStream,
) -> Result<MechanismOutput> {
    sample_calibrated(Coefficient::Concentration, system, eta0, data, budget, DEFAULT_MAX_ITERS, rng)
}

/// Calibrates `r` or `m` with an explicit iteration cap, then samples.
/// Returns [`Error::Refused`] when no tested coefficient met the budget.
pub fn sample_calibrated(
    kind: Coefficient,
    system: &ConjugateSystem,
    eta0: &NaturalParam,
    data: &[f64],
    budget: PrivacyBudget,
    max_iters: usize,
    rng: &mut RngStream,
) -> Result<MechanismOutput> {
    require_prior(system, eta0)?;
    let cal = calibrate::calibrate(system, eta0, data.len(), budget, max_iters, kind)?;
    release_calibrated(kind, system, eta0, data, &cal, rng)
}

/// Samples with a coefficient found earlier by [`calibrate::calibrate`] for
/// a dataset of the same size.
pub fn release_calibrated(
    kind: Coefficient,
    system: &ConjugateSystem,
    eta0: &NaturalParam,
    data: &[f64],
    cal: &CalibrationResult,
    rng: &mut RngStream,
) -> Result<MechanismOutput> {
    match kind {
        Coefficient::Diffusion => {
            refuse_unless_satisfied(cal, "diffusion")?;
            let posterior = diffused_posterior(system, eta0, data, cal.coefficient)?;
            release(Mode::Diffused, system, posterior, cal.coefficient, rng)
        }
        Coefficient::Concentration => {
            refuse_unless_satisfied(cal, "concentration")?;
            let posterior = concentrated_posterior(system, eta0, data, cal.coefficient)?;
            release(Mode::Concentrated, system, posterior, cal.coefficient, rng)
        }
    }
}

/// Noise scale of the Gaussian baseline: `σ² = λ Δ² / ε`.
pub fn gaussian_noise_sigma(delta: f64, budget: PrivacyBudget) -> f64 {
    (budget.lambda() * delta * delta / budget.epsilon()).sqrt()
}

/// Sufficient-statistic perturbation baseline for the Beta–Bernoulli system.
///
/// `s̃ = Σ S(xᵢ) + N(0, σ²)` is projected onto `[0, n]` before forming the
/// posterior `η₀ + (s̃, n)`.
pub fn gaussian_baseline(
    eta0: &NaturalParam,
    data: &[f64],
    budget: PrivacyBudget,
    rng: &mut RngStream,
) -> Result<MechanismOutput> {
    let system = ConjugateSystem::BetaBernoulli;
    require_prior(&system, eta0)?;
    let stats = system.sufficient_stats(data)?;
    let n = data.len() as f64;
    let s: f64 = stats.iter().map(|v| v[0]).sum();
    let sigma = gaussian_noise_sigma(system.delta(), budget);
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Usage(e.to_string()))?;
    let noisy = (s + noise.sample(rng)).clamp(0.0, n);
    let posterior = NaturalParam::new(vec![eta0.coords()[0] + noisy, eta0.coords()[1] + n]);
    let mut out = release(Mode::Gaussian, &system, posterior, 1.0, rng)?;
    out.noisy_statistic = Some(noisy);
    Ok(out)
}

/// Which calibrated mechanism backs a statistical query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    Diffused,
    Concentrated,
}

/// Releases a private estimate of `(1/n) Σ φ(xᵢ)` as the mean parameter
/// of a Beta posterior draw.
///
/// The predicate values act as continuous sufficient statistics in `[0, 1]`.
/// The returned value is always strictly inside `(0, 1)`.
pub fn beta_stat_query<T, F>(
    data: &[T],
    predicate: F,
    eta0: &NaturalParam,
    budget: PrivacyBudget,
    mode: QueryMode,
    rng: &mut RngStream,
) -> Result<f64>
where
    F: Fn(&T) -> f64,
{
    let values = data
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let v = predicate(x);
            if (0.0..=1.0).contains(&v) {
                Ok(v)
            } else {
                Err(Error::Validation(format!("predicate value {v} for record {i} outside [0, 1]")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let system = ConjugateSystem::BetaBernoulli;
    let out = match mode {
        QueryMode::Diffused => sample_diffused(&system, eta0, &values, budget, rng)?,
        QueryMode::Concentrated => sample_concentrated(&system, eta0, &values, budget, rng)?,
    };
    Ok(sigmoid_open(out.theta[0]))
}

/// Logistic sigmoid clamped to the open unit interval.
pub fn sigmoid_open(theta: f64) -> f64 {
    let rho = if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    };
    rho.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Verifies that a released output's coefficient meets the budget.
pub fn verify_release(
    system: &ConjugateSystem,
    eta0: &NaturalParam,
    n: usize,
    out: &MechanismOutput,
    budget: PrivacyBudget,
) -> Result<bool> {
    let kind = match out.mechanism {
        Mode::Diffused => Coefficient::Diffusion,
        Mode::Concentrated => Coefficient::Concentration,
        Mode::Direct => {
            return Ok(calibrate::privacy_at(system, eta0, n, Coefficient::Diffusion, 1.0, budget.lambda())?
                <= budget.epsilon())
        }
        Mode::Gaussian | Mode::Ops => return Ok(true),
    };
    let sup = calibrate::privacy_at(system, eta0, n, kind, out.coefficient_used, budget.lambda())?;
    Ok(sup <= budget.epsilon())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior() -> NaturalParam {
        NaturalParam::new(vec![6.0, 18.0])
    }

    fn data_38_of_100() -> Vec<f64> {
        let mut d = vec![1.0; 38];
        d.extend(vec![0.0; 62]);
        d
    }

    #[test]
    fn direct_is_deterministic_and_centred() {
        let s = ConjugateSystem::BetaBernoulli;
        let data = data_38_of_100();
        let a = sample_direct(&s, &prior(), &data, &mut RngStream::new(9)).unwrap();
        let b = sample_direct(&s, &prior(), &data, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.posterior_param, NaturalParam::new(vec![44.0, 118.0]));

        let mut rng = RngStream::new(1);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sigmoid_open(sample_direct(&s, &prior(), &data, &mut rng).unwrap().theta[0]))
            .sum::<f64>()
            / n as f64;
        // Beta(44, 74): mean 44/118
        let (a, b) = (44.0f64, 74.0f64);
        let sd = (a * b / ((a + b).powi(2) * (a + b + 1.0))).sqrt() / (n as f64).sqrt();
        assert!((mean - 44.0 / 118.0).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn uniform_prior_without_data_is_uniform() {
        let s = ConjugateSystem::BetaBernoulli;
        let mut rng = RngStream::new(3);
        let n = 20_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sigmoid_open(sample_direct(&s, &NaturalParam::new(vec![1.0, 2.0]), &[], &mut rng).unwrap().theta[0]))
            .collect();
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let frac = draws.iter().filter(|&&d| d < q).count() as f64 / n as f64;
            assert!((frac - q).abs() < 0.015, "cdf at {q}: {frac}");
        }
    }

    #[test]
    fn loose_budget_matches_direct() {
        let s = ConjugateSystem::BetaBernoulli;
        let budget = PrivacyBudget::new(2.0, 1e6).unwrap();
        let data = data_38_of_100();
        let direct = sample_direct(&s, &prior(), &data, &mut RngStream::new(5)).unwrap();
        let diffused = sample_diffused(&s, &prior(), &data, budget, &mut RngStream::new(5)).unwrap();
        let conc = sample_concentrated(&s, &prior(), &data, budget, &mut RngStream::new(5)).unwrap();
        assert_eq!(diffused.coefficient_used, 1.0);
        assert_eq!(diffused.theta, direct.theta);
        assert_eq!(conc.theta, direct.theta);
    }

    #[test]
    fn diffused_posterior_composes_with_calibration() {
        let s = ConjugateSystem::BetaBernoulli;
        let budget = PrivacyBudget::new(2.0, 0.1).unwrap();
        let data = data_38_of_100();
        let out = sample_diffused(&s, &prior(), &data, budget, &mut RngStream::new(11)).unwrap();
        let r = calibrate::find_r(&s, &prior(), 100, budget, DEFAULT_MAX_ITERS).unwrap().coefficient;
        assert_eq!(out.coefficient_used, r);
        let expected = [6.0 + 38.0 * r, 18.0 + 100.0 * r];
        for (got, want) in out.posterior_param.coords().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(verify_release(&s, &prior(), 100, &out, budget).unwrap());
    }

    #[test]
    fn tight_budgets_approach_limits() {
        let s = ConjugateSystem::BetaBernoulli;
        let data = data_38_of_100();
        let tight = PrivacyBudget::new(2.0, 1e-8).unwrap();
        let out = sample_diffused(&s, &prior(), &data, tight, &mut RngStream::new(2)).unwrap();
        assert!(out.posterior_param.distance(&prior()) < 0.1);
        // concentration: the posterior count grows as epsilon shrinks
        let mut last = 0.0;
        for eps in [1.0, 0.1, 0.01] {
            let b = PrivacyBudget::new(2.0, eps).unwrap();
            let out = sample_concentrated(&s, &prior(), &data, b, &mut RngStream::new(2)).unwrap();
            assert!(out.posterior_param.pseudo_count() > last);
            last = out.posterior_param.pseudo_count();
        }
    }

    #[test]
    fn gaussian_noise_scale_and_projection() {
        let b = PrivacyBudget::new(2.0, 2.0).unwrap();
        assert!((gaussian_noise_sigma(1.0, b) - 1.0).abs() < 1e-15);
        let data = data_38_of_100();
        // σ ≈ 1414, so each clipping edge catches close to half the draws
        let tight = PrivacyBudget::new(2.0, 1e-6).unwrap();
        let mut rng = RngStream::new(8);
        let mut at_zero = 0;
        let mut at_n = 0;
        let draws = 10_000;
        for _ in 0..draws {
            let out = gaussian_baseline(&prior(), &data, tight, &mut rng).unwrap();
            let s = out.noisy_statistic.unwrap();
            assert!((0.0..=100.0).contains(&s));
            assert!(ConjugateSystem::BetaBernoulli.is_normalizable(&out.posterior_param));
            if s == 0.0 {
                at_zero += 1;
            } else if s == 100.0 {
                at_n += 1;
            }
        }
        assert!(at_zero as f64 > 0.45 * draws as f64, "{at_zero}");
        assert!(at_n as f64 > 0.45 * draws as f64, "{at_n}");
    }

    #[test]
    fn gaussian_baseline_converges_as_epsilon_grows() {
        let data = data_38_of_100();
        let loose = PrivacyBudget::new(2.0, 1e12).unwrap();
        let out = gaussian_baseline(&prior(), &data, loose, &mut RngStream::new(4)).unwrap();
        assert!((out.noisy_statistic.unwrap() - 38.0).abs() < 1e-3);
    }

    #[test]
    fn stat_query_range_and_validation() {
        let loose = PrivacyBudget::new(2.0, 1e6).unwrap();
        let zeros = vec![0.0; 100];
        let mut rng = RngStream::new(6);
        let mut total = 0.0;
        for _ in 0..200 {
            let rho = beta_stat_query(&zeros, |x| *x, &NaturalParam::new(vec![1.0, 2.0]), loose, QueryMode::Diffused, &mut rng).unwrap();
            assert!(rho > 0.0 && rho < 1.0);
            total += rho;
        }
        // Beta(1, 101) mean ≈ 0.0098
        assert!(total / 200.0 < 0.03);
        let bad = beta_stat_query(&[0.5, 1.5], |x| *x, &prior(), loose, QueryMode::Diffused, &mut rng);
        assert!(matches!(bad, Err(Error::Validation(_))));
    }

    #[test]
    fn stat_query_mean() {
        let loose = PrivacyBudget::new(2.0, 1e6).unwrap();
        // 100 records with predicate mean 0.38
        let records: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 0.76 } else { 0.0 }).collect();
        let mut rng = RngStream::new(12);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| beta_stat_query(&records, |x| *x, &prior(), loose, QueryMode::Concentrated, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        let (a, b) = (44.0f64, 74.0f64);
        let sd = (a * b / ((a + b).powi(2) * (a + b + 1.0))).sqrt() / (n as f64).sqrt();
        assert!((mean - 44.0 / 118.0).abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn refusal_is_typed() {
        // a single iteration can only test r = 1, which fails at λ above λ*
        let s = ConjugateSystem::BetaBernoulli;
        let b = PrivacyBudget::new(15.0, 0.5).unwrap();
        let data = data_38_of_100();
        for kind in [Coefficient::Diffusion, Coefficient::Concentration] {
            let out = sample_calibrated(kind, &s, &prior(), &data, b, 1, &mut RngStream::new(1));
            assert!(matches!(out, Err(Error::Refused(_))));
        }
    }
}
