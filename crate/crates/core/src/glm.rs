//! Posterior sampling for generalized linear models with Gaussian priors.
//!
//! The posterior over weights is
//! `p(w | D) ∝ exp(−nβ‖w‖²/2) · Π p(yᵢ | w, xᵢ)^ρ`, where the tempering
//! exponent ρ and the prior scale β are set from the privacy budget.

use std::f64::consts::{LN_2, PI};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::slice::{run_chain, CoordinateTarget, SamplerConfig};

const NORM_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Logistic,
    Probit,
    Cloglog,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn ln_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * (2.0 * PI).ln()
}

/// `ln Φ(z)`; switches to the asymptotic tail series where erfc underflows.
pub(crate) fn ln_normal_cdf(z: f64) -> f64 {
    if z < -30.0 {
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        ln_normal_pdf(z) - (-z).ln() + series.ln()
    } else {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    }
}

impl Link {
    /// Mean function g⁻¹.
    pub fn inverse(self, z: f64) -> f64 {
        match self {
            Link::Logistic => sigmoid(z),
            Link::Probit => 0.5 * erfc(-z / std::f64::consts::SQRT_2),
            Link::Cloglog => -(-z.exp()).exp_m1(),
        }
    }

    /// The linear predictor at which g⁻¹ equals ½.
    pub fn midpoint(self) -> f64 {
        match self {
            Link::Logistic | Link::Probit => 0.0,
            Link::Cloglog => LN_2.ln(),
        }
    }

    /// `ln p(y | z)` for a binary label.
    pub fn log_likelihood(self, y: bool, z: f64) -> f64 {
        match (self, y) {
            (Link::Logistic, true) => -softplus(-z),
            (Link::Logistic, false) => -softplus(z),
            (Link::Probit, true) => ln_normal_cdf(z),
            (Link::Probit, false) => ln_normal_cdf(-z),
            (Link::Cloglog, true) => {
                let t = z.exp();
                if t < 1e-8 {
                    // ln(1 − e^{−t}) = ln t − t/2 + O(t²)
                    z - 0.5 * t
                } else {
                    (-(-t).exp_m1()).ln()
                }
            }
            (Link::Cloglog, false) => -z.exp(),
        }
    }

    /// Derivative of [`Link::log_likelihood`] with respect to `z`.
    pub fn log_likelihood_derivative(self, y: bool, z: f64) -> f64 {
        match (self, y) {
            (Link::Logistic, true) => sigmoid(-z),
            (Link::Logistic, false) => -sigmoid(z),
            (Link::Probit, true) => (ln_normal_pdf(z) - ln_normal_cdf(z)).exp(),
            (Link::Probit, false) => -(ln_normal_pdf(z) - ln_normal_cdf(-z)).exp(),
            (Link::Cloglog, true) => {
                let t = z.exp();
                if t < 1e-300 {
                    1.0
                } else {
                    t / t.exp_m1()
                }
            }
            (Link::Cloglog, false) => -z.exp(),
        }
    }
}

/// Likelihood bounds for a GLM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmSpec {
    pub link: Link,
    /// Bound on the feature norm, `‖x‖₂ ≤ c`.
    pub c: f64,
    pub y_range: [f64; 2],
    pub inv_link_range: [f64; 2],
}

impl GlmSpec {
    /// Binary classification: labels in {0,1} and a mean function onto (0,1).
    pub fn binary(link: Link, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Usage(format!("feature norm bound must be positive, got {c}")));
        }
        Ok(GlmSpec {
            link,
            c,
            y_range: [0.0, 1.0],
            inv_link_range: [0.0, 1.0],
        })
    }

    pub fn b(&self) -> f64 {
        let [y_min, y_max] = self.y_range;
        let [g_min, g_max] = self.inv_link_range;
        (y_min - g_max).abs().max((y_max - g_min).abs())
    }
}

/// Features (row-major) with binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl GlmDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Validation(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            let d = first.len();
            if let Some((i, _)) = features.iter().enumerate().find(|(_, r)| r.len() != d) {
                return Err(Error::Validation(format!("row {i} has a different width than row 0")));
            }
        }
        Ok(GlmDataset { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn max_row_norm(&self) -> f64 {
        self.features.iter().map(|r| norm(r)).fold(0.0, f64::max)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A (possibly tempered, possibly truncated) GLM posterior.
#[derive(Debug, Clone)]
pub struct GlmPosterior {
    spec: GlmSpec,
    data: Arc<GlmDataset>,
    labels: Vec<bool>,
    // −1 for positive labels and +1 otherwise, so that ln p = −softplus(flip · z)
    flip: Vec<f64>,
    columns: Vec<Vec<f64>>,
    beta: f64,
    temper_rho: f64,
    support_radius: Option<f64>,
}

impl GlmPosterior {
    pub fn new(spec: GlmSpec, data: Arc<GlmDataset>, beta: f64, temper_rho: f64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Validation("GLM posterior needs at least one example".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Usage(format!("prior scale must be positive, got {beta}")));
        }
        if !(temper_rho > 0.0 && temper_rho <= 1.0) {
            return Err(Error::Usage(format!("temper exponent must lie in (0, 1], got {temper_rho}")));
        }
        for (i, row) in data.features.iter().enumerate() {
            let r = norm(row);
            if !(r <= spec.c + NORM_SLACK) {
                return Err(Error::Validation(format!(
                    "row {i} has norm {r}, above the bound c = {}",
                    spec.c
                )));
            }
        }
        let [y_min, y_max] = spec.y_range;
        let mut labels = Vec::with_capacity(data.len());
        for (i, &y) in data.labels.iter().enumerate() {
            if !(y_min..=y_max).contains(&y) || (y != 0.0 && y != 1.0) {
                return Err(Error::Validation(format!("label {y} at row {i} is not in {{0, 1}}")));
            }
            labels.push(y == 1.0);
        }
        let d = data.dim();
        let columns = (0..d).map(|j| data.features.iter().map(|r| r[j]).collect()).collect();
        let flip = labels.iter().map(|&y| if y { -1.0 } else { 1.0 }).collect();
        Ok(GlmPosterior {
            spec,
            data,
            labels,
            flip,
            columns,
            beta,
            temper_rho,
            support_radius: None,
        })
    }

    /// Restricts the prior to the ball `‖w‖ ≤ radius`.
    pub fn with_support_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::Usage(format!("support radius must be positive, got {radius}")));
        }
        self.support_radius = Some(radius);
        Ok(self)
    }

    pub fn spec(&self) -> &GlmSpec {
        &self.spec
    }

    pub fn data(&self) -> &GlmDataset {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn temper_rho(&self) -> f64 {
        self.temper_rho
    }

    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    fn prior_precision(&self) -> f64 {
        self.n() as f64 * self.beta
    }

    fn tempered_loglik(&self, z: &[f64]) -> f64 {
        let link = self.spec.link;
        let s: f64 = self.labels.iter().zip(z).map(|(&y, &z)| link.log_likelihood(y, z)).sum();
        self.temper_rho * s
    }

    /// Tempered log-likelihood at `z + step * x_j` for feature column `j`.
    fn tempered_loglik_shifted(&self, z: &[f64], j: usize, step: f64) -> f64 {
        let col = &self.columns[j];
        let s: f64 = match self.spec.link {
            Link::Logistic => self
                .flip
                .iter()
                .zip(z)
                .zip(col)
                .map(|((f, z), x)| {
                    let u = f * (z + step * x);
                    -(u.max(0.0) + (1.0 + (-u.abs()).exp()).ln())
                })
                .sum(),
            link => self
                .labels
                .iter()
                .zip(z)
                .zip(col)
                .map(|((&y, z), x)| link.log_likelihood(y, z + step * x))
                .sum(),
        };
        self.temper_rho * s
    }

    /// Unnormalized log density.
    pub fn log_density(&self, w: &[f64]) -> f64 {
        let sq: f64 = w.iter().map(|x| x * x).sum();
        if let Some(radius) = self.support_radius {
            if sq.sqrt() > radius {
                return f64::NEG_INFINITY;
            }
        }
        let z: Vec<f64> = self.data.features.iter().map(|x| dot(x, w)).collect();
        -0.5 * self.prior_precision() * sq + self.tempered_loglik(&z)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let link = self.spec.link;
        let mut g: Vec<f64> = w.iter().map(|x| -self.prior_precision() * x).collect();
        for (x, &y) in self.data.features.iter().zip(&self.labels) {
            let s = self.temper_rho * link.log_likelihood_derivative(y, dot(x, w));
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += s * xj;
            }
        }
        g
    }
}

pub fn log_posterior_density(post: &GlmPosterior, w: &[f64]) -> f64 {
    post.log_density(w)
}

/// Slice-sampler target that keeps `z = Xw` up to date across coordinate moves.
struct GlmTarget<'a> {
    post: &'a GlmPosterior,
    w: Vec<f64>,
    z: Vec<f64>,
    sq_norm: f64,
}

impl<'a> GlmTarget<'a> {
    fn new(post: &'a GlmPosterior, w: Vec<f64>) -> Self {
        let mut t = GlmTarget {
            post,
            z: vec![0.0; post.n()],
            sq_norm: 0.0,
            w,
        };
        t.refresh();
        t
    }
}

impl CoordinateTarget for GlmTarget<'_> {
    fn state(&self) -> &[f64] {
        &self.w
    }

    fn log_density_at(&mut self, j: usize, value: f64) -> f64 {
        let sq = (self.sq_norm - self.w[j] * self.w[j] + value * value).max(0.0);
        if let Some(radius) = self.post.support_radius {
            if sq.sqrt() > radius {
                return f64::NEG_INFINITY;
            }
        }
        let step = value - self.w[j];
        -0.5 * self.post.prior_precision() * sq + self.post.tempered_loglik_shifted(&self.z, j, step)
    }

    fn set(&mut self, j: usize, value: f64) {
        let step = value - self.w[j];
        for (z, x) in self.z.iter_mut().zip(&self.post.columns[j]) {
            *z += step * x;
        }
        self.sq_norm += value * value - self.w[j] * self.w[j];
        self.w[j] = value;
    }

    fn refresh(&mut self) {
        for (z, x) in self.z.iter_mut().zip(&self.post.data.features) {
            *z = dot(x, &self.w);
        }
        self.sq_norm = self.w.iter().map(|x| x * x).sum();
    }
}

/// Order/level pair for GLM mechanisms. Unlike the conjugate mechanisms the
/// guarantee holds down to λ = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmBudget {
    lambda: f64,
    epsilon: f64,
}

impl GlmBudget {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        if !(lambda >= 1.0 && lambda.is_finite()) {
            return Err(Error::Usage(format!("order must be at least 1, got {lambda}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Usage(format!("privacy level must be positive and finite, got {epsilon}")));
        }
        Ok(GlmBudget { lambda, epsilon })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// RDP level `2c²B²λ/(nβ)` of sampling the untempered posterior.
pub fn direct_rdp_budget(spec: &GlmSpec, n: usize, beta: f64, lambda: f64) -> f64 {
    2.0 * spec.c.powi(2) * spec.b().powi(2) * lambda / (n as f64 * beta)
}

/// Prior scale for the concentrated mechanism.
pub fn concentrated_beta(spec: &GlmSpec, n: usize, beta0: f64, budget: GlmBudget) -> f64 {
    let needed = 2.0 * spec.c.powi(2) * spec.b().powi(2) * budget.lambda / (n as f64 * budget.epsilon);
    needed.max(beta0)
}

/// Tempering exponent for the diffuse mechanism.
pub fn diffuse_rho(spec: &GlmSpec, n: usize, beta: f64, budget: GlmBudget) -> f64 {
    let ratio = budget.epsilon * n as f64 * beta / (2.0 * spec.c.powi(2) * spec.b().powi(2) * budget.lambda);
    ratio.sqrt().min(1.0)
}

/// Tempering exponent that makes the truncated-prior sampler `epsilon_pure`-DP.
pub fn ops_rho(c: f64, beta: f64, epsilon_pure: f64) -> f64 {
    (epsilon_pure * beta / (4.0 * c * c)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSample {
    pub w: Vec<f64>,
    pub chain_meta: ChainMeta,
}

/// Draws `n_samples` states after burn-in, starting from `w = 0`.
pub fn sample_chain<R: Rng + ?Sized>(
    post: &GlmPosterior,
    n_samples: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let mut target = GlmTarget::new(post, vec![0.0; post.dim()]);
    run_chain(&mut target, n_samples, cfg, rng)
}

/// One posterior draw (the state after burn-in).
pub fn sample_posterior(post: &GlmPosterior, cfg: &SamplerConfig, rng: &mut RngStream) -> Result<WeightSample> {
    let seed = rng.seed();
    let mut draws = sample_chain(post, 1, cfg, rng)?;
    let w = draws.pop().unwrap_or_default();
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::Accuracy {
            estimate: f64::NAN,
            change: f64::INFINITY,
            tolerance: 0.0,
        });
    }
    Ok(WeightSample {
        w,
        chain_meta: ChainMeta {
            burn_in: cfg.burn_in,
            thinning: cfg.thinning,
            seed,
        },
    })
}

pub fn concentrated_glm(
    spec: GlmSpec,
    data: Arc<GlmDataset>,
    beta0: f64,
    budget: GlmBudget,
    cfg: &SamplerConfig,
    rng: &mut RngStream,
) -> Result<WeightSample> {
    let beta = concentrated_beta(&spec, data.len(), beta0, budget);
    let post = GlmPosterior::new(spec, data, beta, 1.0)?;
    sample_posterior(&post, cfg, rng)
}

pub fn diffuse_glm(
    spec: GlmSpec,
    data: Arc<GlmDataset>,
    beta: f64,
    budget: GlmBudget,
    cfg: &SamplerConfig,
    rng: &mut RngStream,
) -> Result<WeightSample> {
    let rho = diffuse_rho(&spec, data.len(), beta, budget);
    let post = GlmPosterior::new(spec, data, beta, rho)?;
    sample_posterior(&post, cfg, rng)
}

pub fn ops_sample(
    spec: GlmSpec,
    data: Arc<GlmDataset>,
    beta: f64,
    epsilon_pure: f64,
    cfg: &SamplerConfig,
    rng: &mut RngStream,
) -> Result<WeightSample> {
    if !(epsilon_pure > 0.0) {
        return Err(Error::Usage(format!("privacy level must be positive, got {epsilon_pure}")));
    }
    let rho = ops_rho(spec.c, beta, epsilon_pure);
    let post = GlmPosterior::new(spec, data, beta, rho)?.with_support_radius(spec.c / beta)?;
    sample_posterior(&post, cfg, rng)
}
