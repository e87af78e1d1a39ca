//! Experiment sweeps emitted as CSV rows.
//!
//! Every kind expands its grid into points in a fixed order; rows come out
//! in (point, replicate) order no matter how the work pool schedules them.

use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{self, CalibrationResult, Coefficient, DEFAULT_MAX_ITERS};
use crate::data::{self, LabelRule, PreprocessConfig, Schema};
use crate::error::{Error, Result};
use crate::expfam::{ConjugateSystem, NaturalParam, PrivacyBudget};
use crate::extended_real;
use crate::glm::{self, GlmBudget, GlmDataset, GlmPosterior, GlmSpec, Link};
use crate::mechanisms::{self, Mode};
use crate::metrics::{self, QuadratureConfig};
use crate::rng::RngStream;
use crate::slice::SamplerConfig;

pub const THREADS_ENV: &str = "RDP_POSTERIOR_THREADS";

pub const CSV_HEADER: [&str; 9] = [
    "experiment",
    "mechanism",
    "lambda",
    "epsilon",
    "coefficient",
    "metric",
    "value",
    "replicate",
    "seed",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PrivacyCurve,
    KlCurve,
    HeldoutLoglik,
    GlmError,
    GlmLoglik,
}

impl ExperimentKind {
    fn is_glm(self) -> bool {
        matches!(self, ExperimentKind::GlmError | ExperimentKind::GlmLoglik)
    }

    fn default_mechanisms(self) -> Vec<Mode> {
        match self {
            ExperimentKind::PrivacyCurve => vec![Mode::Diffused, Mode::Concentrated],
            ExperimentKind::KlCurve => vec![Mode::Diffused, Mode::Concentrated, Mode::Gaussian],
            ExperimentKind::HeldoutLoglik => vec![Mode::Direct, Mode::Diffused, Mode::Concentrated, Mode::Gaussian],
            ExperimentKind::GlmError | ExperimentKind::GlmLoglik => {
                vec![Mode::Direct, Mode::Diffused, Mode::Concentrated]
            }
        }
    }

    fn allowed(self, mode: Mode) -> bool {
        match self {
            ExperimentKind::PrivacyCurve => matches!(mode, Mode::Diffused | Mode::Concentrated),
            ExperimentKind::KlCurve | ExperimentKind::HeldoutLoglik => mode != Mode::Ops,
            ExperimentKind::GlmError | ExperimentKind::GlmLoglik => mode != Mode::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GlmSource {
    /// Unit-sphere features with labels from the link; the true weight
    /// vector is a random direction of length `w_norm`.
    Synthetic {
        n_train: usize,
        n_test: usize,
        d: usize,
        w_norm: f64,
        #[serde(default)]
        data_seed: u64,
    },
    Csv {
        path: PathBuf,
        schema: PathBuf,
        label_rule: LabelRule,
        #[serde(default = "one_third")]
        test_fraction: f64,
        #[serde(default)]
        split_seed: u64,
    },
}

fn one_third() -> f64 {
    1.0 / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlmExperiment {
    #[serde(default = "default_link")]
    pub link: Link,
    #[serde(default = "default_beta0")]
    pub beta0: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub data: GlmSource,
}

fn default_link() -> Link {
    Link::Logistic
}

fn default_beta0() -> f64 {
    1e-3
}

fn default_burn_in() -> usize {
    SamplerConfig::default().burn_in
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub coefficients: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "ConjugateSystem::beta_bernoulli")]
    pub system: ConjugateSystem,
    #[serde(default = "default_prior")]
    pub prior: NaturalParam,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub successes: Option<usize>,
    #[serde(default)]
    pub population_rho: Option<f64>,
    #[serde(default)]
    pub mechanisms: Vec<Mode>,
    #[serde(default)]
    pub glm: Option<GlmExperiment>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

fn default_prior() -> NaturalParam {
    NaturalParam::new(vec![6.0, 18.0])
}

fn default_n() -> usize {
    100
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn mechanisms(&self) -> Vec<Mode> {
        if self.mechanisms.is_empty() {
            self.kind.default_mechanisms()
        } else {
            self.mechanisms.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        if self.lambdas.is_empty() {
            return Err(invalid("lambda grid is empty"));
        }
        let min_lambda_ok = |l: f64| if self.kind.is_glm() { l >= 1.0 } else { l > 1.0 };
        if let Some(l) = self.lambdas.iter().find(|&&l| !(l.is_finite() && min_lambda_ok(l))) {
            return Err(invalid(format!("order {l} is outside the allowed range")));
        }
        if self.kind == ExperimentKind::PrivacyCurve {
            if self.coefficients.is_empty() {
                return Err(invalid("coefficient grid is empty"));
            }
            if let Some(c) = self.coefficients.iter().find(|&&c| !(c > 0.0 && c <= 1.0)) {
                return Err(invalid(format!("coefficient {c} is outside (0, 1]")));
            }
        } else {
            if self.epsilons.is_empty() {
                return Err(invalid("epsilon grid is empty"));
            }
            if let Some(e) = self.epsilons.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
                return Err(invalid(format!("privacy level {e} must be positive and finite")));
            }
        }
        if let Some(m) = self.mechanisms().iter().find(|&&m| !self.kind.allowed(m)) {
            return Err(invalid(format!("mechanism {} is not available for this experiment", m.name())));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be at least 1"));
        }
        match self.kind {
            ExperimentKind::GlmError | ExperimentKind::GlmLoglik => {
                let glm = self.glm.as_ref().ok_or_else(|| invalid("GLM experiments need a glm section"))?;
                if !(glm.beta0 > 0.0 && glm.beta0.is_finite()) {
                    return Err(invalid("beta0 must be positive"));
                }
                if let GlmSource::Synthetic { n_train, n_test, d, w_norm, .. } = glm.data {
                    if n_train == 0 || n_test == 0 || d == 0 || !w_norm.is_finite() {
                        return Err(invalid("synthetic GLM data needs positive sizes and a finite weight norm"));
                    }
                }
            }
            _ => {
                self.system.validate()?;
                if !self.system.is_normalizable(&self.prior) {
                    return Err(invalid(format!("prior {:?} is not normalizable", self.prior.coords())));
                }
                if self.kind != ExperimentKind::PrivacyCurve && self.system != ConjugateSystem::BetaBernoulli {
                    return Err(invalid("this experiment is defined for the Beta–Bernoulli system only"));
                }
                if self.kind == ExperimentKind::KlCurve {
                    match self.successes {
                        Some(s) if s <= self.n => {}
                        _ => return Err(invalid("kl_curve needs successes <= n")),
                    }
                    self.quadrature.validate()?;
                }
                if self.kind == ExperimentKind::HeldoutLoglik {
                    let rho = self.population_rho.unwrap_or(0.5);
                    if !(rho > 0.0 && rho < 1.0) {
                        return Err(invalid("population_rho must lie in (0, 1)"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub experiment: String,
    pub mechanism: String,
    pub lambda: String,
    pub epsilon: String,
    pub coefficient: String,
    pub metric: String,
    pub value: String,
    pub replicate: usize,
    pub seed: u64,
}

impl ExperimentRecord {
    /// Parsed metric value; `None` for error rows.
    pub fn numeric_value(&self) -> Option<f64> {
        parse_extended(&self.value)
    }
}

pub fn parse_extended(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

/// A metric value or the code of the error that prevented it.
type Outcome = std::result::Result<f64, &'static str>;

struct RowBuilder<'a> {
    spec: &'a ExperimentSpec,
    metric: &'static str,
}

impl RowBuilder<'_> {
    #[allow(clippy::too_many_arguments)]
    fn row(
        &self,
        mechanism: Mode,
        lambda: f64,
        epsilon: f64,
        coefficient: Option<f64>,
        value: Outcome,
        replicate: usize,
        seed: u64,
    ) -> ExperimentRecord {
        ExperimentRecord {
            experiment: self.spec.id.clone(),
            mechanism: mechanism.name().to_string(),
            lambda: extended_real::format(lambda),
            epsilon: extended_real::format(epsilon),
            coefficient: coefficient.map(extended_real::format).unwrap_or_default(),
            metric: self.metric.to_string(),
            value: match value {
                Ok(v) => extended_real::format(v),
                Err(code) => format!("error:{code}"),
            },
            replicate,
            seed,
        }
    }
}

fn replicate_seed(spec: &ExperimentSpec, replicate: usize) -> u64 {
    spec.seed.wrapping_add(replicate as u64)
}

fn coefficient_kind(mode: Mode) -> Option<Coefficient> {
    match mode {
        Mode::Diffused => Some(Coefficient::Diffusion),
        Mode::Concentrated => Some(Coefficient::Concentration),
        _ => None,
    }
}

/// Work pool sized by [`THREADS_ENV`] when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let k: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        builder = builder.num_threads(k);
    }
    builder.build().map_err(|e| Error::Usage(e.to_string()))
}

/// Validates the spec, then runs every point and replicate.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ExperimentRecord>> {
    spec.validate()?;
    let pool = thread_pool()?;
    pool.install(|| match spec.kind {
        ExperimentKind::PrivacyCurve => Ok(privacy_curve(spec)),
        ExperimentKind::KlCurve => kl_curve(spec),
        ExperimentKind::HeldoutLoglik => heldout(spec),
        ExperimentKind::GlmError | ExperimentKind::GlmLoglik => glm_sweep(spec),
    })
}

pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn repeat_over_replicates<F>(spec: &ExperimentSpec, rows: Vec<F>) -> Vec<ExperimentRecord>
where
    F: Fn(usize, u64) -> ExperimentRecord,
{
    let mut out = Vec::with_capacity(rows.len() * spec.replicates);
    for make in &rows {
        for rep in 0..spec.replicates {
            out.push(make(rep, replicate_seed(spec, rep)));
        }
    }
    out
}

fn privacy_curve(spec: &ExperimentSpec) -> Vec<ExperimentRecord> {
    let builder = RowBuilder { spec, metric: "epsilon" };
    let mut points = Vec::new();
    for mode in spec.mechanisms() {
        for &c in &spec.coefficients {
            for &l in &spec.lambdas {
                points.push((mode, c, l));
            }
        }
    }
    let values: Vec<Outcome> = points
        .par_iter()
        .map(|&(mode, c, l)| {
            let kind = coefficient_kind(mode).expect("validated");
            calibrate::privacy_at(&spec.system, &spec.prior, spec.n, kind, c, l).map_err(|e| e.code())
        })
        .collect();
    let rows = points
        .iter()
        .zip(values)
        .map(|(&(mode, c, l), v)| {
            let eps = v.unwrap_or(f64::NAN);
            let b = &builder;
            move |rep, seed| b.row(mode, l, eps, Some(c), v, rep, seed)
        })
        .collect();
    repeat_over_replicates(spec, rows)
}

fn bits(ones: usize, n: usize) -> Vec<f64> {
    (0..n).map(|i| if i < ones { 1.0 } else { 0.0 }).collect()
}

fn kl_curve(spec: &ExperimentSpec) -> Result<Vec<ExperimentRecord>> {
    let builder = RowBuilder { spec, metric: "kl" };
    let system = &spec.system;
    let data = bits(spec.successes.unwrap_or(0), spec.n);
    let truth = system.update_with_data(&spec.prior, &data, 1.0)?;
    let points = budget_grid(spec);
    let point_kl = |mode: Mode, l: f64, e: f64| -> Result<(f64, f64)> {
        let budget = PrivacyBudget::new(l, e)?;
        match coefficient_kind(mode) {
            None if mode == Mode::Gaussian => {
                let sigma = mechanisms::gaussian_noise_sigma(system.delta(), budget);
                let kl = metrics::kl_gaussian_mechanism(&spec.prior, &data, sigma, spec.quadrature)?;
                Ok((sigma, kl))
            }
            None => Ok((1.0, 0.0)),
            Some(kind) => {
                let cal = calibrate::calibrate(system, &spec.prior, spec.n, budget, spec.max_iters, kind)?;
                let out = mechanisms::release_calibrated(
                    kind,
                    system,
                    &spec.prior,
                    &data,
                    &cal,
                    &mut RngStream::new(spec.seed),
                )?;
                Ok((cal.coefficient, metrics::kl_beta(&truth, &out.posterior_param)?))
            }
        }
    };
    let values: Vec<(Option<f64>, Outcome)> = points
        .par_iter()
        .map(|&(mode, l, e)| match point_kl(mode, l, e) {
            Ok((coef, kl)) => (Some(coef), Ok(kl)),
            Err(err) => (None, Err(err.code())),
        })
        .collect();
    let rows = points
        .iter()
        .zip(values)
        .map(|(&(mode, l, e), (coef, v))| {
            let b = &builder;
            move |rep, seed| b.row(mode, l, e, coef, v, rep, seed)
        })
        .collect();
    Ok(repeat_over_replicates(spec, rows))
}

fn budget_grid(spec: &ExperimentSpec) -> Vec<(Mode, f64, f64)> {
    let mut points = Vec::new();
    for mode in spec.mechanisms() {
        for &l in &spec.lambdas {
            for &e in &spec.epsilons {
                points.push((mode, l, e));
            }
        }
    }
    points
}

fn heldout(spec: &ExperimentSpec) -> Result<Vec<ExperimentRecord>> {
    let builder = RowBuilder {
        spec,
        metric: "heldout_loglik",
    };
    let system = &spec.system;
    let rho = spec.population_rho.unwrap_or(0.5);
    let points = budget_grid(spec);
    // calibration depends only on the prior, n and the budget, so all replicates share it
    let calibrations: Vec<Option<std::result::Result<CalibrationResult, &'static str>>> = points
        .par_iter()
        .map(|&(mode, l, e)| {
            coefficient_kind(mode).map(|kind| {
                PrivacyBudget::new(l, e)
                    .and_then(|b| calibrate::calibrate(system, &spec.prior, spec.n, b, spec.max_iters, kind))
                    .map_err(|e| e.code())
            })
        })
        .collect();

    let release = |mode: Mode,
                   budget: PrivacyBudget,
                   cal: Option<&CalibrationResult>,
                   train: &[f64],
                   rng: &mut RngStream|
     -> Result<(f64, f64)> {
        let out = match (coefficient_kind(mode), cal) {
            (Some(kind), Some(cal)) => mechanisms::release_calibrated(kind, system, &spec.prior, train, cal, rng)?,
            _ if mode == Mode::Gaussian => mechanisms::gaussian_baseline(&spec.prior, train, budget, rng)?,
            _ => mechanisms::sample_direct(system, &spec.prior, train, rng)?,
        };
        let coef = if mode == Mode::Gaussian {
            mechanisms::gaussian_noise_sigma(system.delta(), budget)
        } else {
            out.coefficient_used
        };
        Ok((coef, out.theta[0]))
    };

    let per_replicate: Vec<Result<Vec<ExperimentRecord>>> = (0..spec.replicates)
        .into_par_iter()
        .map(|rep| {
            let seed = replicate_seed(spec, rep);
            let mut data_rng = RngStream::with_stream(seed, 0);
            let train = data::synth_bernoulli_with(spec.n, rho, &mut data_rng)?;
            let held = data::synth_bernoulli_with(spec.n, rho, &mut data_rng)?;
            let mut rows = Vec::with_capacity(points.len());
            for (idx, (&(mode, l, e), cal)) in points.iter().zip(&calibrations).enumerate() {
                let mut rng = RngStream::with_stream(seed, 1 + idx as u64);
                let outcome = match cal {
                    Some(Err(code)) => Err(*code),
                    _ => PrivacyBudget::new(l, e)
                        .and_then(|b| release(mode, b, cal.as_ref().and_then(|c| c.as_ref().ok()), &train, &mut rng))
                        .map_err(|e| e.code()),
                };
                rows.push(match outcome {
                    Ok((coef, theta)) => {
                        builder.row(mode, l, e, Some(coef), Ok(metrics::heldout_loglik(theta, &held)), rep, seed)
                    }
                    Err(code) => builder.row(mode, l, e, None, Err(code), rep, seed),
                });
            }
            Ok(rows)
        })
        .collect();
    let per_replicate = per_replicate.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(collate(points.len(), per_replicate))
}

/// Reorders replicate-major row lists into point-major order.
fn collate(n_points: usize, per_replicate: Vec<Vec<ExperimentRecord>>) -> Vec<ExperimentRecord> {
    let reps = per_replicate.len();
    let mut iters: Vec<_> = per_replicate.into_iter().map(Vec::into_iter).collect();
    let mut out = Vec::with_capacity(n_points * reps);
    for _ in 0..n_points {
        for it in iters.iter_mut() {
            out.extend(it.next());
        }
    }
    out
}

/// Train/test split used by the GLM experiments.
pub struct GlmData {
    pub spec: GlmSpec,
    pub train: Arc<GlmDataset>,
    pub test: GlmDataset,
}

pub fn load_glm_data(cfg: &GlmExperiment) -> Result<GlmData> {
    match &cfg.data {
        GlmSource::Synthetic {
            n_train,
            n_test,
            d,
            w_norm,
            data_seed,
        } => {
            let mut rng = RngStream::with_stream(*data_seed, 1);
            let dir: Vec<f64> = (0..*d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            let w_true: Vec<f64> = dir.iter().map(|v| v / len * w_norm).collect();
            let all = data::synth_glm(n_train + n_test, *d, &w_true, cfg.link, *data_seed)?;
            let (train_x, test_x) = all.features.split_at(*n_train);
            let (train_y, test_y) = all.labels.split_at(*n_train);
            Ok(GlmData {
                spec: GlmSpec::binary(cfg.link, 1.0)?,
                train: Arc::new(GlmDataset::new(train_x.to_vec(), train_y.to_vec())?),
                test: GlmDataset::new(test_x.to_vec(), test_y.to_vec())?,
            })
        }
        GlmSource::Csv {
            path,
            schema,
            label_rule,
            test_fraction,
            split_seed,
        } => {
            let schema = Schema::load(schema)?;
            let ds = data::load_csv(path, &schema)?;
            let pre = data::preprocess_glm(
                &ds,
                &PreprocessConfig {
                    test_fraction: *test_fraction,
                    split_seed: *split_seed,
                    label_rule: label_rule.clone(),
                },
            )?;
            Ok(GlmData {
                spec: GlmSpec::binary(cfg.link, 1.0)?,
                train: Arc::new(pre.train),
                test: pre.test,
            })
        }
    }
}

/// Prior scale, temper exponent and support radius a GLM mechanism samples with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmSetting {
    pub beta: f64,
    pub rho: f64,
    pub radius: Option<f64>,
}

impl GlmSetting {
    pub fn for_mechanism(mode: Mode, spec: &GlmSpec, n: usize, beta0: f64, budget: GlmBudget) -> Result<Self> {
        Ok(match mode {
            Mode::Direct => GlmSetting {
                beta: beta0,
                rho: 1.0,
                radius: None,
            },
            Mode::Concentrated => GlmSetting {
                beta: glm::concentrated_beta(spec, n, beta0, budget),
                rho: 1.0,
                radius: None,
            },
            Mode::Diffused => GlmSetting {
                beta: beta0,
                rho: glm::diffuse_rho(spec, n, beta0, budget),
                radius: None,
            },
            Mode::Ops => GlmSetting {
                beta: beta0,
                rho: glm::ops_rho(spec.c, beta0, budget.epsilon()),
                radius: Some(spec.c / beta0),
            },
            Mode::Gaussian => return Err(Error::Usage("the Gaussian baseline has no GLM variant".into())),
        })
    }

    /// The reported coefficient: β for the concentrated and direct samplers, ρ otherwise.
    pub fn coefficient(&self, mode: Mode) -> f64 {
        match mode {
            Mode::Direct | Mode::Concentrated => self.beta,
            _ => self.rho,
        }
    }

    pub fn posterior(&self, spec: GlmSpec, data: Arc<GlmDataset>) -> Result<GlmPosterior> {
        let post = GlmPosterior::new(spec, data, self.beta, self.rho)?;
        match self.radius {
            Some(r) => post.with_support_radius(r),
            None => Ok(post),
        }
    }

    fn key(&self) -> (u64, u64, u64) {
        (
            self.beta.to_bits(),
            self.rho.to_bits(),
            self.radius.unwrap_or(f64::NAN).to_bits(),
        )
    }
}

fn glm_sweep(spec: &ExperimentSpec) -> Result<Vec<ExperimentRecord>> {
    let cfg = spec.glm.as_ref().expect("validated");
    let data = load_glm_data(cfg)?;
    let n = data.train.len();
    let metric = if spec.kind == ExperimentKind::GlmError {
        "test_error"
    } else {
        "test_neg_loglik"
    };
    let builder = RowBuilder { spec, metric };
    let sampler = SamplerConfig {
        burn_in: cfg.burn_in,
        ..SamplerConfig::default()
    };

    // direct sampling has a fixed guarantee per order, so it gets one point per λ
    let mut points: Vec<(Mode, f64, f64)> = Vec::new();
    for mode in spec.mechanisms() {
        for &l in &spec.lambdas {
            if mode == Mode::Direct {
                points.push((mode, l, glm::direct_rdp_budget(&data.spec, n, cfg.beta0, l)));
            } else {
                for &e in &spec.epsilons {
                    points.push((mode, l, e));
                }
            }
        }
    }
    let settings: Vec<std::result::Result<GlmSetting, &'static str>> = points
        .iter()
        .map(|&(mode, l, e)| {
            GlmBudget::new(l, e)
                .and_then(|b| GlmSetting::for_mechanism(mode, &data.spec, n, cfg.beta0, b))
                .map_err(|e| e.code())
        })
        .collect();
    // points that sample the same posterior share one chain, seeded by the first such point
    let mut first_use: HashMap<(Mode, (u64, u64, u64)), usize> = HashMap::new();
    let chain_of: Vec<Option<usize>> = settings
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.as_ref()
                .ok()
                .map(|s| *first_use.entry((points[i].0, s.key())).or_insert(i))
        })
        .collect();

    let per_replicate: Vec<Vec<ExperimentRecord>> = (0..spec.replicates)
        .into_par_iter()
        .map(|rep| {
            let seed = replicate_seed(spec, rep);
            let mut cache: HashMap<usize, Outcome> = HashMap::new();
            points
                .iter()
                .enumerate()
                .map(|(i, &(mode, l, e))| {
                    let value = match (&settings[i], chain_of[i]) {
                        (Ok(setting), Some(chain)) => *cache.entry(chain).or_insert_with(|| {
                                let mut rng = RngStream::with_stream(seed, chain as u64);
                                setting
                                    .posterior(data.spec, data.train.clone())
                                    .and_then(|post| glm::sample_posterior(&post, &sampler, &mut rng))
                                    .and_then(|w| metrics::glm_test_metrics(&w.w, &data.test, data.spec.link))
                                    .map(|m| {
                                        if spec.kind == ExperimentKind::GlmError {
                                            m.error_rate
                                        } else {
                                            m.neg_loglik
                                        }
                                    })
                                    .map_err(|e| e.code())
                            }),
                        (Err(code), _) => Err(*code),
                        (Ok(_), None) => unreachable!("every valid setting has a chain"),
                    };
                    let coef = settings[i].as_ref().ok().map(|s| s.coefficient(mode));
                    builder.row(mode, l, e, coef, value, rep, seed)
                })
                .collect()
        })
        .collect();
    Ok(collate(points.len(), per_replicate))
}
