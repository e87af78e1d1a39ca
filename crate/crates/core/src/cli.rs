//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::calibrate::{self, Coefficient, DEFAULT_MAX_ITERS};
use crate::data;
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentSpec, GlmSetting};
use crate::expfam::{ConjugateSystem, NaturalParam, PrivacyBudget};
use crate::glm::{self, GlmBudget, GlmDataset, GlmSpec, Link};
use crate::mechanisms::{self, MechanismOutput, Mode, QueryMode};
use crate::metrics;
use crate::rng::RngStream;
use crate::slice::SamplerConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_REFUSED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rdp-posterior", version, about = "Rényi-DP posterior sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the largest diffusion or concentration coefficient meeting a budget.
    Calibrate(CalibrateArgs),
    /// Release one posterior sample.
    Sample(SampleArgs),
    /// Release a private estimate of the mean of a [0, 1]-valued column.
    Statquery(StatqueryArgs),
    /// Train a private Bayesian GLM and report test metrics.
    GlmTrain(GlmTrainArgs),
    /// Run an experiment sweep and write CSV.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// `beta`, `dirichlet:<d>`, `gaussian:<sigma>:<clip>` or a JSON object.
    #[arg(long, default_value = "beta")]
    pub system: String,
    /// Prior natural parameter as comma-separated numbers.
    #[arg(long, default_value = "6,18")]
    pub prior: String,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Dataset size.
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "diffused")]
    pub mode: Mode,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file of observations (one per row).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Column to read from `--data`; the first column by default.
    #[arg(long)]
    pub column: Option<String>,
    /// Beta–Bernoulli shorthand: number of ones among `--trials` bits.
    #[arg(long, requires = "trials")]
    pub successes: Option<usize>,
    #[arg(long, requires = "successes")]
    pub trials: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "direct")]
    pub mode: Mode,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
}

#[derive(Debug, Args)]
pub struct StatqueryArgs {
    #[arg(long, default_value = "1,2")]
    pub prior: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, value_enum, default_value = "diffused")]
    pub mode: QueryMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GlmTrainArgs {
    /// Tabular CSV; requires `--schema` and `--label-rule`.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    pub schema: Option<PathBuf>,
    /// Binary label rule such as `lt:10` or `eq:>50K`.
    #[arg(long, requires = "data")]
    pub label_rule: Option<String>,
    /// Synthetic data as `n_train,n_test,d,w_norm`.
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, value_enum, default_value = "logistic")]
    pub link: Link,
    #[arg(long, value_enum, default_value = "diffused")]
    pub mode: Mode,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub beta0: f64,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the spec's replicate count.
    #[arg(long)]
    pub replicates: Option<usize>,
}

pub fn parse_system(text: &str) -> Result<ConjugateSystem> {
    let t = text.trim();
    if t.starts_with('{') {
        let system: ConjugateSystem = serde_json::from_str(t)?;
        system.validate()?;
        return Ok(system);
    }
    let parts: Vec<&str> = t.split(':').collect();
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::Usage(format!("bad number {s:?} in system {text:?}")))
    };
    match parts.as_slice() {
        ["beta"] => Ok(ConjugateSystem::beta_bernoulli()),
        ["dirichlet", d] => {
            let d = d
                .parse()
                .map_err(|_| Error::Usage(format!("bad category count in {text:?}")))?;
            ConjugateSystem::dirichlet(d)
        }
        ["gaussian", sigma, clip] => ConjugateSystem::gaussian_mean(num(sigma)?, num(clip)?),
        _ => Err(Error::Usage(format!(
            "unknown system {text:?}; expected beta, dirichlet:<d>, gaussian:<sigma>:<clip> or JSON"
        ))),
    }
}

pub fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Usage(format!("{s:?} is not a finite number")))
        })
        .collect()
}

fn parse_prior(system: &ConjugateSystem, text: &str) -> Result<NaturalParam> {
    let eta = NaturalParam::new(parse_vector(text)?);
    if eta.len() != system.param_len() {
        return Err(Error::Usage(format!(
            "prior has {} coordinates, the system needs {}",
            eta.len(),
            system.param_len()
        )));
    }
    if !system.is_normalizable(&eta) {
        return Err(Error::Usage(format!("prior {:?} is not normalizable", eta.coords())));
    }
    Ok(eta)
}

fn read_column(path: &PathBuf, column: Option<&str>) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.clone();
    let idx = match column {
        Some(c) => header
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| Error::Usage(format!("no column {c:?} in {}", path.display())))?,
        None => 0,
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = rec.get(idx).ok_or_else(|| Error::Parse {
            line,
            message: "missing field".into(),
        })?;
        out.push(field.parse().map_err(|_| Error::Parse {
            line,
            message: format!("{field:?} is not a number"),
        })?);
    }
    Ok(out)
}

fn load_observations(args: &DataArgs) -> Result<Vec<f64>> {
    match (&args.data, args.successes, args.trials) {
        (Some(_), Some(_), _) => Err(Error::Usage("give either --data or --successes/--trials".into())),
        (Some(path), None, _) => read_column(path, args.column.as_deref()),
        (None, Some(k), Some(n)) => {
            if k > n {
                return Err(Error::Usage(format!("{k} successes exceed {n} trials")));
            }
            Ok((0..n).map(|i| if i < k { 1.0 } else { 0.0 }).collect())
        }
        _ => Ok(Vec::new()),
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a, out),
        Command::Sample(a) => cmd_sample(a, out),
        Command::Statquery(a) => cmd_statquery(a, out),
        Command::GlmTrain(a) => cmd_glm_train(a, out),
        Command::Experiment(a) => cmd_experiment(a, out),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Refused(_) => EXIT_REFUSED,
        _ => EXIT_USAGE,
    }
}

fn coefficient_kind(mode: Mode) -> Result<Coefficient> {
    match mode {
        Mode::Diffused => Ok(Coefficient::Diffusion),
        Mode::Concentrated => Ok(Coefficient::Concentration),
        other => Err(Error::Usage(format!("mode {} has no coefficient to calibrate", other.name()))),
    }
}

pub fn cmd_calibrate(a: CalibrateArgs, out: &mut dyn Write) -> Result<i32> {
    let system = parse_system(&a.model.system)?;
    let eta0 = parse_prior(&system, &a.model.prior)?;
    let budget = PrivacyBudget::new(a.budget.lambda, a.budget.epsilon)?;
    let kind = coefficient_kind(a.mode)?;
    let res = calibrate::calibrate(&system, &eta0, a.n, budget, a.max_iters, kind)?;
    print_json(out, &res)?;
    Ok(if res.satisfied { EXIT_OK } else { EXIT_REFUSED })
}

pub fn cmd_sample(a: SampleArgs, out: &mut dyn Write) -> Result<i32> {
    let system = parse_system(&a.model.system)?;
    let eta0 = parse_prior(&system, &a.model.prior)?;
    let obs = load_observations(&a.data)?;
    let mut rng = RngStream::new(a.seed);
    let budget = || match (a.lambda, a.epsilon) {
        (Some(l), Some(e)) => PrivacyBudget::new(l, e),
        _ => Err(Error::Usage(format!("mode {} needs --lambda and --epsilon", a.mode.name()))),
    };
    let output: MechanismOutput = match a.mode {
        Mode::Direct => mechanisms::sample_direct(&system, &eta0, &obs, &mut rng)?,
        Mode::Diffused | Mode::Concentrated => mechanisms::sample_calibrated(
            coefficient_kind(a.mode)?,
            &system,
            &eta0,
            &obs,
            budget()?,
            a.max_iters,
            &mut rng,
        )?,
        Mode::Gaussian => {
            if system != ConjugateSystem::BetaBernoulli {
                return Err(Error::Usage("the Gaussian baseline is defined for the beta system".into()));
            }
            mechanisms::gaussian_baseline(&eta0, &obs, budget()?, &mut rng)?
        }
        Mode::Ops => return Err(Error::Usage("ops is a GLM mechanism; use glm-train".into())),
    };
    print_json(out, &output)?;
    Ok(EXIT_OK)
}

pub fn cmd_statquery(a: StatqueryArgs, out: &mut dyn Write) -> Result<i32> {
    let system = ConjugateSystem::beta_bernoulli();
    let eta0 = parse_prior(&system, &a.prior)?;
    let values = load_observations(&a.data)?;
    let budget = PrivacyBudget::new(a.budget.lambda, a.budget.epsilon)?;
    let mut rng = RngStream::new(a.seed);
    let estimate = mechanisms::beta_stat_query(&values, |v| *v, &eta0, budget, a.mode, &mut rng)?;
    print_json(
        out,
        &json!({
            "estimate": estimate,
            "n": values.len(),
            "mode": a.mode,
            "seed": a.seed,
        }),
    )?;
    Ok(EXIT_OK)
}

fn glm_data(a: &GlmTrainArgs) -> Result<(Arc<GlmDataset>, GlmDataset)> {
    if let Some(path) = &a.data {
        let schema_path = a
            .schema
            .as_ref()
            .ok_or_else(|| Error::Usage("--data needs --schema".into()))?;
        let rule = a
            .label_rule
            .as_ref()
            .ok_or_else(|| Error::Usage("--data needs --label-rule".into()))?;
        let schema = data::Schema::load(schema_path)?;
        let ds = data::load_csv(path, &schema)?;
        let pre = data::preprocess_glm(&ds, &data::PreprocessConfig::new(rule.parse()?, a.data_seed))?;
        return Ok((Arc::new(pre.train), pre.test));
    }
    let synth = a
        .synthetic
        .as_deref()
        .ok_or_else(|| Error::Usage("give --data or --synthetic".into()))?;
    let v = parse_vector(synth)?;
    let [n_train, n_test, d, w_norm] = v[..] else {
        return Err(Error::Usage("--synthetic expects n_train,n_test,d,w_norm".into()));
    };
    let cfg = experiment::GlmExperiment {
        link: a.link,
        beta0: a.beta0,
        burn_in: a.burn_in,
        data: experiment::GlmSource::Synthetic {
            n_train: n_train as usize,
            n_test: n_test as usize,
            d: d as usize,
            w_norm,
            data_seed: a.data_seed,
        },
    };
    let loaded = experiment::load_glm_data(&cfg)?;
    Ok((loaded.train, loaded.test))
}

/// Trains on the given data. Rows are validated against `c = 1`.
pub fn cmd_glm_train(a: GlmTrainArgs, out: &mut dyn Write) -> Result<i32> {
    let (train, test) = glm_data(&a)?;
    let spec = GlmSpec::binary(a.link, 1.0)?;
    let n = train.len();
    let epsilon = match (a.mode, a.epsilon) {
        (Mode::Direct, _) => glm::direct_rdp_budget(&spec, n.max(1), a.beta0, a.lambda),
        (_, Some(e)) => e,
        (m, None) => return Err(Error::Usage(format!("mode {} needs --epsilon", m.name()))),
    };
    let budget = GlmBudget::new(a.lambda, epsilon)?;
    let setting = GlmSetting::for_mechanism(a.mode, &spec, n, a.beta0, budget)?;
    let post = setting.posterior(spec, train)?;
    let cfg = SamplerConfig {
        burn_in: a.burn_in,
        ..SamplerConfig::default()
    };
    let sample = glm::sample_posterior(&post, &cfg, &mut RngStream::new(a.seed))?;
    let test_metrics = if test.is_empty() {
        None
    } else {
        Some(metrics::glm_test_metrics(&sample.w, &test, a.link)?)
    };
    print_json(
        out,
        &json!({
            "mechanism": a.mode,
            "lambda": a.lambda,
            "epsilon": epsilon,
            "beta": setting.beta,
            "rho": setting.rho,
            "support_radius": setting.radius,
            "n_train": n,
            "n_test": test.len(),
            "sample": sample,
            "test_metrics": test_metrics,
        }),
    )?;
    Ok(EXIT_OK)
}

pub fn cmd_experiment(a: ExperimentArgs, out: &mut dyn Write) -> Result<i32> {
    let text = std::fs::read_to_string(&a.spec)?;
    let mut spec = ExperimentSpec::from_json(&text)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    if let Some(r) = a.replicates {
        spec.replicates = r;
    }
    let rows = experiment::run_experiment(&spec)?;
    match &a.out {
        Some(path) => experiment::write_csv(&rows, std::fs::File::create(path)?)?,
        None => experiment::write_csv(&rows, &mut *out)?,
    }
    Ok(EXIT_OK)
}
