//! Coordinate-wise slice sampling with stepping out and shrinkage.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampler settings. Only `burn_in` has a canonical value (1000).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub burn_in: usize,
    pub thinning: usize,
    /// Initial bracket width for each coordinate update.
    pub width: f64,
    /// Cap on stepping-out expansions per coordinate update.
    pub max_step_out: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            burn_in: 1000,
            thinning: 1,
            width: 1.0,
            max_step_out: 50,
        }
    }
}

/// A target density that can be evaluated along one coordinate at a time.
///
/// Implementations may cache quantities derived from the current state; the
/// sampler only ever moves one coordinate and reports it through [`set`].
///
/// [`set`]: CoordinateTarget::set
pub trait CoordinateTarget {
    fn state(&self) -> &[f64];

    /// Log density at the current state, with coordinate `j` replaced by `value`.
    fn log_density_at(&mut self, j: usize, value: f64) -> f64;

    fn set(&mut self, j: usize, value: f64);

    /// Called once per sweep; lets caching targets resynchronize.
    fn refresh(&mut self) {}
}

/// Adapts a plain log-density closure.
pub struct FnTarget<F> {
    state: Vec<f64>,
    scratch: Vec<f64>,
    log_density: F,
}

impl<F: FnMut(&[f64]) -> f64> FnTarget<F> {
    pub fn new(init: Vec<f64>, log_density: F) -> Self {
        FnTarget {
            scratch: init.clone(),
            state: init,
            log_density,
        }
    }
}

impl<F: FnMut(&[f64]) -> f64> CoordinateTarget for FnTarget<F> {
    fn state(&self) -> &[f64] {
        &self.state
    }

    fn log_density_at(&mut self, j: usize, value: f64) -> f64 {
        self.scratch[j] = value;
        let v = (self.log_density)(&self.scratch);
        self.scratch[j] = self.state[j];
        v
    }

    fn set(&mut self, j: usize, value: f64) {
        self.state[j] = value;
        self.scratch[j] = value;
    }
}

// in exact arithmetic shrinkage always terminates; this bounds float edge cases
const MAX_SHRINK: usize = 200;

fn update_coordinate<T: CoordinateTarget, R: Rng + ?Sized>(
    target: &mut T,
    j: usize,
    current_log: f64,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> f64 {
    let x0 = target.state()[j];
    let e: f64 = Exp1.sample(rng);
    let level = current_log - e;

    let w = cfg.width;
    let mut left = x0 - w * rng.random::<f64>();
    let mut right = left + w;
    let budget = cfg.max_step_out;
    let mut steps_left = (budget as f64 * rng.random::<f64>()).floor() as usize;
    let mut steps_right = budget.saturating_sub(1).saturating_sub(steps_left);
    while steps_left > 0 && target.log_density_at(j, left) > level {
        left -= w;
        steps_left -= 1;
    }
    while steps_right > 0 && target.log_density_at(j, right) > level {
        right += w;
        steps_right -= 1;
    }

    for _ in 0..MAX_SHRINK {
        let x1 = left + rng.random::<f64>() * (right - left);
        let f1 = target.log_density_at(j, x1);
        if f1 > level {
            target.set(j, x1);
            return f1;
        }
        if x1 < x0 {
            left = x1;
        } else {
            right = x1;
        }
    }
    current_log
}

/// One full sweep over all coordinates. Returns the log density at the new state.
pub fn sweep<T: CoordinateTarget, R: Rng + ?Sized>(target: &mut T, cfg: &SamplerConfig, rng: &mut R) -> f64 {
    target.refresh();
    let dim = target.state().len();
    let mut current = target.log_density_at(0, target.state()[0]);
    for j in 0..dim {
        current = update_coordinate(target, j, current, cfg, rng);
    }
    current
}

/// Runs `cfg.burn_in` sweeps, then collects `n_samples` states spaced
/// `cfg.thinning` sweeps apart.
pub fn run_chain<T: CoordinateTarget, R: Rng + ?Sized>(
    target: &mut T,
    n_samples: usize,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if target.state().is_empty() {
        return Err(Error::Usage("slice sampler needs at least one dimension".into()));
    }
    if !(cfg.width > 0.0 && cfg.width.is_finite()) || cfg.thinning == 0 {
        return Err(Error::Usage("slice sampler needs a positive width and thinning".into()));
    }
    let start = target.log_density_at(0, target.state()[0]);
    if !start.is_finite() {
        return Err(Error::Usage(format!("log density at the initial state is {start}")));
    }
    for _ in 0..cfg.burn_in {
        sweep(target, cfg, rng);
    }
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        for _ in 0..cfg.thinning {
            sweep(target, cfg, rng);
        }
        out.push(target.state().to_vec());
    }
    Ok(out)
}

/// Slice sampling from an arbitrary log density.
pub fn slice_sample<F, R>(
    log_density: F,
    init: Vec<f64>,
    burn_in: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let cfg = SamplerConfig {
        burn_in,
        ..SamplerConfig::default()
    };
    let mut target = FnTarget::new(init, log_density);
    run_chain(&mut target, n_samples, &cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn standard_normal_moments() {
        let mut rng = RngStream::new(17);
        let samples = slice_sample(|x| -0.5 * x[0] * x[0], vec![0.0], 1000, 20_000, &mut rng).unwrap();
        let n = samples.len() as f64;
        let mean = samples.iter().map(|s| s[0]).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((0.9..1.1).contains(&var), "var {var}");
    }

    #[test]
    fn correlated_gaussian() {
        let rho: f64 = 0.5;
        let det = 1.0 - rho * rho;
        let log_density = |x: &[f64]| -(x[0] * x[0] - 2.0 * rho * x[0] * x[1] + x[1] * x[1]) / (2.0 * det);
        let mut rng = RngStream::new(5);
        let s = slice_sample(log_density, vec![0.0, 0.0], 1000, 20_000, &mut rng).unwrap();
        let n = s.len() as f64;
        let (mx, my) = (s.iter().map(|v| v[0]).sum::<f64>() / n, s.iter().map(|v| v[1]).sum::<f64>() / n);
        let cov = s.iter().map(|v| (v[0] - mx) * (v[1] - my)).sum::<f64>() / n;
        let vx = s.iter().map(|v| (v[0] - mx).powi(2)).sum::<f64>() / n;
        let vy = s.iter().map(|v| (v[1] - my).powi(2)).sum::<f64>() / n;
        let corr = cov / (vx * vy).sqrt();
        assert!((0.4..0.6).contains(&corr), "corr {corr}");
    }

    #[test]
    fn deterministic_under_seed() {
        let f = |x: &[f64]| -x.iter().map(|v| v * v).sum::<f64>();
        let a = slice_sample(f, vec![0.1, 0.2], 50, 10, &mut RngStream::new(3)).unwrap();
        let b = slice_sample(f, vec![0.1, 0.2], 50, 10, &mut RngStream::new(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_support_respected() {
        let f = |x: &[f64]| if x[0].abs() <= 0.5 { 0.0 } else { f64::NEG_INFINITY };
        let s = slice_sample(f, vec![0.0], 10, 2000, &mut RngStream::new(1)).unwrap();
        assert!(s.iter().all(|v| v[0].abs() <= 0.5));
    }

    #[test]
    fn rejects_bad_start() {
        let f = |_: &[f64]| f64::NEG_INFINITY;
        assert!(slice_sample(f, vec![0.0], 10, 10, &mut RngStream::new(1)).is_err());
    }
}
