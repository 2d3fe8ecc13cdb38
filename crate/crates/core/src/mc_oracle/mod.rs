//! Least-squares Monte Carlo on the full curve simulator, used as an
//! independent check of the PDE prices.

mod martingale;

pub use martingale::{martingale_diagnostic, CheckpointStat, MartingaleConfig, MartingaleReport};

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curve_space::Grid;
use crate::error::{Error, Result};
use crate::hjm_dynamics::{check_strike, run_paths, CurveExtent, PathVisitor, PricingProblem, SimulationSpec, StepView, VolatilityModel};

const OUT_OF_SAMPLE_SALT: u64 = 0x2545_f491_4f6c_dd1d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsmcConfig {
    pub n_paths: usize,
    pub dt: f64,
    /// Polynomial degree in the bond price.
    pub degree: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        LsmcConfig { n_paths: 100_000, dt: 1.0 / 200.0, degree: 3, seed: 1, antithetic: true }
    }
}

impl LsmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 1000 {
            return Err(Error::Config(format!("n_paths = {} below the minimum of 1000", self.n_paths)));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(Error::Config("antithetic sampling needs an even number of paths".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        Ok(())
    }

    fn spec(&self, problem: &PricingProblem, seed: u64) -> Result<SimulationSpec> {
        SimulationSpec::new(problem.t0, problem.maturity, self.dt, self.n_paths, seed, self.antithetic)
    }

    pub fn out_of_sample_seed(&self) -> u64 {
        self.seed ^ OUT_OF_SAMPLE_SALT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmcResult {
    /// Re-priced on fresh paths with the fitted rule.
    pub out_of_sample: Estimate,
    pub in_sample: Estimate,
    /// No path is ever in the money.
    pub all_out_of_money: bool,
    pub exercise_at_start: bool,
    /// Dates where the regression degree had to be lowered.
    pub degree_reductions: usize,
}

impl LsmcResult {
    pub fn price(&self) -> f64 {
        self.out_of_sample.value
    }

    pub fn stderr(&self) -> f64 {
        self.out_of_sample.stderr
    }
}

/// Mean and standard error; antithetic pairs `(2i, 2i+1)` are averaged first.
pub fn mean_stderr(values: &[f64], antithetic: bool) -> Estimate {
    let samples: Vec<f64> = if antithetic {
        values.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    } else {
        values.to_vec()
    };
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return Estimate { value: mean, stderr: 0.0 };
    }
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Estimate { value: mean, stderr: (var / n).sqrt() }
}

/// Continuation value as a polynomial in the standardized bond price.
#[derive(Debug, Clone, PartialEq)]
struct Regression {
    mean: f64,
    scale: f64,
    coeffs: Vec<f64>,
}

impl Regression {
    fn eval(&self, bond: f64) -> f64 {
        let x = (bond - self.mean) / self.scale;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

fn regress(x: &[f64], y: &[f64], degree: usize) -> (Regression, bool) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (scale, mut degree_used) = if std > 1e-12 * (1.0 + mean.abs()) {
        (std, degree.min(x.len().saturating_sub(1)))
    } else {
        (1.0, 0)
    };
    let mut reduced = degree_used < degree;
    loop {
        let cols = degree_used + 1;
        let design = DMatrix::from_fn(x.len(), cols, |i, p| ((x[i] - mean) / scale).powi(p as i32));
        let svd = design.svd(true, true);
        let sv = &svd.singular_values;
        let (lo, hi) = (sv.min(), sv.max());
        if degree_used > 0 && !(lo > 1e-10 * hi) {
            log::warn!("regression design rank deficient at degree {degree_used}; lowering");
            degree_used -= 1;
            reduced = true;
            continue;
        }
        let coeffs = svd
            .solve(&DVector::from_column_slice(y), 1e-14 * hi)
            .map(|c| c.iter().copied().collect())
            .unwrap_or_else(|_| vec![y.iter().sum::<f64>() / n]);
        return (Regression { mean, scale, coeffs }, reduced);
    }
}

struct Recorder {
    rows: Vec<[f64; 2]>,
}

impl PathVisitor for Recorder {
    type Output = Vec<[f64; 2]>;

    fn observe(&mut self, v: &StepView<'_>) -> bool {
        self.rows.push([v.bond, v.log_discount]);
        true
    }

    fn finish(self) -> Self::Output {
        self.rows
    }
}

struct RuleFollower<'a> {
    rules: &'a [Option<Regression>],
    strike: f64,
    n_steps: usize,
    value: f64,
}

impl PathVisitor for RuleFollower<'_> {
    type Output = f64;

    fn observe(&mut self, v: &StepView<'_>) -> bool {
        if v.step == 0 {
            return true;
        }
        let psi = (self.strike - v.bond).max(0.0);
        let stop = v.step == self.n_steps
            || (psi > 0.0 && self.rules[v.step].as_ref().is_some_and(|r| psi >= r.eval(v.bond)));
        if stop {
            self.value = v.log_discount.exp() * psi;
        }
        !stop
    }

    fn finish(self) -> f64 {
        self.value
    }
}

/// Bermudan price with exercise on every simulation date. The regression is
/// fitted on one ensemble and applied to a second, independent one.
pub fn lsmc_price(problem: &PricingProblem, model: &VolatilityModel, cfg: &LsmcConfig) -> Result<LsmcResult> {
    problem.validate()?;
    cfg.validate()?;
    let strike = problem.strike;
    let spec = cfg.spec(problem, cfg.seed)?;
    let n_steps = spec.n_steps;
    let paths = run_paths(&problem.initial_curve, model, &spec, CurveExtent::Window, |_| Recorder {
        rows: Vec::with_capacity(n_steps + 1),
    })?;

    let psi0 = (strike - paths[0][0][0]).max(0.0);
    let any_itm = psi0 > 0.0 || paths.iter().any(|p| p.iter().any(|r| r[0] < strike));
    if !any_itm {
        let zero = Estimate { value: 0.0, stderr: 0.0 };
        return Ok(LsmcResult {
            out_of_sample: zero,
            in_sample: zero,
            all_out_of_money: true,
            exercise_at_start: false,
            degree_reductions: 0,
        });
    }

    // Cash flows discounted to t0.
    let mut cash: Vec<f64> = paths.iter().map(|p| p[n_steps][1].exp() * (strike - p[n_steps][0]).max(0.0)).collect();
    let mut rules: Vec<Option<Regression>> = vec![None; n_steps + 1];
    let mut reductions = 0;
    for j in (1..n_steps).rev() {
        let itm: Vec<usize> = (0..paths.len()).filter(|&i| paths[i][j][0] < strike).collect();
        if itm.is_empty() {
            continue;
        }
        let x: Vec<f64> = itm.iter().map(|&i| paths[i][j][0]).collect();
        let y: Vec<f64> = itm.iter().map(|&i| cash[i] * (-paths[i][j][1]).exp()).collect();
        let (rule, reduced) = regress(&x, &y, cfg.degree);
        reductions += reduced as usize;
        for &i in &itm {
            let b = paths[i][j][0];
            let psi = strike - b;
            if psi >= rule.eval(b) {
                cash[i] = paths[i][j][1].exp() * psi;
            }
        }
        rules[j] = Some(rule);
    }
    drop(paths);

    let continuation = mean_stderr(&cash, cfg.antithetic);
    let exercise_at_start = psi0 > 0.0 && psi0 >= continuation.value;
    if exercise_at_start {
        let now = Estimate { value: psi0, stderr: 0.0 };
        return Ok(LsmcResult {
            out_of_sample: now,
            in_sample: now,
            all_out_of_money: false,
            exercise_at_start,
            degree_reductions: reductions,
        });
    }

    let fresh = cfg.spec(problem, cfg.out_of_sample_seed())?;
    let values = run_paths(&problem.initial_curve, model, &fresh, CurveExtent::Window, |_| RuleFollower {
        rules: &rules,
        strike,
        n_steps,
        value: 0.0,
    })?;
    Ok(LsmcResult {
        out_of_sample: mean_stderr(&values, cfg.antithetic),
        in_sample: continuation,
        all_out_of_money: false,
        exercise_at_start,
        degree_reductions: reductions,
    })
}

struct AtExpiry {
    grid: Arc<Grid>,
    step: usize,
    strike: f64,
    bond_maturity: f64,
    value: f64,
}

impl PathVisitor for AtExpiry {
    type Output = f64;

    fn observe(&mut self, v: &StepView<'_>) -> bool {
        if v.step < self.step {
            return true;
        }
        let bond = (-self.grid.integrate_to(v.curve, (self.bond_maturity - v.t).max(0.0))).exp();
        self.value = v.log_discount.exp() * (self.strike - bond).max(0.0);
        false
    }

    fn finish(self) -> f64 {
        self.value
    }
}

/// Discounted `[K - B(T, T)]^+`, which is zero for `K < 1`.
pub fn european_price(problem: &PricingProblem, model: &VolatilityModel, cfg: &LsmcConfig) -> Result<Estimate> {
    european_price_at(problem, model, cfg, problem.maturity)
}

/// European put on the bond with an earlier expiry `t0 < expiry ≤ T`, which
/// must lie on the simulation grid.
pub fn european_price_at(
    problem: &PricingProblem,
    model: &VolatilityModel,
    cfg: &LsmcConfig,
    expiry: f64,
) -> Result<Estimate> {
    problem.validate()?;
    check_strike(problem.strike)?;
    if !(expiry > problem.t0 && expiry <= problem.maturity + 1e-12) {
        return Err(Error::Argument(format!("expiry {expiry} outside ({}, {}]", problem.t0, problem.maturity)));
    }
    let spec = cfg.spec(problem, cfg.seed)?;
    let steps = (expiry - problem.t0) / spec.dt();
    let step = steps.round() as usize;
    if (steps - step as f64).abs() > 1e-9 * steps.max(1.0) {
        return Err(Error::Argument(format!("expiry {expiry} is not on the simulation grid")));
    }
    let grid = problem.initial_curve.grid().clone();
    let values = run_paths(&problem.initial_curve, model, &spec, CurveExtent::Window, |_| AtExpiry {
        grid: grid.clone(),
        step,
        strike: problem.strike,
        bond_maturity: problem.maturity,
        value: 0.0,
    })?;
    Ok(mean_stderr(&values, cfg.antithetic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve_space::{ForwardCurve, SpaceConfig};

    fn problem(strike: f64, level: f64) -> PricingProblem {
        let grid = SpaceConfig::for_maturity(1.0).grid().unwrap();
        PricingProblem::new(strike, 1.0, 0.0, ForwardCurve::constant(grid, level).unwrap()).unwrap()
    }

    fn small(seed: u64, antithetic: bool) -> LsmcConfig {
        LsmcConfig { n_paths: 4000, dt: 1.0 / 50.0, seed, antithetic, ..LsmcConfig::default() }
    }

    #[test]
    fn deterministic_benchmark_matches_date_search() {
        let best = (0..=200)
            .map(|j| {
                let t = j as f64 / 200.0;
                (-0.2 * t).exp() * (0.9 - (-0.2 * (1.0 - t)).exp()).max(0.0)
            })
            .fold(0.0, f64::max);
        let r = lsmc_price(&problem(0.9, 0.2), &VolatilityModel::zero(), &LsmcConfig { n_paths: 1000, ..LsmcConfig::default() })
            .unwrap();
        assert!((r.price() - best).abs() < 1e-12);
        assert!((r.price() - 0.081269).abs() < 1e-3);
        assert!(r.exercise_at_start);
    }

    #[test]
    fn never_in_the_money_is_flagged() {
        let r = lsmc_price(&problem(0.9, -0.05), &VolatilityModel::zero(), &small(1, true)).unwrap();
        assert!(r.all_out_of_money);
        assert_eq!((r.price(), r.stderr()), (0.0, 0.0));
    }

    #[test]
    fn config_is_validated() {
        let p = problem(0.9, 0.05);
        let m = VolatilityModel::zero();
        assert!(lsmc_price(&p, &m, &LsmcConfig { n_paths: 999, ..LsmcConfig::default() }).is_err());
        assert!(lsmc_price(&p, &m, &LsmcConfig { n_paths: 1001, ..LsmcConfig::default() }).is_err());
        assert!(lsmc_price(&p, &m, &LsmcConfig { dt: 0.3, n_paths: 1000, ..LsmcConfig::default() }).is_err());
    }

    #[test]
    fn regression_recovers_a_cubic_and_drops_degree_when_singular() {
        let x: Vec<f64> = (0..200).map(|i| 0.9 + i as f64 * 1e-3).collect();
        let y: Vec<f64> = x.iter().map(|b| 1.0 - 2.0 * b + 0.5 * b * b * b).collect();
        let (r, reduced) = regress(&x, &y, 3);
        assert!(!reduced);
        for b in [0.91, 0.95, 1.05] {
            assert!((r.eval(b) - (1.0 - 2.0 * b + 0.5 * b * b * b)).abs() < 1e-9);
        }
        let (flat, reduced) = regress(&[0.95; 50], &[0.01; 50], 3);
        assert!(reduced);
        assert!((flat.eval(0.95) - 0.01).abs() < 1e-15);
        let (two, reduced) = regress(&[0.9, 0.95, 0.9, 0.95], &[1.0, 2.0, 1.0, 2.0], 3);
        assert!(reduced);
        assert!((two.eval(0.9) - 1.0).abs() < 1e-9 && (two.eval(0.95) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn mean_stderr_pairs_antithetic_samples() {
        let e = mean_stderr(&[1.0, 3.0, 2.0, 2.0], true);
        assert_eq!(e.value, 2.0);
        assert_eq!(e.stderr, 0.0);
        let e = mean_stderr(&[1.0, 3.0], false);
        assert_eq!(e.value, 2.0);
        assert!((e.stderr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn european_at_bond_maturity_is_zero() {
        let m = VolatilityModel::deterministic_exp(0.01, 1.0);
        let e = european_price(&problem(0.95, 0.05), &m, &small(3, true)).unwrap();
        assert_eq!((e.value, e.stderr), (0.0, 0.0));
        assert!(european_price_at(&problem(0.95, 0.05), &m, &small(3, true), 0.333).is_err());
    }

    #[test]
    fn european_is_seed_stable_and_antithetics_help() {
        let p = problem(0.97, 0.05);
        let m = VolatilityModel::deterministic_exp(0.01, 1.0);
        let a = european_price_at(&p, &m, &small(11, false), 0.5).unwrap();
        let b = european_price_at(&p, &m, &small(12, false), 0.5).unwrap();
        let joint = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!(a.value > 0.0 && (a.value - b.value).abs() <= 3.0 * joint);
        let c = european_price_at(&p, &m, &small(11, true), 0.5).unwrap();
        let joint = (a.stderr.powi(2) + c.stderr.powi(2)).sqrt();
        assert!((a.value - c.value).abs() <= 3.0 * joint);
        assert!(c.stderr < a.stderr);
    }

    #[test]
    fn american_dominates_and_in_sample_is_consistent() {
        let p = problem(0.95, 0.05);
        let m = VolatilityModel::deterministic_exp(0.02, 1.0);
        let cfg = small(5, true);
        let r = lsmc_price(&p, &m, &cfg).unwrap();
        assert!(!r.all_out_of_money && r.price() > 0.0);
        assert!(r.in_sample.value >= r.out_of_sample.value - 3.0 * r.stderr());
        for expiry in [0.5, 1.0] {
            let e = european_price_at(&p, &m, &cfg, expiry).unwrap();
            let joint = (r.stderr().powi(2) + e.stderr.powi(2)).sqrt();
            assert!(r.price() >= e.value - 3.0 * joint, "expiry {expiry}");
        }
    }
}
