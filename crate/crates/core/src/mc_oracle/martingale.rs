use serde::{Deserialize, Serialize};

use super::{mean_stderr, Estimate};
use crate::curve_space::BasisSet;
use crate::error::{Error, Result};
use crate::hjm_dynamics::{run_paths, CurveExtent, PathVisitor, PricingProblem, SimulationSpec, StepView, VolatilityModel};
use crate::vi_pricer::ExerciseRule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MartingaleConfig {
    pub n_paths: usize,
    /// `τ*` is only checked on this grid; a coarse step lets paths drift
    /// into the exercise region unnoticed and biases `E[Y]` downward.
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
    /// Equally spaced in `(t0, T]`.
    pub n_checkpoints: usize,
}

impl Default for MartingaleConfig {
    fn default() -> Self {
        MartingaleConfig { n_paths: 20_000, dt: 1.0 / 1600.0, seed: 7, antithetic: true, n_checkpoints: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStat {
    pub t: f64,
    pub mean: f64,
    pub stderr: f64,
    /// `E[Y] - V(t0, h0)`.
    pub deviation: f64,
    pub deviation_in_stderr: f64,
    pub second_moment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub v0: f64,
    pub checkpoints: Vec<CheckpointStat>,
    pub max_deviation_in_stderr: f64,
    pub max_abs_deviation: f64,
    /// `sup_τ E[Y_τ²]`.
    pub sup_second_moment: f64,
    /// Discounted raw payoff collected by the rule on full-model paths.
    pub stopped_payoff: Estimate,
    /// Paths whose projected state left the PDE box at least once.
    pub clamped_paths: usize,
}

struct Outcome {
    y: Vec<f64>,
    payoff: f64,
    clamped: bool,
}

struct Tracker<'a> {
    rule: &'a ExerciseRule,
    basis: &'a BasisSet,
    strike: f64,
    checkpoints: &'a [usize],
    z: Vec<f64>,
    out: Outcome,
    error: Option<Error>,
}

impl PathVisitor for Tracker<'_> {
    type Output = Result<Outcome>;

    fn observe(&mut self, v: &StepView<'_>) -> bool {
        self.basis.coordinates_of_values(v.curve, &mut self.z);
        let (z, moved) = self.rule.surface().grid().clamp(&self.z);
        self.out.clamped |= moved;
        let (value, stop) = match self.rule.evaluate(v.t, &z) {
            Ok(r) => r,
            Err(e) => {
                self.error = Some(e);
                return false;
            }
        };
        let discount = v.log_discount.exp();
        let y = discount * value;
        for (slot, &c) in self.out.y.iter_mut().zip(self.checkpoints) {
            if c == v.step || (stop && c > v.step) {
                *slot = y;
            }
        }
        if stop {
            self.out.payoff = discount * (self.strike - v.bond).max(0.0);
        }
        !stop
    }

    fn finish(self) -> Result<Outcome> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.out),
        }
    }
}

/// Simulates the full model, follows the PDE exercise rule on the projected
/// state and checks that `e^{-∫r} V(τ ∧ τ*, P_n h)` keeps its initial mean.
pub fn martingale_diagnostic(
    rule: &ExerciseRule,
    basis: &BasisSet,
    problem: &PricingProblem,
    model: &VolatilityModel,
    cfg: &MartingaleConfig,
) -> Result<MartingaleReport> {
    problem.validate()?;
    if cfg.n_checkpoints == 0 {
        return Err(Error::Config("at least one checkpoint is needed".into()));
    }
    let grid = rule.surface().grid();
    let n = grid.dim();
    let spec = SimulationSpec::new(problem.t0, problem.maturity, cfg.dt, cfg.n_paths, cfg.seed, cfg.antithetic)?;
    let checkpoints: Vec<usize> = (1..=cfg.n_checkpoints)
        .map(|j| ((j * spec.n_steps) as f64 / cfg.n_checkpoints as f64).round() as usize)
        .collect();

    let z0 = basis.coordinates(&problem.initial_curve, n)?;
    let v0 = rule.surface().value_at_coords(problem.t0, &grid.clamp(&z0).0)?;

    let outcomes = run_paths(&problem.initial_curve, model, &spec, CurveExtent::Full, |_| Tracker {
        rule,
        basis,
        strike: problem.strike,
        checkpoints: &checkpoints,
        z: vec![0.0; n],
        out: Outcome { y: vec![f64::NAN; checkpoints.len()], payoff: 0.0, clamped: false },
        error: None,
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut stats = Vec::with_capacity(checkpoints.len());
    for (c, &step) in checkpoints.iter().enumerate() {
        let ys: Vec<f64> = outcomes.iter().map(|o| o.y[c]).collect();
        let est = mean_stderr(&ys, cfg.antithetic);
        let deviation = est.value - v0;
        // Averages of identical values carry summation roundoff only.
        let roundoff = 1e-12 * v0.abs().max(1e-12);
        let deviation_in_stderr = if deviation.abs() <= roundoff {
            0.0
        } else if est.stderr > roundoff {
            deviation.abs() / est.stderr
        } else {
            f64::INFINITY
        };
        stats.push(CheckpointStat {
            t: spec.time(step),
            mean: est.value,
            stderr: est.stderr,
            deviation,
            deviation_in_stderr,
            second_moment: ys.iter().map(|y| y * y).sum::<f64>() / ys.len() as f64,
        });
    }
    let payoffs: Vec<f64> = outcomes.iter().map(|o| o.payoff).collect();
    Ok(MartingaleReport {
        v0,
        max_deviation_in_stderr: stats.iter().map(|s| s.deviation_in_stderr).fold(0.0, f64::max),
        max_abs_deviation: stats.iter().map(|s| s.deviation.abs()).fold(0.0, f64::max),
        sup_second_moment: stats.iter().map(|s| s.second_moment).fold(0.0, f64::max),
        checkpoints: stats,
        stopped_payoff: mean_stderr(&payoffs, cfg.antithetic),
        clamped_paths: outcomes.iter().filter(|o| o.clamped).count(),
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::curve_space::{build_basis, ForwardCurve, SpaceConfig};
    use crate::vi_pricer::{exercise_rule, solve_chain, ChainConfig, ExerciseMode, GridSettings, SolverSettings};

    #[test]
    fn deterministic_paths_keep_the_initial_value() {
        let basis = Arc::new(build_basis(&SpaceConfig::for_maturity(1.0)).unwrap());
        let model = VolatilityModel::zero();
        for (strike, level) in [(0.9, 0.2), (0.9, -0.05)] {
            let problem =
                PricingProblem::new(strike, 1.0, 0.0, ForwardCurve::constant(basis.grid().clone(), level).unwrap())
                    .unwrap();
            let chain = ChainConfig { n: 1, ..ChainConfig::default() };
            let grid = GridSettings { n_time: 100, ..GridSettings::default() };
            let s = solve_chain(&problem, &model, basis.clone(), &chain, &grid, &SolverSettings::default(), ExerciseMode::American)
                .unwrap();
            let rule = exercise_rule(s.surface.clone(), 1e-6 * strike);
            let cfg = MartingaleConfig { n_paths: 8, dt: 0.01, ..MartingaleConfig::default() };
            let r = martingale_diagnostic(&rule, &basis, &problem, &model, &cfg).unwrap();
            assert!(r.max_abs_deviation <= 1e-6, "level {level}: {}", r.max_abs_deviation);
            assert_eq!(r.checkpoints.len(), 5);
            assert!((r.checkpoints[4].t - 1.0).abs() < 1e-12);
            assert_eq!(r.clamped_paths, 0);
        }
    }
}
