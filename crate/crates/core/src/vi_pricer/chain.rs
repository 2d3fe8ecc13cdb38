use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    auto_grid, build_operator, psor_solve, BoundaryPoint, ExerciseMode, GridSettings, Obstacle, PdeGrid,
    SolverSettings, ValueSurface,
};
use crate::approximation_chain::{effective_coefficients, EffectiveCoefficients, EpsilonRule, GalerkinModel};
use crate::curve_space::{BasisSet, ForwardCurve};
use crate::error::{Error, Result};
use crate::hjm_dynamics::{check_strike, PricingProblem, VolatilityModel};
use crate::payoff_smoothing::MollifiedPayoff;

/// Smoothing index, Yosida parameter, Galerkin dimension and noise rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub k: f64,
    pub alpha: f64,
    pub n: usize,
    pub epsilon: EpsilonRule,
    /// Use the unsmoothed payoff as the obstacle.
    pub raw_obstacle: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig { k: 256.0, alpha: 250.0, n: 2, epsilon: EpsilonRule::default(), raw_obstacle: false }
    }
}

/// `Ψ_k(t, z) = g_k(K - exp(-Σ z_i ∫_0^{T-t} φ_i))`.
#[derive(Debug, Clone)]
pub struct ChainObstacle {
    payoff: Option<MollifiedPayoff>,
    strike: f64,
    maturity: f64,
    dx: f64,
    phi: Vec<Vec<f64>>,
    cumulative: Vec<Vec<f64>>,
}

impl ChainObstacle {
    /// `k = None` gives the raw payoff `[K - B]^+`.
    pub fn new(basis: &BasisSet, n: usize, strike: f64, maturity: f64, k: Option<f64>) -> Result<Self> {
        check_strike(strike)?;
        if n == 0 || n > basis.len() {
            return Err(Error::Argument(format!("dimension {n} outside 1..={}", basis.len())));
        }
        let payoff = k.map(MollifiedPayoff::new).transpose()?;
        let dx = basis.grid().dx();
        let phi: Vec<Vec<f64>> = (0..n).map(|i| basis.function(i).values().to_vec()).collect();
        let cumulative = phi
            .iter()
            .map(|p| {
                let mut c = vec![0.0; p.len()];
                crate::quadrature::cumulative_trapezoid(p, dx, &mut c);
                c
            })
            .collect();
        Ok(ChainObstacle { payoff, strike, maturity, dx, phi, cumulative })
    }

    pub fn strike(&self) -> f64 {
        self.strike
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    /// `∫_0^τ φ_i` for each basis function, exact for the piecewise-linear
    /// interpolant.
    pub fn loadings(&self, tau: f64) -> Vec<f64> {
        self.phi
            .iter()
            .zip(&self.cumulative)
            .map(|(p, c)| {
                let n = p.len();
                let s = (tau.max(0.0) / self.dx).min((n - 1) as f64);
                let m = (s.floor() as usize).min(n - 1);
                let frac = s - m as f64;
                if frac > 0.0 && m + 1 < n {
                    let end = (1.0 - frac) * p[m] + frac * p[m + 1];
                    c[m] + 0.5 * frac * self.dx * (p[m] + end)
                } else {
                    c[m]
                }
            })
            .collect()
    }

    pub fn bond(&self, t: f64, z: &[f64]) -> f64 {
        let tau = (self.maturity - t).max(0.0);
        let l = self.loadings(tau);
        (-z.iter().zip(&l).map(|(a, b)| a * b).sum::<f64>()).exp()
    }
}

impl Obstacle for ChainObstacle {
    fn value(&self, t: f64, z: &[f64]) -> f64 {
        let gap = self.strike - self.bond(t, z);
        match &self.payoff {
            Some(p) => p.gain(gap),
            None => gap.max(0.0),
        }
    }
}

/// Everything produced by one solve of the approximation chain.
#[derive(Debug, Clone)]
pub struct ChainSolution {
    pub coefficients: EffectiveCoefficients,
    pub obstacle: Arc<ChainObstacle>,
    pub surface: Arc<ValueSurface>,
    /// `P_n h0` in basis coordinates.
    pub z0: Vec<f64>,
    pub upwinded_rows: usize,
}

impl ChainSolution {
    pub fn price(&self) -> f64 {
        self.surface.price()
    }

    pub fn galerkin(&self) -> &GalerkinModel {
        self.coefficients.galerkin()
    }
}

/// Builds `Ψ_k`, the Galerkin generator and the grid, then solves.
pub fn solve_chain(
    problem: &PricingProblem,
    model: &VolatilityModel,
    basis: Arc<BasisSet>,
    chain: &ChainConfig,
    grid_settings: &GridSettings,
    solver: &SolverSettings,
    mode: ExerciseMode,
) -> Result<ChainSolution> {
    problem.validate()?;
    let coefficients = effective_coefficients(chain.n, chain.alpha, model, basis.clone(), chain.epsilon)?;
    let z0 = basis.coordinates(&problem.initial_curve, chain.n)?;
    let grid = auto_grid(&coefficients, &z0, problem.t0, problem.maturity, grid_settings)?;
    solve_with(problem, coefficients, basis, chain, &grid, solver, mode)
}

/// Same as [`solve_chain`] on a caller-supplied grid.
pub fn solve_chain_on(
    problem: &PricingProblem,
    model: &VolatilityModel,
    basis: Arc<BasisSet>,
    chain: &ChainConfig,
    grid: &PdeGrid,
    solver: &SolverSettings,
    mode: ExerciseMode,
) -> Result<ChainSolution> {
    problem.validate()?;
    let coefficients = effective_coefficients(chain.n, chain.alpha, model, basis.clone(), chain.epsilon)?;
    solve_with(problem, coefficients, basis, chain, grid, solver, mode)
}

fn solve_with(
    problem: &PricingProblem,
    coefficients: EffectiveCoefficients,
    basis: Arc<BasisSet>,
    chain: &ChainConfig,
    grid: &PdeGrid,
    solver: &SolverSettings,
    mode: ExerciseMode,
) -> Result<ChainSolution> {
    let k = if chain.raw_obstacle { None } else { Some(chain.k) };
    let obstacle = Arc::new(ChainObstacle::new(&basis, chain.n, problem.strike, problem.maturity, k)?);
    let z0 = basis.coordinates(&problem.initial_curve, chain.n)?;
    let grid = grid.clone();
    let op = build_operator(&coefficients, &grid)?;
    let surface = psor_solve(&op, obstacle.clone(), &grid, solver, mode)?;
    Ok(ChainSolution {
        coefficients,
        obstacle,
        surface: Arc::new(surface),
        z0,
        upwinded_rows: op.upwinded_rows(),
    })
}

/// Price change when the box is widened by a quarter at fixed spacing; a
/// large value means the Dirichlet boundary is felt at the initial state.
pub fn truncation_sensitivity(
    problem: &PricingProblem,
    model: &VolatilityModel,
    basis: Arc<BasisSet>,
    chain: &ChainConfig,
    solution: &ChainSolution,
    solver: &SolverSettings,
) -> Result<f64> {
    let wide = solution.surface.grid().scaled(1.25);
    let other = solve_chain_on(problem, model, basis, chain, &wide, solver, solution.surface.mode())?;
    Ok((other.price() - solution.price()).abs())
}

/// `V^{(n)}(t, P_n h)`.
pub fn value_at(surface: &ValueSurface, t: f64, h: &ForwardCurve, basis: &BasisSet) -> Result<f64> {
    let z = basis.coordinates(h, surface.grid().dim())?;
    surface.value_at_coords(t, &z)
}

/// Stop at the first time the interpolated nodal gap `V - Ψ` is at most
/// `tol_gap` where the payoff is positive, and always at `T`.
#[derive(Debug, Clone)]
pub struct ExerciseRule {
    surface: Arc<ValueSurface>,
    tol_gap: f64,
}

impl ExerciseRule {
    pub fn surface(&self) -> &Arc<ValueSurface> {
        &self.surface
    }

    pub fn tol_gap(&self) -> f64 {
        self.tol_gap
    }

    pub fn stops(&self, t: f64, z: &[f64]) -> Result<bool> {
        Ok(self.evaluate(t, z)?.1)
    }

    /// `(V(t, z), stop?)`.
    pub fn evaluate(&self, t: f64, z: &[f64]) -> Result<(f64, bool)> {
        let v = self.surface.value_at_coords(t, z)?;
        if t >= self.surface.grid().maturity() - 1e-12 {
            return Ok((v, true));
        }
        let psi = self.surface.obstacle().value(t, z);
        Ok((v, psi > 0.0 && self.surface.gap_at_coords(t, z)? <= self.tol_gap))
    }

    pub fn boundary_trace(&self) -> Vec<BoundaryPoint> {
        self.surface.boundary_trace(self.tol_gap)
    }
}

pub fn exercise_rule(surface: Arc<ValueSurface>, tol_gap: f64) -> ExerciseRule {
    ExerciseRule { surface, tol_gap }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve_space::{build_basis, SpaceConfig};

    fn basis() -> Arc<BasisSet> {
        Arc::new(build_basis(&SpaceConfig::for_maturity(1.0)).unwrap())
    }

    fn problem(b: &BasisSet, strike: f64, level: f64) -> PricingProblem {
        PricingProblem::new(strike, 1.0, 0.0, ForwardCurve::constant(b.grid().clone(), level).unwrap()).unwrap()
    }

    #[test]
    fn loadings_match_grid_integrals() {
        let b = basis();
        let o = ChainObstacle::new(&b, 3, 0.9, 1.0, Some(16.0)).unwrap();
        for tau in [0.0, 0.013, 0.5, 0.77, 1.0] {
            let l = o.loadings(tau);
            for i in 0..3 {
                assert!((l[i] - b.function(i).integral_to(tau)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn deterministic_benchmark() {
        let b = basis();
        let p = problem(&b, 0.9, 0.2);
        for n in [1, 2] {
            let chain = ChainConfig { n, ..ChainConfig::default() };
            let s = solve_chain(
                &p,
                &VolatilityModel::zero(),
                b.clone(),
                &chain,
                &GridSettings::default(),
                &SolverSettings::default(),
                ExerciseMode::American,
            )
            .unwrap();
            assert!((s.price() - (0.9 - (-0.2f64).exp())).abs() < 1e-3, "n={n}: {}", s.price());
            let rule = exercise_rule(s.surface.clone(), 1e-6 * 0.9);
            assert!(rule.stops(0.0, &s.z0).unwrap());
        }
    }

    #[test]
    fn value_at_terminal_and_obstacle_constraint() {
        let b = basis();
        let p = problem(&b, 0.95, 0.05);
        let s = solve_chain(
            &p,
            &VolatilityModel::deterministic_exp(0.02, 1.0),
            b.clone(),
            &ChainConfig { n: 1, ..ChainConfig::default() },
            &GridSettings { n_time: 50, ..GridSettings::default() },
            &SolverSettings::default(),
            ExerciseMode::American,
        )
        .unwrap();
        let h = ForwardCurve::constant(b.grid().clone(), 0.06).unwrap();
        let v = value_at(&s.surface, 1.0, &h, &b).unwrap();
        assert_eq!(v, s.obstacle.value(1.0, &[0.06]));
        for i in 0..1000 {
            let t = (i % 50) as f64 / 50.0;
            let z = 0.05 + 0.04 * ((i as f64 * 0.618).fract() - 0.5);
            let v = s.surface.value_at_coords(t, &[z]).unwrap();
            assert!(v >= s.obstacle.value(t, &[z]));
        }
        let far = ForwardCurve::constant(b.grid().clone(), 5.0).unwrap();
        assert!(matches!(value_at(&s.surface, 0.5, &far, &b), Err(Error::Extrapolation(_))));

        let chain = ChainConfig { n: 1, ..ChainConfig::default() };
        let m = VolatilityModel::deterministic_exp(0.02, 1.0);
        let d = truncation_sensitivity(&p, &m, b.clone(), &chain, &s, &SolverSettings::default()).unwrap();
        assert!(d < 1e-6, "{d}");
    }
}
