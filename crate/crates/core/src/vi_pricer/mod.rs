//! Finite-dimensional obstacle problem for the Galerkin value function:
//! `max{∂_t V + L V - ρ V, Ψ_k - V} = 0`, solved backward in time by
//! Crank–Nicolson steps with projected SOR on a bounded box.

mod chain;
mod operator;
mod solver;

pub use chain::{
    exercise_rule, solve_chain, solve_chain_on, truncation_sensitivity, value_at, ChainConfig, ChainObstacle, ChainSolution, ExerciseRule,
};
pub use operator::{auto_grid, build_operator, DiscreteOperator, GridSettings, PdeGrid};
pub use solver::{psor_solve, BoundaryPoint, ExerciseMode, Obstacle, SolverSettings, ValueSurface};

use crate::approximation_chain::EffectiveCoefficients;

/// Coefficients of `½ Tr[(s sᵀ + ε² I) D²] + b·D - ρ` on `ℝⁿ`.
pub trait GeneratorCoefficients: Sync {
    fn dim(&self) -> usize;
    fn drift(&self, z: &[f64]) -> Vec<f64>;
    /// Loading on the common driver.
    fn vol(&self, z: &[f64]) -> Vec<f64>;
    /// Independent noise of size `ε` on every coordinate.
    fn noise_floor(&self) -> f64;
    fn discount_rate(&self, z: &[f64]) -> f64;
}

impl GeneratorCoefficients for EffectiveCoefficients {
    fn dim(&self) -> usize {
        self.galerkin().dim()
    }

    fn drift(&self, z: &[f64]) -> Vec<f64> {
        EffectiveCoefficients::drift(self, z)
    }

    fn vol(&self, z: &[f64]) -> Vec<f64> {
        EffectiveCoefficients::vol(self, z)
    }

    fn noise_floor(&self) -> f64 {
        EffectiveCoefficients::noise_floor(self)
    }

    fn discount_rate(&self, z: &[f64]) -> f64 {
        EffectiveCoefficients::discount_rate(self, z)
    }
}
