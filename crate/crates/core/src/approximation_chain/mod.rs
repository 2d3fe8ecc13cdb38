//! Yosida-approximated and Galerkin-reduced forward-rate dynamics.

mod studies;

pub use studies::{
    discount_sup_study, galerkin_distance_study, yosida_distance_study, CoupledStudy, DistancePoint,
    DiscountPoint,
};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::curve_space::{BasisSet, ForwardCurve};
use crate::error::{Error, Result};
use crate::hjm_dynamics::{drift_from_sigma, hjm_drift, sigma_of, PathState, VolatilityModel};

/// `ε_n = scale / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRule {
    pub scale: f64,
}

impl EpsilonRule {
    pub fn epsilon(&self, n: usize) -> f64 {
        self.scale / n as f64
    }
}

impl Default for EpsilonRule {
    fn default() -> Self {
        EpsilonRule { scale: 1e-3 }
    }
}

/// Strong Euler step of the Yosida SDE
/// `dr = (A_α r + F_σ(r)) dt + σ(r) dB`. A zero step is the identity.
pub fn yosida_step(
    state: &PathState,
    dt: f64,
    d_b: f64,
    alpha: f64,
    model: &VolatilityModel,
) -> Result<PathState> {
    if !(dt >= 0.0) {
        return Err(Error::Argument(format!("time step must be non-negative, got {dt}")));
    }
    if dt == 0.0 {
        return Ok(state.clone());
    }
    let h = &state.curve;
    let grid = h.grid();
    let a = h.yosida_apply(alpha)?;
    let n = grid.len();
    let mut sigma = vec![0.0; n];
    let mut drift = vec![0.0; n];
    model.sigma_values(grid, h.values(), &mut sigma);
    drift_from_sigma(&sigma, grid.dx(), &mut drift);
    let next: Vec<f64> = (0..n)
        .map(|j| h.values()[j] + dt * (a.values()[j] + drift[j]) + sigma[j] * d_b)
        .collect();
    let log_discount = state.log_discount - 0.5 * dt * (h.values()[0] + next[0]);
    Ok(PathState {
        t: state.t + dt,
        curve: ForwardCurve::new(grid.clone(), next)?,
        log_discount,
    })
}

/// The Galerkin SDE in the coordinates `z_i = ⟨r, φ_i⟩_w`, `i ≤ n`:
/// `dz = [M z + P_n F_σ(h)] dt + P_n σ(h) dW⁰ + ε_n dW`, `h = Σ z_i φ_i`,
/// with `M_ij = ⟨A_α φ_j, φ_i⟩_w`.
#[derive(Debug, Clone)]
pub struct GalerkinModel {
    n: usize,
    alpha: f64,
    epsilon: f64,
    basis: Arc<BasisSet>,
    model: VolatilityModel,
    yosida: Vec<Vec<f64>>,
    /// `P_n σ` and `P_n F_σ` when `σ` does not depend on the state.
    fixed: Option<(Vec<f64>, Vec<f64>)>,
    phi_at_zero: Vec<f64>,
}

impl GalerkinModel {
    pub fn new(n: usize, alpha: f64, epsilon: f64, basis: Arc<BasisSet>, model: VolatilityModel) -> Result<Self> {
        if n == 0 || n > basis.len() {
            return Err(Error::Argument(format!(
                "Galerkin dimension {n} outside 1..={}",
                basis.len()
            )));
        }
        if !(alpha > 0.0) {
            return Err(Error::Argument(format!("alpha must be positive, got {alpha}")));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::Argument(format!("epsilon must be non-negative, got {epsilon}")));
        }
        model.validate(basis.grid())?;
        let mut yosida = vec![vec![0.0; n]; n];
        for j in 0..n {
            let a = basis.function(j).yosida_apply(alpha)?;
            let c = basis.coordinates(&a, n)?;
            for i in 0..n {
                yosida[i][j] = c[i];
            }
        }
        let fixed = if model.is_state_dependent() {
            None
        } else {
            let zero = ForwardCurve::zeros(basis.grid().clone());
            let s = basis.coordinates(&sigma_of(&zero, &model), n)?;
            let f = basis.coordinates(&hjm_drift(&zero, &model), n)?;
            Some((s, f))
        };
        let phi_at_zero = (0..n).map(|i| basis.function(i).spot()).collect();
        Ok(GalerkinModel { n, alpha, epsilon, basis, model, yosida, fixed, phi_at_zero })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    pub fn volatility_model(&self) -> &VolatilityModel {
        &self.model
    }

    /// `M_ij = ⟨A_α φ_j, φ_i⟩_w`.
    pub fn yosida_matrix(&self) -> &[Vec<f64>] {
        &self.yosida
    }

    fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.n {
            return Err(Error::Argument(format!(
                "coefficient vector has length {} but the model dimension is {}",
                z.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// `(P_n σ(h), P_n F_σ(h))` for `h = Σ z_i φ_i`.
    fn projected_sigma_and_drift(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        if let Some((s, f)) = &self.fixed {
            return (s.clone(), f.clone());
        }
        let grid = self.basis.grid();
        let len = grid.len();
        let mut h = vec![0.0; len];
        for (c, phi) in z.iter().zip(self.basis.functions()) {
            for (v, p) in h.iter_mut().zip(phi.values()) {
                *v += c * p;
            }
        }
        let mut sigma = vec![0.0; len];
        let mut drift = vec![0.0; len];
        self.model.sigma_values(grid, &h, &mut sigma);
        drift_from_sigma(&sigma, grid.dx(), &mut drift);
        let mut s = vec![0.0; self.n];
        let mut f = vec![0.0; self.n];
        self.basis.coordinates_of_values(&sigma, &mut s);
        self.basis.coordinates_of_values(&drift, &mut f);
        (s, f)
    }

    /// Drift `b(z) = M z + P_n F_σ(h)`.
    pub fn drift(&self, z: &[f64]) -> Vec<f64> {
        let (_, f) = self.projected_sigma_and_drift(z);
        self.drift_with(z, &f)
    }

    fn drift_with(&self, z: &[f64], f: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| f[i] + self.yosida[i].iter().zip(z).map(|(m, v)| m * v).sum::<f64>())
            .collect()
    }

    /// Loading `s(z) = P_n σ(h)` on the common driver `W⁰`.
    pub fn vol(&self, z: &[f64]) -> Vec<f64> {
        self.projected_sigma_and_drift(z).0
    }

    /// Short rate `ρ(z) = h^{(n)}(0) = Σ z_i φ_i(0)`.
    pub fn rho(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.phi_at_zero).map(|(a, b)| a * b).sum()
    }

    /// `∫_0^τ φ_i` for `i < n`, so that `-∫_0^τ h^{(n)} = -Σ z_i I_i(τ)`.
    pub fn bond_loadings(&self, tau: f64) -> Vec<f64> {
        (0..self.n).map(|i| self.basis.function(i).integral_to(tau)).collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<ForwardCurve> {
        self.check_dim(z)?;
        self.basis.reconstruct(z)
    }

    pub fn project(&self, h: &ForwardCurve) -> Result<Vec<f64>> {
        self.basis.coordinates(h, self.n)
    }
}

/// Euler step of the Galerkin SDE. `d_bi` holds the `n` increments of the
/// auxiliary drivers `W¹..Wⁿ`.
pub fn galerkin_step(z: &[f64], dt: f64, d_b0: f64, d_bi: &[f64], model: &GalerkinModel) -> Result<Vec<f64>> {
    model.check_dim(z)?;
    if d_bi.len() != model.n {
        return Err(Error::Argument(format!(
            "{} auxiliary increments supplied for dimension {}",
            d_bi.len(),
            model.n
        )));
    }
    if !(dt >= 0.0) {
        return Err(Error::Argument(format!("time step must be non-negative, got {dt}")));
    }
    let (s, f) = model.projected_sigma_and_drift(z);
    let b = model.drift_with(z, &f);
    Ok((0..model.n)
        .map(|i| z[i] + dt * b[i] + s[i] * d_b0 + model.epsilon * d_bi[i])
        .collect())
}

/// Coefficients of the generator `½ Tr[(s sᵀ + ε²I) D²] + b·D - ρ` of the
/// Galerkin process, for the PDE solver.
#[derive(Debug, Clone)]
pub struct EffectiveCoefficients {
    model: GalerkinModel,
}

impl EffectiveCoefficients {
    pub fn galerkin(&self) -> &GalerkinModel {
        &self.model
    }

    pub fn drift(&self, z: &[f64]) -> Vec<f64> {
        self.model.drift(z)
    }

    pub fn vol(&self, z: &[f64]) -> Vec<f64> {
        self.model.vol(z)
    }

    pub fn noise_floor(&self) -> f64 {
        self.model.epsilon
    }

    pub fn discount_rate(&self, z: &[f64]) -> f64 {
        self.model.rho(z)
    }
}

/// Builds the generator coefficients for `n ∈ {1, 2}`.
pub fn effective_coefficients(
    n: usize,
    alpha: f64,
    model: &VolatilityModel,
    basis: Arc<BasisSet>,
    epsilon: EpsilonRule,
) -> Result<EffectiveCoefficients> {
    if !(1..=2).contains(&n) {
        return Err(Error::UnsupportedDimension(n));
    }
    let model = GalerkinModel::new(n, alpha, epsilon.epsilon(n), basis, model.clone())?;
    Ok(EffectiveCoefficients { model })
}
