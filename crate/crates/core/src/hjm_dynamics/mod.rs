//! Musiela–HJM dynamics: volatility map, no-arbitrage drift, the mild Euler
//! step, bond prices and the stochastic discount factor.

mod simulate;

pub use simulate::{
    brownian_increments, path_rng, run_paths, simulate_paths, CurveExtent, CurveStepper,
    PathEnsemble, PathVisitor, SimulationSpec, StepView, MAX_ENSEMBLE_ENTRIES,
};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::curve_space::{ForwardCurve, Grid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VolatilityKind {
    DeterministicExp,
    LevelDependent,
}

/// `σ(h)(x) = sigma0 · e^{-κx}`, or the same envelope scaled by
/// `½(1 + tanh h(x))` in the level-dependent case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityModel {
    pub kind: VolatilityKind,
    pub sigma0: f64,
    pub kappa: f64,
}

impl VolatilityModel {
    pub fn deterministic_exp(sigma0: f64, kappa: f64) -> Self {
        VolatilityModel { kind: VolatilityKind::DeterministicExp, sigma0, kappa }
    }

    pub fn level_dependent(sigma0: f64, kappa: f64) -> Self {
        VolatilityModel { kind: VolatilityKind::LevelDependent, sigma0, kappa }
    }

    pub fn zero() -> Self {
        Self::deterministic_exp(0.0, 1.0)
    }

    pub fn is_zero(&self) -> bool {
        self.sigma0 == 0.0
    }

    pub fn is_state_dependent(&self) -> bool {
        self.kind == VolatilityKind::LevelDependent && !self.is_zero()
    }

    /// Checks signs and that `σ` has decayed to within `1e-6` of zero at the
    /// end of the grid.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.sigma0 >= 0.0) || !self.sigma0.is_finite() {
            return Err(Error::Config(format!("sigma0 must be non-negative, got {}", self.sigma0)));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::Config(format!("kappa must be positive, got {}", self.kappa)));
        }
        let tail = self.sigma0 * (-self.kappa * grid.x_max()).exp();
        if tail > 1e-6 {
            return Err(Error::Config(format!(
                "volatility has not decayed at x_max = {} (σ = {tail:.3e}); increase kappa or x_max",
                grid.x_max()
            )));
        }
        Ok(())
    }

    /// `‖sigma0 · e^{-κx}‖_w` on the grid. For the deterministic model this is
    /// `sup_h ‖σ(h)‖_w`; for the level-dependent model it bounds `‖σ(h)‖_w`
    /// over flat curves only.
    pub fn c_sigma(&self, grid: &Arc<Grid>) -> f64 {
        let env = ForwardCurve::from_parts_unchecked(grid.clone(), envelope(grid, self));
        env.inner_w(&env).sqrt()
    }

    /// Nominal Lipschitz constant: 0 for the deterministic model, `sigma0`
    /// for the tanh model (tanh is 1-Lipschitz and the factor ½ absorbs the
    /// decay term).
    pub fn l_sigma(&self) -> f64 {
        match self.kind {
            VolatilityKind::DeterministicExp => 0.0,
            VolatilityKind::LevelDependent => self.sigma0,
        }
    }

    /// Nodal values of `σ(h)` written into `out`.
    pub fn sigma_values(&self, grid: &Grid, h: &[f64], out: &mut [f64]) {
        let nodes = grid.nodes();
        for (j, o) in out.iter_mut().enumerate() {
            let env = self.sigma0 * (-self.kappa * nodes[j]).exp();
            *o = match self.kind {
                VolatilityKind::DeterministicExp => env,
                VolatilityKind::LevelDependent => env * 0.5 * (1.0 + h[j].tanh()),
            };
        }
    }
}

fn envelope(grid: &Grid, model: &VolatilityModel) -> Vec<f64> {
    grid.nodes().iter().map(|&x| model.sigma0 * (-model.kappa * x).exp()).collect()
}

pub fn sigma_of(h: &ForwardCurve, model: &VolatilityModel) -> ForwardCurve {
    let mut out = vec![0.0; h.values().len()];
    model.sigma_values(h.grid(), h.values(), &mut out);
    ForwardCurve::from_parts_unchecked(h.grid().clone(), out)
}

/// `F_σ = σ · ∫_0^x σ` given nodal `σ`, cumulative trapezoid.
pub fn drift_from_sigma(sigma: &[f64], dx: f64, out: &mut [f64]) {
    let mut acc = 0.0;
    out[0] = 0.0;
    for j in 1..sigma.len() {
        acc += 0.5 * dx * (sigma[j - 1] + sigma[j]);
        out[j] = sigma[j] * acc;
    }
}

/// No-arbitrage drift `F_σ(h)(x) = σ(h)(x) ∫_0^x σ(h)(y) dy`.
pub fn hjm_drift(h: &ForwardCurve, model: &VolatilityModel) -> ForwardCurve {
    let sigma = sigma_of(h, model);
    let mut out = vec![0.0; sigma.values().len()];
    drift_from_sigma(sigma.values(), h.grid().dx(), &mut out);
    ForwardCurve::from_parts_unchecked(h.grid().clone(), out)
}

/// Option contract: put with strike `K` on the bond maturing at `T`,
/// valued at `t0` from the initial curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PricingProblem {
    pub strike: f64,
    pub maturity: f64,
    pub t0: f64,
    pub initial_curve: ForwardCurve,
}

impl PricingProblem {
    pub fn new(strike: f64, maturity: f64, t0: f64, initial_curve: ForwardCurve) -> Result<Self> {
        let p = PricingProblem { strike, maturity, t0, initial_curve };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_strike(self.strike)?;
        if !(self.t0 >= 0.0) || !(self.maturity > self.t0) || !self.maturity.is_finite() {
            return Err(Error::Contract(format!(
                "need T > t0 ≥ 0, got T = {}, t0 = {}",
                self.maturity, self.t0
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_strike(k: f64) -> Result<()> {
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::Contract(format!("strike must lie in (0, 1), got {k}")));
    }
    Ok(())
}

/// Time, curve and `-∫_0^t r_s(0) ds` along a simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub t: f64,
    pub curve: ForwardCurve,
    pub log_discount: f64,
}

impl PathState {
    pub fn new(t: f64, curve: ForwardCurve) -> Self {
        PathState { t, curve, log_discount: 0.0 }
    }

    pub fn discount(&self) -> f64 {
        self.log_discount.exp()
    }
}

/// One mild Euler step: `r(x) ← S(dt)[r + dt·F_σ(r) + σ(r)·dB](x)`, with the
/// spot integral accumulated by the trapezoid rule.
pub fn euler_step(state: &PathState, dt: f64, d_b: f64, model: &VolatilityModel) -> Result<PathState> {
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("time step must be positive, got {dt}")));
    }
    let grid = state.curve.grid();
    let h = state.curve.values();
    let n = h.len();
    let mut sigma = vec![0.0; n];
    let mut drift = vec![0.0; n];
    model.sigma_values(grid, h, &mut sigma);
    drift_from_sigma(&sigma, grid.dx(), &mut drift);
    let tmp: Vec<f64> = (0..n).map(|j| h[j] + dt * drift[j] + sigma[j] * d_b).collect();
    let mut next = vec![0.0; n];
    grid.shift_values(&tmp, dt, &mut next);
    let log_discount = state.log_discount - 0.5 * dt * (h[0] + next[0]);
    Ok(PathState {
        t: state.t + dt,
        curve: ForwardCurve::new(grid.clone(), next)?,
        log_discount,
    })
}

/// `B(t, T) = exp(-∫_0^{T-t} r_t(x) dx)`.
pub fn bond_price(state: &PathState, maturity: f64) -> Result<f64> {
    let tau = time_to_maturity(state.t, maturity)?;
    Ok((-state.curve.integral_to(tau)).exp())
}

fn time_to_maturity(t: f64, maturity: f64) -> Result<f64> {
    let tau = maturity - t;
    if tau < -1e-12 {
        return Err(Error::Argument(format!("valuation time {t} is past maturity {maturity}")));
    }
    Ok(tau.max(0.0))
}

/// `Ψ(t, h) = [K - B(t, T)]^+`.
pub fn payoff(state: &PathState, strike: f64, maturity: f64) -> Result<f64> {
    check_strike(strike)?;
    Ok((strike - bond_price(state, maturity)?).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve_space::{build_basis, sample_gaussian, sup_bound_constant, SpaceConfig};

    fn grid() -> Arc<Grid> {
        SpaceConfig::for_maturity(1.0).grid().unwrap()
    }

    #[test]
    fn sigma_definitions() {
        let g = grid();
        let h = ForwardCurve::constant(g.clone(), 0.3).unwrap();
        let s = sigma_of(&h, &VolatilityModel::deterministic_exp(0.01, 1.0));
        assert_eq!(s.spot(), 0.01);
        let z = ForwardCurve::zeros(g.clone());
        let s = sigma_of(&z, &VolatilityModel::level_dependent(0.01, 1.0));
        for (x, v) in g.nodes().iter().zip(s.values()) {
            assert!((v - 0.005 * (-x).exp()).abs() < 1e-15);
        }
        assert!(s.values().last().unwrap().abs() < 1e-6);
    }

    #[test]
    fn drift_vanishes_at_zero_and_matches_closed_form() {
        let g = grid();
        let h = ForwardCurve::constant(g.clone(), 0.05).unwrap();
        let f = hjm_drift(&h, &VolatilityModel::deterministic_exp(0.01, 1.0));
        assert_eq!(f.spot(), 0.0);
        let x = 2f64.ln();
        // closed form (σ0²/κ)(e^{-x} - e^{-2x}) = 2.5e-5
        assert!((f.at(x) - 2.5e-5).abs() < 1e-8, "{}", f.at(x));
        let f0 = hjm_drift(&h, &VolatilityModel::zero());
        assert!(f0.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn euler_step_without_volatility_is_transport() {
        let g = grid();
        let m = VolatilityModel::zero();
        let c = ForwardCurve::constant(g.clone(), 0.04).unwrap();
        let s = euler_step(&PathState::new(0.0, c.clone()), 0.01, 0.7, &m).unwrap();
        assert_eq!(s.curve, c);
        assert!((s.log_discount + 0.04 * 0.01).abs() < 1e-15);

        let h = ForwardCurve::from_fn(g.clone(), |x| 0.02 + 0.01 * (-x).exp()).unwrap();
        let s = euler_step(&PathState::new(0.0, h.clone()), 0.013, -1.2, &m).unwrap();
        assert_eq!(s.curve, h.shift(0.013).unwrap());
        assert!(matches!(euler_step(&s, 0.0, 0.0, &m), Err(Error::Argument(_))));
    }

    #[test]
    fn time_homogeneity() {
        let g = grid();
        let m = VolatilityModel::level_dependent(0.02, 1.0);
        let h = ForwardCurve::from_fn(g, |x| 0.03 + 0.01 * x * (-x).exp()).unwrap();
        let mut a = PathState::new(0.0, h.clone());
        let mut b = PathState::new(0.4, h);
        for i in 0..20 {
            let d_b = 0.05 * ((i * 7 % 5) as f64 - 2.0);
            a = euler_step(&a, 0.005, d_b, &m).unwrap();
            b = euler_step(&b, 0.005, d_b, &m).unwrap();
            assert_eq!(a.curve, b.curve);
            assert_eq!(a.log_discount, b.log_discount);
        }
    }

    #[test]
    fn bond_prices() {
        let g = grid();
        let z = PathState::new(0.0, ForwardCurve::zeros(g.clone()));
        assert_eq!(bond_price(&z, 1.0).unwrap(), 1.0);
        let c = PathState::new(0.0, ForwardCurve::constant(g.clone(), 0.05).unwrap());
        assert!((bond_price(&c, 1.0).unwrap() - (-0.05f64).exp()).abs() < 1e-12);
        let at_t = PathState::new(1.0, ForwardCurve::constant(g, 0.05).unwrap());
        assert_eq!(bond_price(&at_t, 1.0).unwrap(), 1.0);
        assert!(bond_price(&at_t, 0.5).is_err());
    }

    #[test]
    fn payoff_values() {
        let g = grid();
        let z = PathState::new(0.0, ForwardCurve::zeros(g.clone()));
        assert_eq!(payoff(&z, 0.9, 1.0).unwrap(), 0.0);
        let c = PathState::new(0.0, ForwardCurve::constant(g, 0.2).unwrap());
        assert!((payoff(&c, 0.9, 1.0).unwrap() - 0.081_269_246_922_018_2).abs() < 1e-9);
        assert!(matches!(payoff(&c, 1.0, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn payoff_is_lipschitz_in_the_curve() {
        let cfg = SpaceConfig::for_maturity(1.0);
        let basis = build_basis(&cfg).unwrap();
        let c = sup_bound_constant(&cfg).unwrap();
        for i in 0..500u64 {
            let h = sample_gaussian(8, &basis, 2 * i).unwrap().scale(0.1);
            let g = sample_gaussian(8, &basis, 2 * i + 1).unwrap().scale(0.1);
            let t = (i % 10) as f64 / 10.0;
            let ph = payoff(&PathState::new(t, h.clone()), 0.95, 1.0).unwrap();
            let pg = payoff(&PathState::new(t, g.clone()), 0.95, 1.0).unwrap();
            let bound = c * 1.0 * h.sub(&g).norm_w().unwrap();
            assert!((ph - pg).abs() <= bound + 1e-6);
        }
    }
}
