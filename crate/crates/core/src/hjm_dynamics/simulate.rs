use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{drift_from_sigma, VolatilityModel};
use crate::curve_space::{ForwardCurve, Grid};
use crate::error::{Error, Result};

/// Upper bound on stored `f64` entries in a [`PathEnsemble`] (1 GiB).
pub const MAX_ENSEMBLE_ENTRIES: usize = 1 << 27;

/// Extra nodes kept past the bond horizon when stepping a truncated curve.
const WINDOW_MARGIN: usize = 64;

/// Time grid, path count and generator settings for a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub t0: f64,
    pub maturity: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimulationSpec {
    /// `dt` must divide `T - t0` up to rounding.
    pub fn new(t0: f64, maturity: f64, dt: f64, n_paths: usize, seed: u64, antithetic: bool) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Argument(format!("time step must be positive, got {dt}")));
        }
        let span = maturity - t0;
        if !(span > 0.0) {
            return Err(Error::Argument(format!("need T > t0, got T = {maturity}, t0 = {t0}")));
        }
        let steps = (span / dt).round();
        if steps < 1.0 || (steps * dt - span).abs() > 1e-9 * span.max(1.0) {
            return Err(Error::Argument(format!("dt = {dt} does not divide T - t0 = {span}")));
        }
        Self::with_steps(t0, maturity, steps as usize, n_paths, seed, antithetic)
    }

    pub fn with_steps(
        t0: f64,
        maturity: f64,
        n_steps: usize,
        n_paths: usize,
        seed: u64,
        antithetic: bool,
    ) -> Result<Self> {
        if n_paths == 0 || n_steps == 0 {
            return Err(Error::Argument("need at least one path and one step".into()));
        }
        if !(maturity > t0) || !(t0 >= 0.0) {
            return Err(Error::Argument(format!("need T > t0 ≥ 0, got T = {maturity}, t0 = {t0}")));
        }
        Ok(SimulationSpec { t0, maturity, n_steps, n_paths, seed, antithetic })
    }

    pub fn dt(&self) -> f64 {
        (self.maturity - self.t0) / self.n_steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        if step == self.n_steps {
            self.maturity
        } else {
            self.t0 + step as f64 * self.dt()
        }
    }
}

/// Generator for one path and the sign applied to its increments. Antithetic
/// pairs `(2i, 2i+1)` share stream `i`.
pub fn path_rng(seed: u64, path: usize, antithetic: bool) -> (ChaCha8Rng, f64) {
    let (stream, sign) = if antithetic {
        ((path / 2) as u64, if path % 2 == 1 { -1.0 } else { 1.0 })
    } else {
        (path as u64, 1.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (rng, sign)
}

/// The increments `run_paths` feeds to `path`.
pub fn brownian_increments(seed: u64, path: usize, n_steps: usize, dt: f64, antithetic: bool) -> Vec<f64> {
    let (mut rng, sign) = path_rng(seed, path, antithetic);
    let sd = dt.sqrt();
    (0..n_steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sign * sd * z
        })
        .collect()
}

/// Mild Euler stepper over the first `len` nodes of the grid, reusing its
/// buffers across steps.
#[derive(Debug, Clone)]
pub struct CurveStepper {
    grid: Arc<Grid>,
    model: VolatilityModel,
    dt: f64,
    sigma: Vec<f64>,
    drift: Vec<f64>,
    scratch: Vec<f64>,
}

impl CurveStepper {
    pub fn new(grid: Arc<Grid>, model: &VolatilityModel, dt: f64, len: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Argument(format!("time step must be positive, got {dt}")));
        }
        let len = len.clamp(2, grid.len());
        let mut sigma = vec![0.0; len];
        let mut drift = vec![0.0; len];
        if !model.is_state_dependent() {
            model.sigma_values(&grid, &vec![0.0; len], &mut sigma);
            drift_from_sigma(&sigma, grid.dx(), &mut drift);
        }
        Ok(CurveStepper { grid, model: model.clone(), dt, sigma, drift, scratch: vec![0.0; len] })
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `values` in place; returns the trapezoid increment of
    /// `-∫ r(0) dt`.
    pub fn step(&mut self, values: &mut [f64], d_b: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let spot_before = values[0];
        if self.model.is_state_dependent() {
            self.model.sigma_values(&self.grid, values, &mut self.sigma);
            drift_from_sigma(&self.sigma, self.grid.dx(), &mut self.drift);
        }
        let dt = self.dt;
        for (j, s) in self.scratch.iter_mut().enumerate() {
            *s = values[j] + dt * self.drift[j] + self.sigma[j] * d_b;
        }
        self.grid.shift_values(&self.scratch, dt, values);
        -0.5 * dt * (spot_before + values[0])
    }
}

/// How much of the curve a path simulation carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveExtent {
    /// Only the nodes needed for `B(t, T)` plus a margin.
    Window,
    /// The whole grid (needed for projections onto the basis).
    Full,
}

/// What a [`PathVisitor`] sees at each time node.
#[derive(Debug)]
pub struct StepView<'a> {
    pub path: usize,
    pub step: usize,
    pub t: f64,
    pub curve: &'a [f64],
    pub spot: f64,
    pub bond: f64,
    pub log_discount: f64,
}

/// Per-path observer driven by [`run_paths`]. `observe` returning `false`
/// stops the path early.
pub trait PathVisitor {
    type Output: Send;
    fn observe(&mut self, view: &StepView<'_>) -> bool;
    fn finish(self) -> Self::Output;
}

/// Simulates every path of `spec` from `h0`, in parallel, handing each time
/// node to a fresh visitor. Results come back in path order.
pub fn run_paths<V, F>(
    h0: &ForwardCurve,
    model: &VolatilityModel,
    spec: &SimulationSpec,
    extent: CurveExtent,
    make_visitor: F,
) -> Result<Vec<V::Output>>
where
    V: PathVisitor,
    F: Fn(usize) -> V + Sync,
{
    let grid = h0.grid().clone();
    model.validate(&grid)?;
    let dt = spec.dt();
    let horizon = spec.maturity - spec.t0;
    let len = match extent {
        CurveExtent::Full => grid.len(),
        CurveExtent::Window => (horizon / grid.dx()).ceil() as usize + 2 + WINDOW_MARGIN,
    };
    let template = CurveStepper::new(grid.clone(), model, dt, len)?;
    let len = template.len();
    let sd = dt.sqrt();

    let out = (0..spec.n_paths)
        .into_par_iter()
        .map_init(
            || (template.clone(), vec![0.0; len]),
            |(stepper, values), p| {
                values.copy_from_slice(&h0.values()[..len]);
                let (mut rng, sign) = path_rng(spec.seed, p, spec.antithetic);
                let mut visitor = make_visitor(p);
                let mut log_discount = 0.0;
                for step in 0..=spec.n_steps {
                    if step > 0 {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        log_discount += stepper.step(values, sign * sd * z);
                    }
                    let t = spec.time(step);
                    let tau = (spec.maturity - t).max(0.0);
                    let view = StepView {
                        path: p,
                        step,
                        t,
                        curve: values,
                        spot: values[0],
                        bond: (-grid.integrate_to(values, tau)).exp(),
                        log_discount,
                    };
                    if !visitor.observe(&view) {
                        break;
                    }
                }
                visitor.finish()
            },
        )
        .collect();
    Ok(out)
}

/// Spot rate, bond price and log discount on every (path, time node).
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub n_paths: usize,
    spot: Vec<f64>,
    bond: Vec<f64>,
    log_discount: Vec<f64>,
}

impl PathEnsemble {
    fn index(&self, path: usize, step: usize) -> usize {
        path * self.times.len() + step
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn spot(&self, path: usize, step: usize) -> f64 {
        self.spot[self.index(path, step)]
    }

    pub fn bond(&self, path: usize, step: usize) -> f64 {
        self.bond[self.index(path, step)]
    }

    pub fn log_discount(&self, path: usize, step: usize) -> f64 {
        self.log_discount[self.index(path, step)]
    }

    pub fn discount(&self, path: usize, step: usize) -> f64 {
        self.log_discount(path, step).exp()
    }
}

struct Recorder {
    rows: Vec<[f64; 3]>,
}

impl PathVisitor for Recorder {
    type Output = Vec<[f64; 3]>;

    fn observe(&mut self, v: &StepView<'_>) -> bool {
        self.rows.push([v.spot, v.bond, v.log_discount]);
        true
    }

    fn finish(self) -> Self::Output {
        self.rows
    }
}

/// Simulates and stores the whole ensemble.
pub fn simulate_paths(h0: &ForwardCurve, model: &VolatilityModel, spec: &SimulationSpec) -> Result<PathEnsemble> {
    let nodes = spec.n_steps + 1;
    let entries = spec.n_paths.checked_mul(nodes).and_then(|v| v.checked_mul(3));
    if entries.is_none_or(|e| e > MAX_ENSEMBLE_ENTRIES) {
        return Err(Error::Capacity(format!(
            "{} paths × {} time nodes exceed the ensemble limit of {} stored values",
            spec.n_paths,
            nodes,
            MAX_ENSEMBLE_ENTRIES
        )));
    }
    let rows = run_paths(h0, model, spec, CurveExtent::Window, |_| Recorder {
        rows: Vec::with_capacity(nodes),
    })?;
    let mut spot = Vec::with_capacity(spec.n_paths * nodes);
    let mut bond = Vec::with_capacity(spec.n_paths * nodes);
    let mut log_discount = Vec::with_capacity(spec.n_paths * nodes);
    for path in rows {
        for [s, b, l] in path {
            spot.push(s);
            bond.push(b);
            log_discount.push(l);
        }
    }
    Ok(PathEnsemble {
        times: (0..nodes).map(|i| spec.time(i)).collect(),
        n_paths: spec.n_paths,
        spot,
        bond,
        log_discount,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve_space::SpaceConfig;
    use crate::hjm_dynamics::{euler_step, PathState};

    fn grid() -> Arc<Grid> {
        SpaceConfig::for_maturity(1.0).grid().unwrap()
    }

    #[test]
    fn spec_checks_divisibility() {
        assert_eq!(SimulationSpec::new(0.0, 1.0, 0.005, 10, 1, false).unwrap().n_steps, 200);
        assert!(SimulationSpec::new(0.0, 1.0, 0.3, 10, 1, false).is_err());
        assert!(SimulationSpec::new(0.0, 1.0, 0.005, 0, 1, false).is_err());
    }

    #[test]
    fn stepper_matches_euler_step() {
        let g = grid();
        let h = ForwardCurve::from_fn(g.clone(), |x| 0.03 + 0.02 * (-x).exp()).unwrap();
        for model in [VolatilityModel::deterministic_exp(0.02, 1.0), VolatilityModel::level_dependent(0.02, 1.0)] {
            let mut stepper = CurveStepper::new(g.clone(), &model, 0.01, g.len()).unwrap();
            let mut values = h.values().to_vec();
            let mut state = PathState::new(0.0, h.clone());
            let mut ld = 0.0;
            for i in 0..30 {
                let d_b = 0.1 * ((i % 7) as f64 - 3.0) * 0.1;
                ld += stepper.step(&mut values, d_b);
                state = euler_step(&state, 0.01, d_b, &model).unwrap();
            }
            assert_eq!(values, state.curve.values());
            assert!((ld - state.log_discount).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_volatility_paths_are_identical() {
        let g = grid();
        let h = ForwardCurve::from_fn(g, |x| 0.02 + 0.01 * x / (1.0 + x)).unwrap();
        let spec = SimulationSpec::new(0.0, 1.0, 0.01, 5, 3, true).unwrap();
        let e = simulate_paths(&h, &VolatilityModel::zero(), &spec).unwrap();
        for p in 1..5 {
            for s in 0..=100 {
                assert_eq!(e.bond(p, s), e.bond(0, s));
                assert_eq!(e.log_discount(p, s), e.log_discount(0, s));
            }
        }
        assert!((e.bond(0, 0) - (-h.integral_to(1.0)).exp()).abs() < 1e-15);
        assert_eq!(e.bond(0, 100), 1.0);
        for s in 0..=100 {
            let d = e.discount(0, s);
            assert!(d > 0.0 && d <= 1.0);
        }
    }

    #[test]
    fn window_matches_full_grid() {
        let g = grid();
        let h = ForwardCurve::from_fn(g, |x| 0.04 + 0.01 * (-0.5 * x).exp()).unwrap();
        let model = VolatilityModel::level_dependent(0.02, 1.0);
        let spec = SimulationSpec::new(0.0, 1.0, 0.005, 4, 11, false).unwrap();
        struct Bonds(Vec<f64>);
        impl PathVisitor for Bonds {
            type Output = Vec<f64>;
            fn observe(&mut self, v: &StepView<'_>) -> bool {
                self.0.push(v.bond);
                true
            }
            fn finish(self) -> Vec<f64> {
                self.0
            }
        }
        let a = run_paths(&h, &model, &spec, CurveExtent::Window, |_| Bonds(vec![])).unwrap();
        let b = run_paths(&h, &model, &spec, CurveExtent::Full, |_| Bonds(vec![])).unwrap();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn reproducible_and_antithetic() {
        let d1 = brownian_increments(5, 6, 10, 0.01, true);
        let d2 = brownian_increments(5, 7, 10, 0.01, true);
        for (a, b) in d1.iter().zip(&d2) {
            assert_eq!(*a, -*b);
        }
        assert_eq!(d1, brownian_increments(5, 6, 10, 0.01, true));
        assert_ne!(d1, brownian_increments(6, 6, 10, 0.01, true));
    }

    #[test]
    fn capacity_is_enforced() {
        let g = grid();
        let h = ForwardCurve::zeros(g);
        let spec = SimulationSpec::with_steps(0.0, 1.0, 1 << 20, 1 << 10, 0, false).unwrap();
        assert!(matches!(
            simulate_paths(&h, &VolatilityModel::zero(), &spec),
            Err(Error::Capacity(_))
        ));
    }
}
