use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DiscreteOperator, PdeGrid};
use crate::error::{Error, Result};

/// Exercise value `Ψ(t, z)` on the state space.
pub trait Obstacle: Send + Sync + Debug {
    fn value(&self, t: f64, z: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExerciseMode {
    American,
    /// Obstacle enforced only at `T`.
    European,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub omega: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Replace the first Crank–Nicolson step by two implicit half steps.
    pub rannacher: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { omega: 1.5, tol: 1e-9, max_iter: 10_000, rannacher: true }
    }
}

/// Solved value function on the time × state lattice.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    grid: PdeGrid,
    obstacle: Arc<dyn Obstacle>,
    mode: ExerciseMode,
    values: Vec<Vec<f64>>,
    obstacle_values: Vec<Vec<f64>>,
    iterations: Vec<usize>,
    complementarity: f64,
}

/// Exercise region summary at one time slice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub t: f64,
    pub exercised_nodes: usize,
    /// First exercised node along the principal axis through the box
    /// center, walking up from the lower end, in state coordinates.
    pub threshold: Option<Vec<f64>>,
}

impl ValueSurface {
    pub fn grid(&self) -> &PdeGrid {
        &self.grid
    }

    pub fn mode(&self) -> ExerciseMode {
        self.mode
    }

    pub fn obstacle(&self) -> &Arc<dyn Obstacle> {
        &self.obstacle
    }

    pub fn values(&self, m: usize) -> &[f64] {
        &self.values[m]
    }

    pub fn obstacle_values(&self, m: usize) -> &[f64] {
        &self.obstacle_values[m]
    }

    /// SOR sweeps used by each backward step (`[m]` is the step into slice `m`).
    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }

    /// `max (V - Ψ)·|residual|` over all nodes and steps.
    pub fn complementarity(&self) -> f64 {
        self.complementarity
    }

    /// Value at `(t0, center)`.
    pub fn price(&self) -> f64 {
        self.values[0][self.grid.center_index()]
    }

    fn interpolate_slice(&self, y: &[f64], f: impl Fn(usize) -> f64) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        let mut base = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for a in 0..d {
            let s = (y[a] + g.half_widths()[a]) / g.spacing(a);
            let i = (s.floor().max(0.0) as usize).min(g.n_state()[a] - 2);
            base[a] = i;
            frac[a] = (s - i as f64).clamp(0.0, 1.0);
        }
        if d == 1 {
            (1.0 - frac[0]) * f(base[0]) + frac[0] * f(base[0] + 1)
        } else {
            let i00 = g.index(&[base[0], base[1]]);
            let i10 = g.index(&[base[0] + 1, base[1]]);
            let i01 = g.index(&[base[0], base[1] + 1]);
            let i11 = g.index(&[base[0] + 1, base[1] + 1]);
            let (fx, fy) = (frac[0], frac[1]);
            (1.0 - fx) * (1.0 - fy) * f(i00) + fx * (1.0 - fy) * f(i10) + (1.0 - fx) * fy * f(i01) + fx * fy * f(i11)
        }
    }

    /// Local coordinates of `(t, z)` plus the bracketing time slice and
    /// weight; `None` at maturity.
    fn locate(&self, t: f64, z: &[f64]) -> Result<Option<(usize, f64, Vec<f64>)>> {
        let g = &self.grid;
        if z.len() != g.dim() {
            return Err(Error::Argument(format!("state of length {} for a {}-d surface", z.len(), g.dim())));
        }
        if t < g.t0() - 1e-12 || t > g.maturity() + 1e-12 {
            return Err(Error::Argument(format!("t = {t} outside [{}, {}]", g.t0(), g.maturity())));
        }
        let y = g.to_local(z);
        for (a, ya) in y.iter().enumerate() {
            let h = g.half_widths()[a];
            if ya.abs() > h * (1.0 + 1e-12) {
                return Err(Error::Extrapolation(format!(
                    "coordinate {ya:.6} on axis {a} outside [-{h:.6}, {h:.6}] (state {z:?})"
                )));
            }
        }
        if t >= g.maturity() - 1e-12 {
            return Ok(None);
        }
        let s = ((t - g.t0()) / g.dt()).max(0.0);
        let m = (s.floor() as usize).min(g.n_time() - 1);
        let w = (s - m as f64).clamp(0.0, 1.0);
        Ok(Some((m, w, y)))
    }

    fn interpolate(&self, m: usize, w: f64, y: &[f64], f: impl Fn(usize, usize) -> f64) -> f64 {
        let mut v = (1.0 - w) * self.interpolate_slice(y, |i| f(m, i));
        if w > 0.0 {
            v += w * self.interpolate_slice(y, |i| f(m + 1, i));
        }
        v
    }

    /// `V(t, z)` by linear interpolation in time and multilinear in space. In
    /// American mode the result is floored at `Ψ(t, z)`, and `t = T` returns
    /// `Ψ(T, z)` itself.
    pub fn value_at_coords(&self, t: f64, z: &[f64]) -> Result<f64> {
        let psi = self.obstacle.value(t, z);
        let Some((m, w, y)) = self.locate(t, z)? else {
            return Ok(psi);
        };
        let v = self.interpolate(m, w, &y, |k, i| self.values[k][i]);
        Ok(match self.mode {
            ExerciseMode::American => v.max(psi),
            ExerciseMode::European => v,
        })
    }

    /// Interpolated nodal gap `V - Ψ`, which vanishes exactly where the
    /// discrete solution touches the obstacle.
    pub fn gap_at_coords(&self, t: f64, z: &[f64]) -> Result<f64> {
        let Some((m, w, y)) = self.locate(t, z)? else {
            return Ok(0.0);
        };
        Ok(self.interpolate(m, w, &y, |k, i| self.values[k][i] - self.obstacle_values[k][i]))
    }

    /// Nodes of slice `m` where `V - Ψ ≤ tol_gap`.
    pub fn exercise_mask(&self, m: usize, tol_gap: f64) -> Vec<bool> {
        self.values[m]
            .iter()
            .zip(&self.obstacle_values[m])
            .map(|(v, p)| v - p <= tol_gap && *p > 0.0)
            .collect()
    }

    pub fn boundary_trace(&self, tol_gap: f64) -> Vec<BoundaryPoint> {
        let g = &self.grid;
        let mid = if g.dim() == 2 { g.n_state()[1] / 2 } else { 0 };
        (0..=g.n_time())
            .map(|m| {
                let mask = self.exercise_mask(m, tol_gap);
                let threshold = (0..g.n_state()[0])
                    .map(|i| if g.dim() == 1 { i } else { g.index(&[i, mid]) })
                    .find(|&idx| mask[idx])
                    .map(|idx| g.node_global(idx));
                BoundaryPoint { t: g.time(m), exercised_nodes: mask.iter().filter(|&&b| b).count(), threshold }
            })
            .collect()
    }
}

/// Backward Crank–Nicolson (Rannacher start) with projected SOR at every
/// step. Boundary nodes carry the Dirichlet value `Ψ`.
pub fn psor_solve(
    op: &DiscreteOperator,
    obstacle: Arc<dyn Obstacle>,
    grid: &PdeGrid,
    settings: &SolverSettings,
    mode: ExerciseMode,
) -> Result<ValueSurface> {
    if !(settings.omega > 0.0 && settings.omega < 2.0) {
        return Err(Error::Argument(format!("SOR relaxation must lie in (0, 2), got {}", settings.omega)));
    }
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(Error::Argument("SOR tolerance and iteration cap must be positive".into()));
    }
    if op.len() != grid.len() {
        return Err(Error::Assembly("operator and grid sizes differ".into()));
    }
    let n_nodes = grid.len();
    let n_time = grid.n_time();
    let dt = grid.dt();
    let nodes: Vec<Vec<f64>> = (0..n_nodes).map(|i| grid.node_global(i)).collect();
    let slice = |t: f64| -> Result<Vec<f64>> {
        let v: Vec<f64> = nodes.iter().map(|z| obstacle.value(t, z)).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument(format!("obstacle is not finite at t = {t}")));
        }
        Ok(v)
    };
    let obstacle_values: Vec<Vec<f64>> = (0..=n_time).map(|m| slice(grid.time(m))).collect::<Result<_>>()?;

    let mut values = vec![Vec::new(); n_time + 1];
    values[n_time] = obstacle_values[n_time].clone();
    let mut iterations = vec![0usize; n_time];
    let mut complementarity = 0.0f64;
    let mut lv = vec![0.0; n_nodes];
    let mut rhs = vec![0.0; n_nodes];

    for m in (0..n_time).rev() {
        let t_m = grid.time(m);
        let stages: Vec<(f64, f64, Option<f64>)> = if settings.rannacher && m == n_time - 1 {
            vec![(1.0, 0.5 * dt, Some(t_m + 0.5 * dt)), (1.0, 0.5 * dt, None)]
        } else {
            vec![(0.5, dt, None)]
        };
        let mut v = values[m + 1].clone();
        for (theta, h, t_stage) in stages {
            let psi_owned;
            let psi: &[f64] = match t_stage {
                Some(t) => {
                    psi_owned = slice(t)?;
                    &psi_owned
                }
                None => &obstacle_values[m],
            };
            op.apply(&v, &mut lv);
            for i in 0..n_nodes {
                rhs[i] = v[i] + (1.0 - theta) * h * lv[i];
            }
            let (sweeps, comp) = sor(op, psi, &rhs, &mut v, theta * h, settings, mode, m)?;
            iterations[m] += sweeps;
            complementarity = complementarity.max(comp);
        }
        values[m] = v;
    }
    Ok(ValueSurface {
        grid: grid.clone(),
        obstacle,
        mode,
        values,
        obstacle_values,
        iterations,
        complementarity,
    })
}

/// Solves `(I - c L) v = rhs` on the interior, with `v ≥ ψ` in American mode
/// and `v = ψ` on the boundary. Returns the sweep count and the largest
/// `(v - ψ)·|residual|`.
#[allow(clippy::too_many_arguments)]
fn sor(
    op: &DiscreteOperator,
    psi: &[f64],
    rhs: &[f64],
    v: &mut [f64],
    c: f64,
    settings: &SolverSettings,
    mode: ExerciseMode,
    step: usize,
) -> Result<(usize, f64)> {
    let n = v.len();
    let american = mode == ExerciseMode::American;
    for i in 0..n {
        if op.is_boundary(i) {
            v[i] = psi[i];
        } else if american {
            v[i] = v[i].max(psi[i]);
        }
        let a_ii = 1.0 - c * op.diag(i);
        if !op.is_boundary(i) && !(a_ii > 0.0) {
            return Err(Error::Assembly(format!("non-positive implicit diagonal {a_ii} at node {i}")));
        }
    }
    let omega = settings.omega;
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut change = 0.0f64;
        for i in 0..n {
            if op.is_boundary(i) {
                continue;
            }
            let off: f64 = op.row(i).map(|(j, w)| w * v[j]).sum();
            let gs = (rhs[i] + c * off) / (1.0 - c * op.diag(i));
            let mut next = v[i] + omega * (gs - v[i]);
            if american {
                next = next.max(psi[i]);
            }
            change = change.max((next - v[i]).abs());
            v[i] = next;
        }
        if change < settings.tol {
            break;
        }
        if sweeps >= settings.max_iter {
            return Err(Error::Solver { step, iterations: sweeps, residual: change });
        }
    }
    let mut comp = 0.0f64;
    if american {
        for i in 0..n {
            if op.is_boundary(i) {
                continue;
            }
            let off: f64 = op.row(i).map(|(j, w)| w * v[j]).sum();
            let residual = (1.0 - c * op.diag(i)) * v[i] - c * off - rhs[i];
            comp = comp.max((v[i] - psi[i]) * residual.abs());
        }
    }
    Ok((sweeps, comp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vi_pricer::{build_operator, GeneratorCoefficients};

    #[derive(Debug)]
    struct Flat {
        rate: f64,
    }

    #[derive(Debug)]
    struct Diffusive;

    impl GeneratorCoefficients for Diffusive {
        fn dim(&self) -> usize {
            1
        }
        fn drift(&self, _: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn vol(&self, _: &[f64]) -> Vec<f64> {
            vec![0.3]
        }
        fn noise_floor(&self) -> f64 {
            0.0
        }
        fn discount_rate(&self, _: &[f64]) -> f64 {
            0.05
        }
    }

    #[derive(Debug)]
    struct LevelPut;

    impl Obstacle for LevelPut {
        fn value(&self, _: f64, z: &[f64]) -> f64 {
            (0.1 - z[0]).max(0.0)
        }
    }

    impl GeneratorCoefficients for Flat {
        fn dim(&self) -> usize {
            1
        }
        fn drift(&self, _: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn vol(&self, _: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn noise_floor(&self) -> f64 {
            0.0
        }
        fn discount_rate(&self, _: &[f64]) -> f64 {
            self.rate
        }
    }

    #[derive(Debug)]
    struct DeterministicPut {
        strike: f64,
        rate: f64,
        maturity: f64,
    }

    impl Obstacle for DeterministicPut {
        fn value(&self, t: f64, _: &[f64]) -> f64 {
            (self.strike - (-self.rate * (self.maturity - t)).exp()).max(0.0)
        }
    }

    #[derive(Debug)]
    struct Zero;

    impl Obstacle for Zero {
        fn value(&self, _: f64, _: &[f64]) -> f64 {
            0.0
        }
    }

    fn line() -> PdeGrid {
        PdeGrid::new(vec![0.0], vec![vec![1.0]], vec![1.0], vec![21], 0.0, 1.0, 100).unwrap()
    }

    #[test]
    fn zero_problem_stays_zero() {
        let g = line();
        let op = build_operator(&Flat { rate: 0.1 }, &g).unwrap();
        let s = psor_solve(&op, Arc::new(Zero), &g, &SolverSettings::default(), ExerciseMode::American).unwrap();
        assert!((0..=100).all(|m| s.values(m).iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn deterministic_put_exercises_immediately() {
        let g = line();
        let op = build_operator(&Flat { rate: 0.2 }, &g).unwrap();
        let obstacle = Arc::new(DeterministicPut { strike: 0.9, rate: 0.2, maturity: 1.0 });
        let s = psor_solve(&op, obstacle, &g, &SolverSettings::default(), ExerciseMode::American).unwrap();
        let analytic = 0.9 - (-0.2f64).exp();
        assert!((s.price() - analytic).abs() < 1e-3);
        // brute force over deterministic exercise dates
        let best = (0..=1000)
            .map(|i| {
                let t = i as f64 / 1000.0;
                (-0.2 * t).exp() * (0.9 - (-0.2 * (1.0 - t)).exp()).max(0.0)
            })
            .fold(0.0, f64::max);
        assert!((s.price() - best).abs() < 1e-3);
        assert!(s.exercise_mask(0, 1e-6 * 0.9)[10]);
        assert!(s.complementarity() < 1e-9);
    }

    #[test]
    fn european_mode_discounts_the_terminal_payoff() {
        let g = line();
        let op = build_operator(&Flat { rate: 0.2 }, &g).unwrap();
        let obstacle = Arc::new(DeterministicPut { strike: 0.9, rate: 0.2, maturity: 1.0 });
        let s = psor_solve(&op, obstacle, &g, &SolverSettings::default(), ExerciseMode::European).unwrap();
        // payoff at T is [0.9 - 1]^+ = 0
        assert!(s.price().abs() < 1e-12);
    }

    #[test]
    fn interpolation_and_extrapolation() {
        let g = line();
        let op = build_operator(&Flat { rate: 0.2 }, &g).unwrap();
        let obstacle = Arc::new(DeterministicPut { strike: 0.9, rate: 0.2, maturity: 1.0 });
        let s = psor_solve(&op, obstacle.clone(), &g, &SolverSettings::default(), ExerciseMode::American).unwrap();
        assert_eq!(s.value_at_coords(1.0, &[0.3]).unwrap(), obstacle.value(1.0, &[0.3]));
        assert!(matches!(s.value_at_coords(0.5, &[1.5]), Err(Error::Extrapolation(_))));
        assert!(s.value_at_coords(0.5, &[0.1]).unwrap() >= obstacle.value(0.5, &[0.1]));
    }

    #[test]
    fn iteration_cap_is_reported() {
        let g = line();
        let op = build_operator(&Diffusive, &g).unwrap();
        let obstacle = Arc::new(LevelPut);
        let tight = SolverSettings { tol: 1e-14, max_iter: 3, ..SolverSettings::default() };
        let err = psor_solve(&op, obstacle, &g, &tight, ExerciseMode::American).unwrap_err();
        assert!(matches!(err, Error::Solver { iterations: 3, .. }));
        let bad = SolverSettings { omega: 2.0, ..SolverSettings::default() };
        assert!(psor_solve(&op, Arc::new(Zero), &g, &bad, ExerciseMode::American).is_err());
    }
}
