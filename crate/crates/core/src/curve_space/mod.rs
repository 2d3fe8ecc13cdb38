//! Forward curves as elements of the weighted Sobolev space `H_w` with
//! `‖h‖²_w = |h(0)|² + ∫ |h'(x)|² w(x) dx` and `w(x) = (1 + x)^p`.
//!
//! Curves live on a uniform grid over `[0, x_max]` and are extended beyond
//! `x_max` by their last value. Derivatives are central differences
//! (second-order one-sided at the two ends) and every integral is the
//! trapezoid rule, so norms, inner products and projections share one
//! quadrature convention.

mod basis;
mod io;

pub use basis::{build_basis, project, sample_gaussian, sample_gaussian_with, trace_aqa, BasisSet};
pub use io::{read_curve_csv, resample_points, write_curve_csv};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Weight exponent, grid and Gaussian-measure parameters defining `H_w` and `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceConfig {
    pub w_exponent: f64,
    pub x_max: f64,
    pub n_x: usize,
    pub basis_size: usize,
    /// Eigenvalues `λ_i` of the trace-class covariance `Q`.
    pub q_eigenvalues: Vec<f64>,
}

impl SpaceConfig {
    /// Defaults sized for an option maturing at `maturity`: `w = (1+x)^4`,
    /// `x_max = T + 10`, 512 nodes, 8 basis functions, `λ_i = 2^{-i}`.
    pub fn for_maturity(maturity: f64) -> Self {
        let basis_size = 8;
        SpaceConfig {
            w_exponent: 4.0,
            x_max: maturity + 10.0,
            n_x: 512,
            basis_size,
            q_eigenvalues: geometric_eigenvalues(basis_size),
        }
    }

    pub fn validate(&self, maturity: Option<f64>) -> Result<()> {
        if !(self.w_exponent > 3.0) || !self.w_exponent.is_finite() {
            return Err(Error::Config(format!(
                "w_exponent must exceed 3 so that w^(-1/3) is integrable, got {}",
                self.w_exponent
            )));
        }
        if self.n_x < 2 {
            return Err(Error::Config(format!("n_x must be at least 2, got {}", self.n_x)));
        }
        if !(self.x_max > 0.0) || !self.x_max.is_finite() {
            return Err(Error::Config(format!("x_max must be positive, got {}", self.x_max)));
        }
        if let Some(t) = maturity {
            if self.x_max < t + 1.0 {
                return Err(Error::Config(format!(
                    "x_max = {} must be at least T + 1 = {}",
                    self.x_max,
                    t + 1.0
                )));
            }
        }
        if self.basis_size == 0 {
            return Err(Error::Config("basis_size must be at least 1".into()));
        }
        if self.q_eigenvalues.len() < self.basis_size {
            return Err(Error::Config(format!(
                "{} eigenvalues given for a basis of size {}",
                self.q_eigenvalues.len(),
                self.basis_size
            )));
        }
        let mut prev = f64::INFINITY;
        for (i, &l) in self.q_eigenvalues.iter().enumerate() {
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::Config(format!("eigenvalue λ_{} = {} is not positive", i + 1, l)));
            }
            if l > prev {
                return Err(Error::Config(format!(
                    "eigenvalues must be non-increasing (λ_{} = {} > λ_{} = {})",
                    i + 1,
                    l,
                    i,
                    prev
                )));
            }
            prev = l;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Arc<Grid>> {
        self.validate(None)?;
        Ok(Arc::new(Grid::new(self.w_exponent, self.x_max, self.n_x)))
    }
}

/// `λ_i = 2^{-i}` for `i = 1..=n`.
pub fn geometric_eigenvalues(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 0.5f64.powi(i as i32)).collect()
}

/// Uniform maturity grid with precomputed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    w_exponent: f64,
    x_max: f64,
    dx: f64,
    nodes: Vec<f64>,
    /// trapezoid weight × w(x_j)
    weighted: Vec<f64>,
}

impl Grid {
    pub fn new(w_exponent: f64, x_max: f64, n_x: usize) -> Self {
        assert!(n_x >= 2);
        let dx = x_max / (n_x - 1) as f64;
        let nodes: Vec<f64> = (0..n_x).map(|j| j as f64 * dx).collect();
        let weighted = nodes
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let c = if j == 0 || j == n_x - 1 { 0.5 } else { 1.0 };
                c * dx * (1.0 + x).powf(w_exponent)
            })
            .collect();
        Grid { w_exponent, x_max, dx, nodes, weighted }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn w_exponent(&self) -> f64 {
        self.w_exponent
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weight(&self, x: f64) -> f64 {
        (1.0 + x).powf(self.w_exponent)
    }

    pub(crate) fn weighted_trapezoid(&self) -> &[f64] {
        &self.weighted
    }

    /// Discrete derivative of nodal values.
    pub fn differentiate(&self, values: &[f64], out: &mut [f64]) {
        let n = values.len();
        debug_assert_eq!(n, out.len());
        let dx = self.dx;
        if n == 2 {
            let d = (values[1] - values[0]) / dx;
            out[0] = d;
            out[1] = d;
            return;
        }
        let inv2 = 0.5 / dx;
        out[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) * inv2;
        for j in 1..n - 1 {
            out[j] = (values[j + 1] - values[j - 1]) * inv2;
        }
        out[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) * inv2;
    }

    /// Adjoint of [`Grid::differentiate`]: `out = Dᵀ a`.
    pub fn differentiate_transpose(&self, a: &[f64], out: &mut [f64]) {
        let n = a.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        let dx = self.dx;
        if n == 2 {
            let s = (a[0] + a[1]) / dx;
            out[0] = -s;
            out[1] = s;
            return;
        }
        let inv2 = 0.5 / dx;
        out[0] += -3.0 * a[0] * inv2;
        out[1] += 4.0 * a[0] * inv2;
        out[2] += -a[0] * inv2;
        for j in 1..n - 1 {
            out[j + 1] += a[j] * inv2;
            out[j - 1] -= a[j] * inv2;
        }
        out[n - 1] += 3.0 * a[n - 1] * inv2;
        out[n - 2] -= 4.0 * a[n - 1] * inv2;
        out[n - 3] += a[n - 1] * inv2;
    }

    /// Linear interpolation of nodal values at `x ≥ 0`, constant beyond `x_max`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let n = values.len();
        if x >= self.x_max {
            return values[n - 1];
        }
        let s = (x / self.dx).max(0.0);
        let j = (s.floor() as usize).min(n - 2);
        let theta = s - j as f64;
        (1.0 - theta) * values[j] + theta * values[j + 1]
    }

    /// Exact integral over `[0, x]` of the piecewise-linear interpolant
    /// (with the constant extension past `x_max`).
    pub fn integrate_to(&self, values: &[f64], x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let n = values.len();
        let dx = self.dx;
        let (x_in, tail) = if x > self.x_max {
            (self.x_max, (x - self.x_max) * values[n - 1])
        } else {
            (x, 0.0)
        };
        let s = x_in / dx;
        let m = (s.floor() as usize).min(n - 1);
        let mut acc = 0.0;
        for j in 0..m {
            acc += values[j] + values[j + 1];
        }
        acc *= 0.5 * dx;
        let frac = s - m as f64;
        if frac > 0.0 && m + 1 < n {
            let end = (1.0 - frac) * values[m] + frac * values[m + 1];
            acc += 0.5 * frac * dx * (values[m] + end);
        }
        acc + tail
    }

    /// Values of `∫_x^∞ e^{-α(y-x)} u(y) dy` at every node. Each cell
    /// integrates the local quadratic interpolant of `u` against the
    /// exponential exactly; the part past `x_max` uses the constant `tail`.
    pub fn resolvent_values(&self, u: &[f64], alpha: f64, tail: f64, out: &mut [f64]) {
        let n = u.len();
        let dx = self.dx;
        let decay = (-alpha * dx).exp();
        let [i0, i1, i2] = exp_moments(alpha, dx);
        // on a cell [x_j, x_j + dx]: u ≈ u_j + s·δ/dx + ½ c s (s - dx)
        let curv_weight = 0.5 * (i2 - dx * i1);
        out[n - 1] = tail / alpha;
        for j in (0..n - 1).rev() {
            let slope = (u[j + 1] - u[j]) / dx;
            let curv = if n < 3 {
                0.0
            } else if j + 2 < n {
                (u[j + 2] - 2.0 * u[j + 1] + u[j]) / (dx * dx)
            } else {
                (u[j + 1] - 2.0 * u[j] + u[j - 1]) / (dx * dx)
            };
            let cell = u[j] * i0 + slope * i1 + curv * curv_weight;
            out[j] = decay * out[j + 1] + cell;
        }
    }

    /// Index-based left shift of nodal values by `dt ≥ 0`.
    pub fn shift_values(&self, values: &[f64], dt: f64, out: &mut [f64]) {
        let n = values.len();
        let s = dt / self.dx;
        let m = s.floor() as usize;
        let theta = s - m as f64;
        for (j, o) in out.iter_mut().enumerate() {
            let a = (j + m).min(n - 1);
            let b = (j + m + 1).min(n - 1);
            *o = if theta == 0.0 { values[a] } else { (1.0 - theta) * values[a] + theta * values[b] };
        }
    }
}

/// `∫_0^d s^k e^{-αs} ds` for k = 0, 1, 2.
fn exp_moments(alpha: f64, d: f64) -> [f64; 3] {
    let ad = alpha * d;
    if ad < 1.0 {
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            // Σ_m (-αd)^m d^{k+1} / (m! (m + k + 1))
            let mut term = d.powi(k as i32 + 1);
            let mut acc = 0.0;
            for m in 0..30 {
                acc += term / (m + k + 1) as f64;
                term *= -ad / (m + 1) as f64;
            }
            *o = acc;
        }
        out
    } else {
        let e = (-ad).exp();
        [
            (1.0 - e) / alpha,
            (1.0 - e * (1.0 + ad)) / (alpha * alpha),
            (2.0 - e * (2.0 + 2.0 * ad + ad * ad)) / (alpha * alpha * alpha),
        ]
    }
}

/// A forward curve `x ↦ h(x)` sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCurve {
    grid: Arc<Grid>,
    values: Vec<f64>,
}

impl ForwardCurve {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidCurve(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        check_finite(&values)?;
        Ok(ForwardCurve { grid, values })
    }

    pub(crate) fn from_parts_unchecked(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        ForwardCurve { grid, values }
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Arc<Grid>, f: F) -> Result<Self> {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        ForwardCurve::new(grid, values)
    }

    pub fn constant(grid: Arc<Grid>, c: f64) -> Result<Self> {
        let n = grid.len();
        ForwardCurve::new(grid, vec![c; n])
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        ForwardCurve { grid, values: vec![0.0; n] }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Rate at time-to-maturity `x` (linear interpolation, flat past `x_max`).
    pub fn at(&self, x: f64) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    pub fn spot(&self) -> f64 {
        self.values[0]
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `∫_0^x h(y) dy`.
    pub fn integral_to(&self, x: f64) -> f64 {
        self.grid.integrate_to(&self.values, x)
    }

    pub fn derivative(&self) -> ForwardCurve {
        let mut out = vec![0.0; self.values.len()];
        self.grid.differentiate(&self.values, &mut out);
        ForwardCurve::from_parts_unchecked(self.grid.clone(), out)
    }

    /// `‖h‖_w`.
    pub fn norm_w(&self) -> Result<f64> {
        check_finite(&self.values)?;
        Ok(self.inner_w(self).max(0.0).sqrt())
    }

    /// `⟨h, g⟩_w = h(0)g(0) + ∫ h'g' w dx`.
    pub fn inner_w(&self, other: &ForwardCurve) -> f64 {
        debug_assert!(Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid);
        let n = self.values.len();
        let mut dh = vec![0.0; n];
        let mut dg = vec![0.0; n];
        self.grid.differentiate(&self.values, &mut dh);
        self.grid.differentiate(&other.values, &mut dg);
        let tw = self.grid.weighted_trapezoid();
        let mut acc = self.values[0] * other.values[0];
        for j in 0..n {
            acc += tw[j] * dh[j] * dg[j];
        }
        acc
    }

    /// Left shift `S(dt)h(x) = h(x + dt)`.
    pub fn shift(&self, dt: f64) -> Result<ForwardCurve> {
        if !(dt >= 0.0) {
            return Err(Error::Argument(format!("shift requires dt ≥ 0, got {dt}")));
        }
        let mut values = vec![0.0; self.values.len()];
        self.grid.shift_values(&self.values, dt, &mut values);
        Ok(ForwardCurve::from_parts_unchecked(self.grid.clone(), values))
    }

    /// Resolvent `g = (αI - A)^{-1} h`, `g(x) = ∫_x^∞ e^{-α(y-x)} h(y) dy`.
    pub fn resolvent(&self, alpha: f64) -> Result<ForwardCurve> {
        if !(alpha > 0.0) {
            return Err(Error::Argument(format!("alpha must be positive, got {alpha}")));
        }
        check_finite(&self.values)?;
        let mut out = vec![0.0; self.values.len()];
        let tail = *self.values.last().unwrap();
        self.grid.resolvent_values(&self.values, alpha, tail, &mut out);
        Ok(ForwardCurve::from_parts_unchecked(self.grid.clone(), out))
    }

    /// Yosida approximation `A_α h = α²(αI - A)^{-1}h - αh` of `A = d/dx`.
    ///
    /// Evaluated through the equivalent form `α (αI - A)^{-1} h'`, which on
    /// the grid converges to the discrete derivative as `α → ∞`. The
    /// derivative is extended past `x_max` by its last nodal value.
    pub fn yosida_apply(&self, alpha: f64) -> Result<ForwardCurve> {
        if !(alpha > 0.0) {
            return Err(Error::Argument(format!("alpha must be positive, got {alpha}")));
        }
        check_finite(&self.values)?;
        let n = self.values.len();
        let mut d = vec![0.0; n];
        self.grid.differentiate(&self.values, &mut d);
        let mut out = vec![0.0; n];
        let tail = d[n - 1];
        self.grid.resolvent_values(&d, alpha, tail, &mut out);
        out.iter_mut().for_each(|v| *v *= alpha);
        Ok(ForwardCurve::from_parts_unchecked(self.grid.clone(), out))
    }

    /// `self + a · other`.
    pub fn axpy(&self, a: f64, other: &ForwardCurve) -> ForwardCurve {
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x + a * y)
            .collect();
        ForwardCurve::from_parts_unchecked(self.grid.clone(), values)
    }

    pub fn sub(&self, other: &ForwardCurve) -> ForwardCurve {
        self.axpy(-1.0, other)
    }

    pub fn scale(&self, a: f64) -> ForwardCurve {
        let values = self.values.iter().map(|v| a * v).collect();
        ForwardCurve::from_parts_unchecked(self.grid.clone(), values)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if let Some((j, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::InvalidCurve(format!("non-finite value {v} at node {j}")));
    }
    Ok(())
}

/// Constant `C = sqrt(1 + ∫_0^∞ w^{-1} dx)` with `sup|h| ≤ C ‖h‖_w`.
///
/// For `w = (1+x)^p` the integral is `1/(p-1)`.
pub fn sup_bound_constant(config: &SpaceConfig) -> Result<f64> {
    if !(config.w_exponent > 3.0) {
        return Err(Error::Config(format!(
            "the sup-norm injection needs w_exponent > 3, got {}",
            config.w_exponent
        )));
    }
    Ok((1.0 + 1.0 / (config.w_exponent - 1.0)).sqrt())
}

/// Trapezoid integral of nodal values over the whole grid.
pub fn grid_integral(grid: &Grid, values: &[f64]) -> f64 {
    quadrature::trapezoid(values, grid.dx())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(x_max: f64, n: usize) -> Arc<Grid> {
        Arc::new(Grid::new(4.0, x_max, n))
    }

    #[test]
    fn norm_of_zero_and_constants() {
        let g = grid(11.0, 512);
        assert_eq!(ForwardCurve::zeros(g.clone()).norm_w().unwrap(), 0.0);
        let c = ForwardCurve::constant(g, -0.37).unwrap();
        assert!((c.norm_w().unwrap() - 0.37).abs() < 1e-15);
    }

    #[test]
    fn norm_of_exponential_matches_closed_form() {
        // |h(0)|² + ∫ e^{-2x}(1+x)^4 dx = 1 + 5.25 on [0, ∞); the part past
        // x = 30 is below 1e-20.
        let g = grid(30.0, 4000);
        let h = ForwardCurve::from_fn(g, |x| (-x).exp()).unwrap();
        assert!((h.norm_w().unwrap() - 2.5).abs() < 1e-4);

        // default grid [0, 11] with 512 nodes
        let g = grid(11.0, 512);
        let h = ForwardCurve::from_fn(g, |x| (-x).exp()).unwrap();
        assert!((h.norm_w().unwrap() - 2.5).abs() / 2.5 < 1e-3);
    }

    #[test]
    fn high_resolution_oracle_for_weighted_integral() {
        // independent adaptive quadrature of the closed form integrand
        let f = |x: f64| (-2.0 * x).exp() * (1.0 + x).powi(4);
        let v = quadrature::adaptive_simpson(&f, 0.0, 60.0, 1e-13);
        assert!((v - 5.25).abs() < 1e-10);
    }

    #[test]
    fn nan_node_is_rejected() {
        let g = grid(11.0, 16);
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(matches!(ForwardCurve::new(g.clone(), v), Err(Error::InvalidCurve(_))));
        let mut c = ForwardCurve::zeros(g);
        c.values[2] = f64::INFINITY;
        assert!(matches!(c.norm_w(), Err(Error::InvalidCurve(_))));
    }

    #[test]
    fn sup_bound_constants() {
        let mut cfg = SpaceConfig::for_maturity(1.0);
        assert!((sup_bound_constant(&cfg).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-15);
        cfg.w_exponent = 6.0;
        assert!((sup_bound_constant(&cfg).unwrap() - 1.2f64.sqrt()).abs() < 1e-15);
        cfg.w_exponent = 3.0;
        assert!(matches!(sup_bound_constant(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn quadrature_consistency_under_refinement() {
        let curves: Vec<Box<dyn Fn(f64) -> f64>> = vec![
            Box::new(|x: f64| (-x).exp()),
            Box::new(|x: f64| 0.03 + 0.02 * (-0.5 * x).exp()),
            Box::new(|x: f64| 0.04 * x * (-x).exp()),
        ];
        for f in &curves {
            let a = ForwardCurve::from_fn(grid(11.0, 512), f).unwrap().norm_w().unwrap();
            let b = ForwardCurve::from_fn(grid(11.0, 1023), f).unwrap().norm_w().unwrap();
            assert!((a - b).abs() / b < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn shift_identity_and_exponential() {
        let g = grid(11.0, 512);
        let h = ForwardCurve::from_fn(g, |x| (-x).exp()).unwrap();
        assert_eq!(h.shift(0.0).unwrap(), h);
        let s = h.shift(1.0).unwrap();
        for (&x, &v) in h.grid().nodes().iter().zip(s.values()) {
            let exact = if x + 1.0 >= 11.0 { (-11.0f64).exp() } else { (-(x + 1.0)).exp() };
            assert!((v - exact).abs() <= 1e-4);
        }
        assert!(matches!(h.shift(-0.1), Err(Error::Argument(_))));
    }

    #[test]
    fn shift_semigroup_law() {
        let g = grid(11.0, 512);
        let h = ForwardCurve::from_fn(g, |x| 0.02 + 0.03 * (-0.7 * x).exp() * (1.0 + x)).unwrap();
        let (a, b) = (0.3, 0.45);
        let one_err = h
            .shift(a)
            .unwrap()
            .values()
            .iter()
            .zip(h.grid().nodes())
            .map(|(v, &x)| (v - (0.02 + 0.03 * (-0.7 * (x + a)).exp() * (1.0 + x + a))).abs())
            .fold(0.0f64, f64::max);
        let two = h.shift(a).unwrap().shift(b).unwrap();
        let direct = h.shift(a + b).unwrap();
        let diff = two.sub(&direct).sup_abs();
        assert!(diff <= 2.0 * one_err.max(1e-12), "{diff} vs {one_err}");
    }

    #[test]
    fn yosida_kills_constants() {
        let g = grid(11.0, 512);
        let c = ForwardCurve::constant(g, 0.05).unwrap();
        for alpha in [0.5, 10.0, 50.0, 250.0, 1000.0] {
            assert!(c.yosida_apply(alpha).unwrap().sup_abs() < 1e-14);
            // literal route α²g - αh with g = c/α
            let r = c.resolvent(alpha).unwrap();
            let lit = r.scale(alpha * alpha).axpy(-alpha, &c);
            assert!(lit.sup_abs() < 1e-9 * alpha);
        }
    }

    #[test]
    fn yosida_on_exponential_matches_analytic_resolvent() {
        let g = grid(11.0, 512);
        let h = ForwardCurve::from_fn(g, |x| (-x).exp()).unwrap();
        let alpha = 9.0;
        let a = h.yosida_apply(alpha).unwrap();
        for (&x, &v) in h.grid().nodes().iter().zip(a.values()) {
            let exact = -(alpha / (alpha + 1.0)) * (-x).exp();
            assert!((v - exact).abs() < 1e-4, "x={x}: {v} vs {exact}");
        }
    }

    #[test]
    fn yosida_routes_agree() {
        // α²R(α)h - αh versus αR(α)h' on a smooth curve
        let g = grid(11.0, 512);
        let h = ForwardCurve::from_fn(g, |x| 0.03 + 0.01 * (-x).exp() - 0.004 * x * (-x).exp()).unwrap();
        for alpha in [1.0, 10.0] {
            let lit = h.resolvent(alpha).unwrap().scale(alpha * alpha).axpy(-alpha, &h);
            let via = h.yosida_apply(alpha).unwrap();
            assert!(lit.sub(&via).sup_abs() < 2e-4, "alpha {alpha}");
        }
    }

    #[test]
    fn yosida_converges_to_derivative() {
        let g = grid(11.0, 512);
        let h = ForwardCurve::from_fn(g, |x| 0.02 * (-0.5 * x).exp() + 0.01 * x * (-x).exp()).unwrap();
        let d = h.derivative();
        let mut prev = f64::INFINITY;
        for alpha in [1.0, 10.0, 100.0, 1000.0] {
            let e = h.yosida_apply(alpha).unwrap().sub(&d).norm_w().unwrap();
            assert!(e < prev, "alpha {alpha}: {e} !< {prev}");
            prev = e;
        }
    }

    #[test]
    fn integral_of_piecewise_linear_is_exact() {
        let g = grid(11.0, 512);
        let h = ForwardCurve::from_fn(g, |x| 0.01 + 0.002 * x).unwrap();
        for x in [0.0, 0.013, 1.0, 3.37, 11.0] {
            let exact = 0.01 * x + 0.001 * x * x;
            assert!((h.integral_to(x) - exact).abs() < 1e-14);
        }
        // constant extension past x_max
        let tail = h.integral_to(12.0) - h.integral_to(11.0);
        assert!((tail - (0.01 + 0.022)).abs() < 1e-14);
    }

    #[test]
    fn transpose_is_adjoint() {
        let g = grid(3.0, 17);
        let a: Vec<f64> = (0..17).map(|j| ((j * 7 % 5) as f64) - 2.0).collect();
        let b: Vec<f64> = (0..17).map(|j| (j as f64 * 0.3).sin()).collect();
        let mut db = vec![0.0; 17];
        g.differentiate(&b, &mut db);
        let mut dta = vec![0.0; 17];
        g.differentiate_transpose(&a, &mut dta);
        let lhs: f64 = a.iter().zip(&db).map(|(x, y)| x * y).sum();
        let rhs: f64 = dta.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = SpaceConfig::for_maturity(1.0);
        assert!(c.validate(Some(1.0)).is_ok());
        assert!(c.validate(Some(10.5)).is_err());
        c.q_eigenvalues[3] = 0.9;
        assert!(c.validate(None).is_err());
        let mut c = SpaceConfig::for_maturity(1.0);
        c.n_x = 1;
        assert!(c.validate(None).is_err());
    }
}
