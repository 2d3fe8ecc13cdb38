use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::GeneratorCoefficients;
use crate::error::{Error, Result};

/// Tensor grid on a box `z = center + Σ_a y_a u_a`, `|y_a| ≤ H_a`, over the
/// time interval `[t0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeGrid {
    center: Vec<f64>,
    /// Orthonormal directions `u_a` in state space.
    axes: Vec<Vec<f64>>,
    half_widths: Vec<f64>,
    n_state: Vec<usize>,
    t0: f64,
    maturity: f64,
    n_time: usize,
}

impl PdeGrid {
    pub fn new(
        center: Vec<f64>,
        axes: Vec<Vec<f64>>,
        half_widths: Vec<f64>,
        n_state: Vec<usize>,
        t0: f64,
        maturity: f64,
        n_time: usize,
    ) -> Result<Self> {
        let d = center.len();
        if !(1..=2).contains(&d) {
            return Err(Error::UnsupportedDimension(d));
        }
        if axes.len() != d || axes.iter().any(|u| u.len() != d) || half_widths.len() != d || n_state.len() != d {
            return Err(Error::Argument("grid axes, widths and node counts must match the dimension".into()));
        }
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = axes[a].iter().zip(&axes[b]).map(|(x, y)| x * y).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                if (dot - target).abs() > 1e-10 {
                    return Err(Error::Argument("grid axes must be orthonormal".into()));
                }
            }
        }
        if half_widths.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::Argument("half widths must be positive".into()));
        }
        if n_state.iter().any(|&n| n < 3) {
            return Err(Error::Argument("need at least 3 nodes per axis".into()));
        }
        if n_time == 0 || !(maturity > t0) {
            return Err(Error::Argument("need n_time ≥ 1 and T > t0".into()));
        }
        Ok(PdeGrid { center, axes, half_widths, n_state, t0, maturity, n_time })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn len(&self) -> usize {
        self.n_state.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn half_widths(&self) -> &[f64] {
        &self.half_widths
    }

    pub fn n_state(&self) -> &[usize] {
        &self.n_state
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn maturity(&self) -> f64 {
        self.maturity
    }

    pub fn dt(&self) -> f64 {
        (self.maturity - self.t0) / self.n_time as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        if m == self.n_time {
            self.maturity
        } else {
            self.t0 + m as f64 * self.dt()
        }
    }

    pub fn spacing(&self, a: usize) -> f64 {
        2.0 * self.half_widths[a] / (self.n_state[a] - 1) as f64
    }

    pub fn local_coord(&self, a: usize, i: usize) -> f64 {
        -self.half_widths[a] + i as f64 * self.spacing(a)
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        match multi.len() {
            1 => multi[0],
            _ => multi[0] + self.n_state[0] * multi[1],
        }
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        if self.dim() == 1 {
            [idx, 0]
        } else {
            [idx % self.n_state[0], idx / self.n_state[0]]
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let m = self.multi_index(idx);
        (0..self.dim()).any(|a| m[a] == 0 || m[a] == self.n_state[a] - 1)
    }

    /// Index of the node at the box center (node counts are odd).
    pub fn center_index(&self) -> usize {
        let mid: Vec<usize> = self.n_state.iter().map(|n| n / 2).collect();
        self.index(&mid)
    }

    pub fn node_local(&self, idx: usize) -> Vec<f64> {
        let m = self.multi_index(idx);
        (0..self.dim()).map(|a| self.local_coord(a, m[a])).collect()
    }

    pub fn to_global(&self, y: &[f64]) -> Vec<f64> {
        let mut z = self.center.clone();
        for (a, ya) in y.iter().enumerate() {
            for (zi, ui) in z.iter_mut().zip(&self.axes[a]) {
                *zi += ya * ui;
            }
        }
        z
    }

    pub fn to_local(&self, z: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .map(|u| u.iter().zip(z).zip(&self.center).map(|((ui, zi), ci)| ui * (zi - ci)).sum())
            .collect()
    }

    /// Nearest point of the box; the flag is set when `z` lay outside.
    pub fn clamp(&self, z: &[f64]) -> (Vec<f64>, bool) {
        let mut y = self.to_local(z);
        let mut moved = false;
        for (ya, h) in y.iter_mut().zip(&self.half_widths) {
            if ya.abs() > *h {
                *ya = ya.clamp(-h, *h);
                moved = true;
            }
        }
        if moved {
            (self.to_global(&y), true)
        } else {
            (z.to_vec(), false)
        }
    }

    pub fn node_global(&self, idx: usize) -> Vec<f64> {
        self.to_global(&self.node_local(idx))
    }

    /// Box widened by `factor` with the state spacing kept (up to rounding
    /// to keep a centre node).
    pub fn scaled(&self, factor: f64) -> PdeGrid {
        let mut g = self.clone();
        for a in 0..g.dim() {
            let spacing = self.spacing(a);
            let half_cells = ((self.half_widths[a] * factor) / spacing).round().max(1.0) as usize;
            g.n_state[a] = 2 * half_cells + 1;
            g.half_widths[a] = half_cells as f64 * spacing;
        }
        g
    }

    /// Halves the state spacing and the time step.
    pub fn refined(&self) -> PdeGrid {
        let mut g = self.clone();
        g.n_state.iter_mut().for_each(|n| *n = 2 * (*n - 1) + 1);
        g.n_time *= 2;
        g
    }
}

/// Resolution and box-sizing rules for [`auto_grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSettings {
    pub n_state_1d: usize,
    pub n_state_2d: [usize; 2],
    pub n_time: usize,
    /// Standard deviations of the linearised state covering each axis.
    pub width_std: f64,
    pub min_half_width: f64,
    /// Each half width is at least this fraction of the largest one.
    pub min_relative_width: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings {
            n_state_1d: 401,
            n_state_2d: [201, 41],
            n_time: 400,
            width_std: 6.0,
            min_half_width: 2e-3,
            min_relative_width: 0.2,
        }
    }
}

/// Box centred at `z0`, first axis along `s(z0)`, widths from the mean and
/// covariance of the linearised dynamics over `[t0, T]`.
pub fn auto_grid(
    coeffs: &dyn GeneratorCoefficients,
    z0: &[f64],
    t0: f64,
    maturity: f64,
    settings: &GridSettings,
) -> Result<PdeGrid> {
    let d = coeffs.dim();
    if z0.len() != d {
        return Err(Error::Argument("initial state dimension mismatch".into()));
    }
    if !(1..=2).contains(&d) {
        return Err(Error::UnsupportedDimension(d));
    }
    let s0 = coeffs.vol(z0);
    let s_norm = s0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u1: Vec<f64> = if s_norm > 0.0 {
        s0.iter().map(|v| v / s_norm).collect()
    } else {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    };
    let axes = if d == 1 { vec![vec![1.0]] } else { vec![u1.clone(), vec![-u1[1], u1[0]]] };

    let eps2 = coeffs.noise_floor().powi(2);
    let steps = 2000;
    let dt = (maturity - t0) / steps as f64;
    let mut mean = DVector::from_column_slice(z0);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut widths = vec![0.0f64; d];
    for _ in 0..steps {
        let zm: Vec<f64> = mean.iter().copied().collect();
        let b = DVector::from_vec(coeffs.drift(&zm));
        let jac = drift_jacobian(coeffs, &zm);
        let s = DVector::from_vec(coeffs.vol(&zm));
        let dcov = &jac * &cov + &cov * jac.transpose() + &s * s.transpose() + DMatrix::identity(d, d) * eps2;
        mean += b * dt;
        cov += dcov * dt;
        for (a, u) in axes.iter().enumerate() {
            let u = DVector::from_column_slice(u);
            let shift = u.dot(&(&mean - DVector::from_column_slice(z0))).abs();
            let var = (u.transpose() * &cov * &u)[(0, 0)].max(0.0);
            widths[a] = widths[a].max(shift + settings.width_std * var.sqrt());
        }
    }
    let largest = widths.iter().copied().fold(0.0, f64::max);
    for w in widths.iter_mut() {
        *w = w.max(settings.min_half_width).max(settings.min_relative_width * largest);
    }
    let n_state = if d == 1 { vec![odd(settings.n_state_1d)] } else { settings.n_state_2d.iter().map(|&n| odd(n)).collect() };
    PdeGrid::new(z0.to_vec(), axes, widths, n_state, t0, maturity, settings.n_time)
}

fn odd(n: usize) -> usize {
    let n = n.max(3);
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

fn drift_jacobian(coeffs: &dyn GeneratorCoefficients, z: &[f64]) -> DMatrix<f64> {
    let d = z.len();
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let h = 1e-4 * (1.0 + z[j].abs());
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[j] += h;
        zm[j] -= h;
        let bp = coeffs.drift(&zp);
        let bm = coeffs.drift(&zm);
        for i in 0..d {
            jac[(i, j)] = (bp[i] - bm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Sparse discretisation of the generator on the interior nodes of a
/// [`PdeGrid`]; boundary rows are empty (Dirichlet).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    boundary: Vec<bool>,
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    upwinded_rows: usize,
}

impl DiscreteOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// Off-diagonal `(column, weight)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// Sum of all weights in row `i`, diagonal included.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.diag[i] + self.row(i).map(|(_, w)| w).sum::<f64>()
    }

    /// `(L v)_i` on interior rows, 0 on boundary rows.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            out[i] = if self.boundary[i] {
                0.0
            } else {
                self.diag[i] * v[i] + self.row(i).map(|(j, w)| w * v[j]).sum::<f64>()
            };
        }
    }

    /// Rows where the cell Péclet number forced upwinding.
    pub fn upwinded_rows(&self) -> usize {
        self.upwinded_rows
    }
}

/// Central differences for `½ Σ D_ab ∂_a∂_b + β·∂ - ρ` in box coordinates,
/// with `D = Uᵀ(s sᵀ + ε² I)U` and `β = Uᵀ b`. A first-order term switches
/// to upwinding when `|β_a| Δ_a / (½ D_aa) > 2`.
pub fn build_operator(coeffs: &dyn GeneratorCoefficients, grid: &PdeGrid) -> Result<DiscreteOperator> {
    let d = grid.dim();
    if coeffs.dim() != d {
        return Err(Error::Assembly(format!(
            "coefficients of dimension {} on a grid of dimension {d}",
            coeffs.dim()
        )));
    }
    let n = grid.len();
    let eps2 = coeffs.noise_floor().powi(2);
    let mut boundary = vec![false; n];
    let mut diag = vec![0.0; n];
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut upwinded_rows = 0;
    row_ptr.push(0);
    let h: Vec<f64> = (0..d).map(|a| grid.spacing(a)).collect();
    let stride = [1usize, grid.n_state()[0]];

    for idx in 0..n {
        if grid.is_boundary(idx) {
            boundary[idx] = true;
            row_ptr.push(cols.len());
            continue;
        }
        let z = grid.node_global(idx);
        let s = coeffs.vol(&z);
        let b = coeffs.drift(&z);
        let rho = coeffs.discount_rate(&z);
        // local-frame diffusion matrix and drift
        let mut dm = [[0.0f64; 2]; 2];
        let mut beta = [0.0f64; 2];
        for a in 0..d {
            let ua = &grid.axes()[a];
            let sa: f64 = ua.iter().zip(&s).map(|(u, v)| u * v).sum();
            beta[a] = ua.iter().zip(&b).map(|(u, v)| u * v).sum();
            for c in 0..d {
                let uc = &grid.axes()[c];
                let sc: f64 = uc.iter().zip(&s).map(|(u, v)| u * v).sum();
                dm[a][c] = sa * sc + if a == c { eps2 } else { 0.0 };
            }
        }
        let finite = dm.iter().flatten().chain(beta.iter()).all(|v| v.is_finite()) && rho.is_finite();
        if !finite || (0..d).any(|a| dm[a][a] < 0.0) {
            return Err(Error::Assembly(format!("invalid diffusion or drift at node {idx} (z = {z:?})")));
        }
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(8);
        let mut center = -rho;
        let mut upwinded = false;
        for a in 0..d {
            let half_d = 0.5 * dm[a][a];
            let h2 = h[a] * h[a];
            let (plus, minus) = (idx + stride[a], idx - stride[a]);
            let mut wp = half_d / h2;
            let mut wm = half_d / h2;
            center -= 2.0 * half_d / h2;
            let pe = if half_d > 0.0 { beta[a].abs() * h[a] / half_d } else { f64::INFINITY };
            if pe > 2.0 && beta[a] != 0.0 {
                upwinded = true;
                if beta[a] > 0.0 {
                    wp += beta[a] / h[a];
                    center -= beta[a] / h[a];
                } else {
                    wm -= beta[a] / h[a];
                    center += beta[a] / h[a];
                }
            } else {
                wp += 0.5 * beta[a] / h[a];
                wm -= 0.5 * beta[a] / h[a];
            }
            entries.push((plus, wp));
            entries.push((minus, wm));
        }
        if d == 2 && dm[0][1] != 0.0 {
            let w = dm[0][1] / (4.0 * h[0] * h[1]);
            let (sx, sy) = (stride[0], stride[1]);
            entries.push((idx + sx + sy, w));
            entries.push((idx - sx - sy, w));
            entries.push((idx + sx - sy, -w));
            entries.push((idx - sx + sy, -w));
        }
        if upwinded {
            upwinded_rows += 1;
        }
        diag[idx] = center;
        for (j, w) in entries {
            if w != 0.0 {
                cols.push(j);
                vals.push(w);
            }
        }
        row_ptr.push(cols.len());
    }
    Ok(DiscreteOperator { boundary, diag, row_ptr, cols, vals, upwinded_rows })
}
