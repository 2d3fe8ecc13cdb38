//! Mollified payoffs `Ψ_k = g_k(K - B)` with `g_k = ρ_k ⋆ [·]^+`, and sampled
//! `L^p(μ)` norms of curve functionals.
//!
//! Writing `G = ρ ⋆ [·]^+` for the unit bump `ρ`, scaling gives
//! `g_k(z) = G(kz)/k`. `G` vanishes below -1 and is the identity above 1, so a
//! single table of `G` on `[-1, 1]` serves every `k`.

use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curve_space::{sample_gaussian_with, BasisSet, ForwardCurve};
use crate::error::{Error, Result};
use crate::hjm_dynamics::{bond_price, check_strike, PathState};
use crate::quadrature::{adaptive_simpson, gauss_legendre};

const TABLE_NODES: usize = 4096;

/// Unnormalised unit bump `exp(-1/(1 - y²))` on `|y| < 1`.
fn raw_bump(y: f64) -> f64 {
    let r = 1.0 - y * y;
    if r <= 0.0 {
        0.0
    } else {
        (-1.0 / r).exp()
    }
}

/// `∫_{-1}^{1} exp(-1/(1 - y²)) dy ≈ 0.443994`.
pub fn bump_normalizer() -> f64 {
    static NORM: OnceLock<f64> = OnceLock::new();
    *NORM.get_or_init(|| adaptive_simpson(&raw_bump, -1.0, 1.0, 1e-14))
}

/// Normalised mollifier `ρ_k(y) = k c ρ(ky)`.
pub fn mollifier(k: f64, y: f64) -> f64 {
    k * raw_bump(k * y) / bump_normalizer()
}

/// Tabulated `G(u)` and `G'(u) = ∫_{-1}^u ρ` on a uniform grid over [-1, 1].
#[derive(Debug)]
struct BumpTable {
    du: f64,
    g: Vec<f64>,
    dg: Vec<f64>,
}

impl BumpTable {
    fn build(nodes: usize) -> Self {
        let c = bump_normalizer();
        let du = 2.0 / (nodes - 1) as f64;
        let mut g = vec![0.0; nodes];
        let mut dg = vec![0.0; nodes];
        let (mut mass, mut moment) = (0.0, 0.0);
        for j in 1..nodes {
            let a = -1.0 + (j - 1) as f64 * du;
            let b = -1.0 + j as f64 * du;
            mass += gauss_legendre(&|y| raw_bump(y) / c, a, b);
            moment += gauss_legendre(&|y| y * raw_bump(y) / c, a, b);
            // G(u) = ∫ (u - y) ρ(y) dy over y < u
            g[j] = b * mass - moment;
            dg[j] = mass;
        }
        BumpTable { du, g, dg }
    }

    fn shared() -> Arc<BumpTable> {
        static TABLE: OnceLock<Arc<BumpTable>> = OnceLock::new();
        TABLE.get_or_init(|| Arc::new(BumpTable::build(TABLE_NODES))).clone()
    }

    fn locate(&self, u: f64) -> (usize, f64) {
        let s = (u + 1.0) / self.du;
        let j = (s.floor() as usize).min(self.g.len() - 2);
        (j, s - j as f64)
    }

    /// Cubic Hermite interpolation of `G` for `u ∈ (-1, 1)`.
    fn value(&self, u: f64) -> f64 {
        let (j, t) = self.locate(u);
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.g[j] + h10 * self.du * self.dg[j] + h01 * self.g[j + 1] + h11 * self.du * self.dg[j + 1]
    }

    fn slope(&self, u: f64) -> f64 {
        let (j, t) = self.locate(u);
        (1.0 - t) * self.dg[j] + t * self.dg[j + 1]
    }
}

/// The smoothed gain `g_k` and the payoff `Ψ_k(t, h) = g_k(K - B(t, T))`.
#[derive(Debug, Clone)]
pub struct MollifiedPayoff {
    k: f64,
    table: Arc<BumpTable>,
}

impl MollifiedPayoff {
    pub fn new(k: f64) -> Result<Self> {
        if !(k >= 1.0) || !k.is_finite() {
            return Err(Error::Argument(format!("smoothing index k must be at least 1, got {k}")));
        }
        Ok(MollifiedPayoff { k, table: BumpTable::shared() })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `g_k(z)`.
    pub fn gain(&self, z: f64) -> f64 {
        let u = self.k * z;
        if u <= -1.0 {
            0.0
        } else if u >= 1.0 {
            z
        } else {
            // G ≥ max(u, 0); the clamp only removes table roundoff
            self.table.value(u).max(u).max(0.0) / self.k
        }
    }

    /// `g_k'(z) ∈ [0, 1]`.
    pub fn gain_slope(&self, z: f64) -> f64 {
        let u = self.k * z;
        if u <= -1.0 {
            0.0
        } else if u >= 1.0 {
            1.0
        } else {
            self.table.slope(u)
        }
    }

    /// `Ψ_k` given the bond price.
    pub fn of_bond(&self, strike: f64, bond: f64) -> f64 {
        self.gain(strike - bond)
    }

    pub fn evaluate(&self, state: &PathState, strike: f64, maturity: f64) -> Result<f64> {
        check_strike(strike)?;
        Ok(self.of_bond(strike, bond_price(state, maturity)?))
    }

    /// `∂Ψ_k/∂t = -g_k'(K - B) · B · h(T - t)`.
    pub fn time_derivative(&self, state: &PathState, strike: f64, maturity: f64) -> Result<f64> {
        check_strike(strike)?;
        let b = bond_price(state, maturity)?;
        let tau = (maturity - state.t).max(0.0);
        Ok(-self.gain_slope(strike - b) * b * state.curve.at(tau))
    }
}

/// `Ψ_k(t, h)` for a single evaluation; builds (or reuses) the shared table.
pub fn mollified_payoff(state: &PathState, strike: f64, maturity: f64, k: f64) -> Result<f64> {
    MollifiedPayoff::new(k)?.evaluate(state, strike, maturity)
}

/// Monte Carlo estimate of `‖f‖_{L^p(μ_n)}` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// `(E_{μ_n} |f(h)|^p)^{1/p}` from `n_samples` draws of `sample_gaussian`.
/// The standard error is carried through the `1/p` power by the delta method.
pub fn lp_mu_norm<F>(f: F, p: f64, n: usize, basis: &BasisSet, n_samples: usize, seed: u64) -> Result<LpEstimate>
where
    F: Fn(&ForwardCurve) -> Result<f64>,
{
    if !(p >= 1.0) {
        return Err(Error::Argument(format!("p must be at least 1, got {p}")));
    }
    if n_samples < 2 {
        return Err(Error::Argument("need at least two samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let h = sample_gaussian_with(n, basis, &mut rng)?;
        let v = f(&h)?.abs().powf(p);
        sum += v;
        sum_sq += v * v;
    }
    let m = n_samples as f64;
    let mean = sum / m;
    let var = ((sum_sq / m - mean * mean) * m / (m - 1.0)).max(0.0);
    let se_mean = (var / m).sqrt();
    let value = mean.powf(1.0 / p);
    let stderr = if mean > 0.0 { value / (p * mean) * se_mean } else { 0.0 };
    Ok(LpEstimate { value, stderr })
}
