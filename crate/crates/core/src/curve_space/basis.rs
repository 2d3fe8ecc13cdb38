use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ForwardCurve, Grid, SpaceConfig};
use crate::error::{Error, Result};

/// Orthonormal basis `φ_1..φ_N` of (a subspace of) `H_w`, together with the
/// eigenvalues of the trace-class covariance that defines `μ`.
#[derive(Debug, Clone)]
pub struct BasisSet {
    grid: Arc<Grid>,
    functions: Vec<ForwardCurve>,
    /// `duals[i] · h == ⟨h, φ_i⟩_w` for nodal values `h`.
    duals: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    gram_residual: f64,
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn function(&self, i: usize) -> &ForwardCurve {
        &self.functions[i]
    }

    pub fn functions(&self) -> &[ForwardCurve] {
        &self.functions
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `max |⟨φ_i, φ_j⟩_w - δ_ij|` measured after construction.
    pub fn gram_residual(&self) -> f64 {
        self.gram_residual
    }

    /// Coordinates `⟨h, φ_i⟩_w` for `i < n`, from raw nodal values.
    pub fn coordinates_of_values(&self, values: &[f64], out: &mut [f64]) {
        for (o, d) in out.iter_mut().zip(&self.duals) {
            *o = d.iter().zip(values).map(|(a, b)| a * b).sum();
        }
    }

    pub fn coordinates(&self, h: &ForwardCurve, n: usize) -> Result<Vec<f64>> {
        self.check_n(n)?;
        let mut out = vec![0.0; n];
        self.coordinates_of_values(h.values(), &mut out);
        Ok(out)
    }

    /// `Σ c_i φ_i`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<ForwardCurve> {
        self.check_n(coeffs.len())?;
        let mut values = vec![0.0; self.grid.len()];
        for (c, phi) in coeffs.iter().zip(&self.functions) {
            for (v, p) in values.iter_mut().zip(phi.values()) {
                *v += c * p;
            }
        }
        ForwardCurve::new(self.grid.clone(), values)
    }

    fn check_n(&self, n: usize) -> Result<()> {
        if n > self.len() {
            return Err(Error::Argument(format!(
                "requested {n} basis functions but only {} are available",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Gram–Schmidt under `⟨·,·⟩_w` of `{1, e^{-x}, x e^{-x}, x² e^{-x}, …}`.
pub fn build_basis(config: &SpaceConfig) -> Result<BasisSet> {
    config.validate(None)?;
    let grid = config.grid()?;
    let n = config.basis_size;
    let generator = |k: usize, x: f64| -> f64 {
        if k == 0 {
            1.0
        } else {
            x.powi(k as i32 - 1) * (-x).exp()
        }
    };

    let mut functions: Vec<ForwardCurve> = Vec::with_capacity(n);
    for k in 0..n {
        let g = ForwardCurve::from_fn(grid.clone(), |x| generator(k, x))?;
        let scale = g.inner_w(&g).sqrt();
        let mut v = g;
        // two passes of modified Gram–Schmidt
        for _ in 0..2 {
            for phi in &functions {
                let c = v.inner_w(phi);
                v = v.axpy(-c, phi);
            }
        }
        let norm = v.inner_w(&v).sqrt();
        if !(norm > 1e-10 * scale) {
            return Err(Error::Basis(format!(
                "generator {k} is numerically dependent on the previous ones (residual norm {norm:.3e})"
            )));
        }
        functions.push(v.scale(1.0 / norm));
    }

    let mut gram_residual = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            let target = if i == j { 1.0 } else { 0.0 };
            gram_residual = gram_residual.max((functions[i].inner_w(&functions[j]) - target).abs());
        }
    }
    if gram_residual > 1e-6 {
        return Err(Error::Basis(format!("Gram residual {gram_residual:.3e} exceeds 1e-6")));
    }

    let tw = grid.weighted_trapezoid().to_vec();
    let duals = functions
        .iter()
        .map(|phi| {
            let mut d = vec![0.0; grid.len()];
            grid.differentiate(phi.values(), &mut d);
            let a: Vec<f64> = d.iter().zip(&tw).map(|(x, w)| x * w).collect();
            let mut dual = vec![0.0; grid.len()];
            grid.differentiate_transpose(&a, &mut dual);
            dual[0] += phi.values()[0];
            dual
        })
        .collect();

    Ok(BasisSet {
        grid,
        functions,
        duals,
        eigenvalues: config.q_eigenvalues[..n].to_vec(),
        gram_residual,
    })
}

/// Orthogonal projection `P_n h = Σ_{i≤n} ⟨h, φ_i⟩_w φ_i`.
pub fn project(h: &ForwardCurve, n: usize, basis: &BasisSet) -> Result<ForwardCurve> {
    let c = basis.coordinates(h, n)?;
    basis.reconstruct(&c)
}

/// One draw `Σ_{i≤n} ξ_i √λ_i φ_i` from the truncated Gaussian measure `μ_n`.
pub fn sample_gaussian(n: usize, basis: &BasisSet, seed: u64) -> Result<ForwardCurve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_gaussian_with(n, basis, &mut rng)
}

pub fn sample_gaussian_with<R: rand::Rng + ?Sized>(
    n: usize,
    basis: &BasisSet,
    rng: &mut R,
) -> Result<ForwardCurve> {
    basis.check_n(n)?;
    let coeffs: Vec<f64> = basis.eigenvalues[..n]
        .iter()
        .map(|l| {
            let xi: f64 = StandardNormal.sample(rng);
            xi * l.sqrt()
        })
        .collect();
    basis.reconstruct(&coeffs)
}

/// `Σ λ_i ‖φ_i'‖²_w`, a finite-sample stand-in for `Tr[A Q A*]`.
pub fn trace_aqa(basis: &BasisSet) -> f64 {
    basis
        .functions
        .iter()
        .zip(&basis.eigenvalues)
        .map(|(phi, l)| {
            let d = phi.derivative();
            l * d.inner_w(&d)
        })
        .sum()
}
