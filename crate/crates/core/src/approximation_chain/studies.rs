//! Coupled-path distance studies between the mild solution, its Yosida
//! approximation and the Galerkin reduction.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{galerkin_step, yosida_step, EpsilonRule, GalerkinModel};
use crate::curve_space::{BasisSet, ForwardCurve};
use crate::error::{Error, Result};
use crate::hjm_dynamics::{brownian_increments, CurveStepper, PathState, VolatilityModel};

const AUX_SALT: u64 = 0x5851_f42d_4c95_7f2d;

/// Shared settings for coupled simulations: every process sees the same `dW⁰`.
#[derive(Debug, Clone)]
pub struct CoupledStudy {
    pub h0: ForwardCurve,
    pub model: VolatilityModel,
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
}

impl CoupledStudy {
    fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    fn check(&self) -> Result<()> {
        if self.n_paths < 2 || self.n_steps == 0 || !(self.horizon > 0.0) {
            return Err(Error::Argument("coupled study needs ≥ 2 paths, ≥ 1 step and a positive horizon".into()));
        }
        self.model.validate(self.h0.grid())
    }

    fn increments(&self, path: usize) -> Vec<f64> {
        brownian_increments(self.seed, path, self.n_steps, self.dt(), false)
    }

    fn aux_increments(&self, path: usize, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ AUX_SALT);
        rng.set_stream(path as u64);
        let sd = self.dt().sqrt();
        (0..self.n_steps)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        sd * z
                    })
                    .collect()
            })
            .collect()
    }

    /// Mild Euler path of the full model.
    fn mild_path(&self, d_b: &[f64]) -> Result<Vec<Vec<f64>>> {
        let grid = self.h0.grid().clone();
        let mut stepper = CurveStepper::new(grid.clone(), &self.model, self.dt(), grid.len())?;
        let mut values = self.h0.values().to_vec();
        let mut out = Vec::with_capacity(self.n_steps + 1);
        out.push(values.clone());
        for &db in d_b {
            stepper.step(&mut values, db);
            out.push(values.clone());
        }
        Ok(out)
    }

    fn yosida_path(&self, d_b: &[f64], alpha: f64) -> Result<Vec<ForwardCurve>> {
        let mut state = PathState::new(0.0, self.h0.clone());
        let mut out = Vec::with_capacity(self.n_steps + 1);
        out.push(state.curve.clone());
        for &db in d_b {
            state = yosida_step(&state, self.dt(), db, alpha, &self.model)?;
            out.push(state.curve.clone());
        }
        Ok(out)
    }
}

/// `E[sup_t ‖X_t - Y_t‖²_w]` for one value of the swept parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistancePoint {
    pub param: f64,
    pub mean_sup_sq: f64,
    pub stderr: f64,
}

fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn sq_dist(a: &ForwardCurve, b: &[f64]) -> Result<f64> {
    let b = ForwardCurve::new(a.grid().clone(), b.to_vec())?;
    let d = a.sub(&b);
    Ok(d.inner_w(&d))
}

/// Distance between the Yosida solution `r^{(α)}` and the mild solution `r`
/// under shared increments, for each `α`.
pub fn yosida_distance_study(study: &CoupledStudy, alphas: &[f64]) -> Result<Vec<DistancePoint>> {
    study.check()?;
    let per_path: Vec<Vec<f64>> = (0..study.n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let d_b = study.increments(p);
            let mild = study.mild_path(&d_b)?;
            alphas
                .iter()
                .map(|&a| {
                    let y = study.yosida_path(&d_b, a)?;
                    y.iter().zip(&mild).try_fold(0.0f64, |m, (c, r)| Ok(m.max(sq_dist(c, r)?)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let col: Vec<f64> = per_path.iter().map(|v| v[i]).collect();
            let (mean, stderr) = mean_and_stderr(&col);
            DistancePoint { param: a, mean_sup_sq: mean, stderr }
        })
        .collect())
}

/// Distance between the reconstructed Galerkin state and `r^{(α)}` under a
/// shared `dW⁰`, for each dimension `n`.
pub fn galerkin_distance_study(
    study: &CoupledStudy,
    alpha: f64,
    dims: &[usize],
    basis: Arc<BasisSet>,
    epsilon: EpsilonRule,
) -> Result<Vec<DistancePoint>> {
    study.check()?;
    let models: Vec<GalerkinModel> = dims
        .iter()
        .map(|&n| GalerkinModel::new(n, alpha, epsilon.epsilon(n), basis.clone(), study.model.clone()))
        .collect::<Result<_>>()?;
    let max_n = dims.iter().copied().max().unwrap_or(1);
    let dt = study.dt();
    let per_path: Vec<Vec<f64>> = (0..study.n_paths)
        .into_par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let d_b = study.increments(p);
            let aux = study.aux_increments(p, max_n);
            let y = study.yosida_path(&d_b, alpha)?;
            models
                .iter()
                .map(|g| {
                    let n = g.dim();
                    let mut z = g.project(&study.h0)?;
                    let mut worst = sq_dist(&y[0], g.reconstruct(&z)?.values())?;
                    for (s, &db) in d_b.iter().enumerate() {
                        z = galerkin_step(&z, dt, db, &aux[s][..n], g)?;
                        worst = worst.max(sq_dist(&y[s + 1], g.reconstruct(&z)?.values())?);
                    }
                    Ok(worst)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(dims
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let col: Vec<f64> = per_path.iter().map(|v| v[i]).collect();
            let (mean, stderr) = mean_and_stderr(&col);
            DistancePoint { param: n as f64, mean_sup_sq: mean, stderr }
        })
        .collect())
}

/// `E[sup_t exp(-∫_0^t ρ(z_s) ds)]` for a Galerkin process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscountPoint {
    pub alpha: f64,
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

pub fn discount_sup_study(
    study: &CoupledStudy,
    pairs: &[(f64, usize)],
    basis: Arc<BasisSet>,
    epsilon: EpsilonRule,
) -> Result<Vec<DiscountPoint>> {
    study.check()?;
    let dt = study.dt();
    pairs
        .iter()
        .map(|&(alpha, n)| {
            let g = GalerkinModel::new(n, alpha, epsilon.epsilon(n), basis.clone(), study.model.clone())?;
            let z0 = g.project(&study.h0)?;
            let sups: Vec<f64> = (0..study.n_paths)
                .into_par_iter()
                .map(|p| -> Result<f64> {
                    let d_b = study.increments(p);
                    let aux = study.aux_increments(p, n);
                    let mut z = z0.clone();
                    let mut log_d = 0.0f64;
                    let mut best = 0.0f64;
                    for (s, &db) in d_b.iter().enumerate() {
                        let r0 = g.rho(&z);
                        z = galerkin_step(&z, dt, db, &aux[s], &g)?;
                        log_d -= 0.5 * dt * (r0 + g.rho(&z));
                        best = best.max(log_d);
                    }
                    Ok(best.exp())
                })
                .collect::<Result<_>>()?;
            let (mean, stderr) = mean_and_stderr(&sups);
            Ok(DiscountPoint { alpha, n, mean, stderr })
        })
        .collect()
}
