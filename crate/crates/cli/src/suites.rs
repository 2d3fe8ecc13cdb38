//! Property suites run by `proptest`: payoff bounds, value-function
//! regularity on a frozen probe set, the martingale diagnostic, and the
//! Gaussian reference measure.

use std::fs;
use std::path::Path;

use hjm_core::curve_space::{sample_gaussian_with, sup_bound_constant, BasisSet, ForwardCurve};
use hjm_core::hjm_dynamics::{payoff, PathState};
use hjm_core::payoff_smoothing::MollifiedPayoff;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::commands::{run_martingale, solve_pde, PdeRun};
use crate::config::RunConfig;
use crate::report::{write_text, CheckResult};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Payoff,
    Regularity,
    Martingale,
    Gaussian,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Payoff => "payoff",
            Suite::Regularity => "regularity",
            Suite::Martingale => "martingale",
            Suite::Gaussian => "gaussian",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Suite::Payoff => 0x7061_796f,
            Suite::Regularity => 0x7265_6775,
            Suite::Martingale => 0x6d61_7274,
            Suite::Gaussian => 0x6761_7573,
        }
    }
}

const BUNDLED_PROBES: &str = include_str!("../data/regularity_probes.csv");
const BUNDLED_CONSTANTS: &str = include_str!("../data/regularity_constants.toml");

/// Refitted constants are the largest observed ratio times this.
pub const REFIT_MARGIN: f64 = 1.5;

pub fn run(cfg: &RunConfig, suite: Suite, refit: bool) -> Result<Vec<CheckResult>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ suite.salt());
    match suite {
        Suite::Payoff => payoff_suite(cfg, &mut rng),
        Suite::Regularity => regularity_suite(cfg, refit),
        Suite::Martingale => martingale_suite(cfg),
        Suite::Gaussian => gaussian_suite(cfg, &mut rng),
    }
}

fn flat(basis: &BasisSet, level: f64) -> Result<ForwardCurve, CliError> {
    Ok(ForwardCurve::constant(basis.grid().clone(), level)?)
}

/// `level + scale · ξ` with `ξ` a draw of the reference Gaussian measure.
fn random_curve(basis: &BasisSet, rng: &mut ChaCha8Rng, scale: f64, level: f64) -> Result<ForwardCurve, CliError> {
    let xi = sample_gaussian_with(basis.len(), basis, rng)?;
    Ok(flat(basis, level)?.axpy(scale, &xi))
}

fn payoff_suite(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>, CliError> {
    let basis = cfg.basis()?;
    let p = &cfg.proptest;
    let (strike, maturity, t0) = (cfg.contract.strike, cfg.contract.maturity, cfg.contract.t0);
    let span = maturity - t0;
    let mut checks = Vec::new();

    for &k in &p.mollifier_k {
        let psi_k = MollifiedPayoff::new(k)?;
        let mut worst = (0.0f64, String::new());
        for i in 0..p.n_mollifier_samples {
            let t = t0 + rng.gen::<f64>() * 0.99 * span;
            let tau = maturity - t;
            let noise = random_curve(&basis, rng, 0.05, 0.0)?;
            // every other draw is steered to within 2/k of the kink
            let level = if i % 2 == 0 {
                let target = strike + (rng.gen::<f64>() * 4.0 - 2.0) / k;
                (-target.ln() - noise.integral_to(tau)) / tau
            } else {
                rng.gen_range(-0.05..0.25)
            };
            let state = PathState::new(t, noise.axpy(1.0, &flat(&basis, level)?));
            let d = (psi_k.evaluate(&state, strike, maturity)? - payoff(&state, strike, maturity)?).abs();
            if d > worst.0 {
                worst = (d, format!("t = {t}, level = {level}"));
            }
        }
        checks.push(
            CheckResult::new(
                format!("|Psi_k - Psi| <= 1/k at k = {k}"),
                worst.0 <= 1.0 / k,
                format!("max {:.6e} vs bound {:.6e} over {} samples", worst.0, 1.0 / k, p.n_mollifier_samples),
            )
            .with_witness(worst.1),
        );

        let mut bad = None;
        for j in 0..=p.n_mollifier_samples {
            let z = (j as f64 / p.n_mollifier_samples as f64 * 4.0 - 2.0) / k;
            let (g, s) = (psi_k.gain(z), psi_k.gain_slope(z));
            if !(g >= 0.0 && (g - z.max(0.0)).abs() <= 1.0 / k && (0.0..=1.0).contains(&s)) {
                bad = Some(format!("z = {z}, g_k = {g}, slope = {s}"));
                break;
            }
        }
        checks.push(
            CheckResult::new(format!("g_k bounds at k = {k}"), bad.is_none(), "0 <= g_k, |g_k - z+| <= 1/k, g_k' in [0, 1]")
                .with_witness(bad.unwrap_or_default()),
        );
    }

    let c = sup_bound_constant(&cfg.space_config())?;
    let slack = p.quadrature_slack;
    let mut worst = (f64::NEG_INFINITY, String::new());
    for _ in 0..p.n_pairs {
        let level = rng.gen_range(-0.1..0.1);
        let h = random_curve(&basis, rng, 1.0, level)?;
        let excess = h.sup_abs() - c * h.norm_w()?;
        if excess > worst.0 {
            worst = (excess, format!("level = {level}, sup = {}, norm = {}", h.sup_abs(), h.norm_w()?));
        }
    }
    checks.push(
        CheckResult::new(
            "sup|h| <= C ||h||_w",
            worst.0 <= slack,
            format!("C = {c:.6}, max excess {:.3e} over {} curves", worst.0, p.n_pairs),
        )
        .with_witness(worst.1),
    );

    let smoothed = MollifiedPayoff::new(cfg.chain.k)?;
    let mut worst_raw = (f64::NEG_INFINITY, String::new());
    let mut worst_smooth = (f64::NEG_INFINITY, String::new());
    for i in 0..p.n_pairs {
        let t = t0 + rng.gen::<f64>() * span;
        let level = rng.gen_range(0.0..0.2);
        let h = random_curve(&basis, rng, 0.05, level)?;
        let g = if i % 2 == 0 {
            h.axpy(0.02, &random_curve(&basis, rng, 1.0, 0.0)?)
        } else {
            let other = rng.gen_range(0.0..0.2);
            random_curve(&basis, rng, 0.05, other)?
        };
        let bound = c * maturity * h.sub(&g).norm_w()?;
        let (sh, sg) = (PathState::new(t, h), PathState::new(t, g));
        let raw = (payoff(&sh, strike, maturity)? - payoff(&sg, strike, maturity)?).abs() - bound;
        let smooth = (smoothed.evaluate(&sh, strike, maturity)? - smoothed.evaluate(&sg, strike, maturity)?).abs() - bound;
        if raw > worst_raw.0 {
            worst_raw = (raw, format!("pair {i}, t = {t}, level = {level}"));
        }
        if smooth > worst_smooth.0 {
            worst_smooth = (smooth, format!("pair {i}, t = {t}, level = {level}"));
        }
    }
    for (name, w) in [("Psi Lipschitz C T", worst_raw), ("Psi_k Lipschitz C T", worst_smooth)] {
        checks.push(
            CheckResult::new(name, w.0 <= slack, format!("max excess {:.3e} over {} pairs", w.0, p.n_pairs))
                .with_witness(w.1),
        );
    }
    Ok(checks)
}

/// One regularity probe, in units of the PDE box: times as fractions of
/// `[t0, T]`, states as fractions of the half widths along the box axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub t1: f64,
    pub t2: f64,
    pub h1: f64,
    pub h2: f64,
    pub g1: f64,
    pub g2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityConstants {
    pub beta: f64,
    /// `L` of the space inequality.
    pub l_space: f64,
    /// `L′` of the time inequality.
    pub l_time: f64,
}

pub fn parse_probes(text: &str) -> Result<Vec<Probe>, CliError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<Vec<Probe>, _>>()
        .map_err(|e| CliError::config(format!("invalid probe file: {e}")))
}

pub fn parse_constants(text: &str) -> Result<RegularityConstants, CliError> {
    toml::from_str(text).map_err(|e| CliError::config(format!("invalid regularity constants: {e}")))
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(&format!("cannot read {}", path.display()), e))
}

/// Draws a probe set: `h` anywhere in the inner 80% of the box, `g` a small
/// step away, and two distinct times before the last 5% of the horizon.
pub fn generate_probes(seed: u64, count: usize) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let h1 = rng.gen_range(-0.8..0.8);
            let h2 = rng.gen_range(-0.8..0.8);
            let t1: f64 = rng.gen_range(0.0..0.95);
            let mut t2: f64 = rng.gen_range(0.0..0.95);
            if (t2 - t1).abs() < 0.01 {
                t2 = if t1 < 0.5 { t1 + 0.05 } else { t1 - 0.05 };
            }
            Probe { t1, t2, h1, h2, g1: h1 + rng.gen_range(-0.1..0.1), g2: h2 + rng.gen_range(-0.1..0.1) }
        })
        .collect()
}

/// Space and time ratios `|ΔV| / bound-without-constant` for each probe.
pub fn regularity_ratios(run: &PdeRun, probes: &[Probe], beta: f64) -> Result<Vec<(f64, f64)>, CliError> {
    let surface = &run.solution.surface;
    let g = surface.grid();
    let d = g.dim();
    let (t0, span) = (g.t0(), g.maturity() - g.t0());
    let state = |a: f64, b: f64| g.to_global(&[a * g.half_widths()[0], b * g.half_widths().get(1).copied().unwrap_or(0.0)][..d]);
    let norm = |z: &[f64]| -> Result<f64, CliError> { Ok(run.basis.reconstruct(z)?.norm_w()?) };
    probes
        .iter()
        .map(|p| {
            let zh = state(p.h1, p.h2);
            let zg = state(p.g1, p.g2);
            let (t1, t2) = (t0 + p.t1 * span, t0 + p.t2 * span);
            let (nh, ng) = (norm(&zh)?, norm(&zg)?);
            let diff: Vec<f64> = zh.iter().zip(&zg).map(|(a, b)| a - b).collect();
            let dv = (surface.value_at_coords(t1, &zh)? - surface.value_at_coords(t1, &zg)?).abs();
            let space = dv / (((beta / 2.0) * nh).exp() + ((beta / 2.0) * ng).exp()) / norm(&diff)?;
            let dt = (surface.value_at_coords(t2, &zh)? - surface.value_at_coords(t1, &zh)?).abs();
            let time = dt / ((1.0 + nh) * ((beta / 2.0) * nh).exp() * (t2 - t1).abs());
            Ok((space, time))
        })
        .collect()
}

fn regularity_suite(cfg: &RunConfig, refit: bool) -> Result<Vec<CheckResult>, CliError> {
    let probes = match &cfg.proptest.regularity_probes {
        Some(p) => parse_probes(&read(p)?)?,
        None => parse_probes(BUNDLED_PROBES)?,
    };
    let frozen = match &cfg.proptest.regularity_constants {
        Some(p) => parse_constants(&read(p)?)?,
        None => parse_constants(BUNDLED_CONSTANTS)?,
    };
    let run = solve_pde(cfg)?;
    let ratios = regularity_ratios(&run, &probes, frozen.beta)?;
    let max_at = |f: fn(&(f64, f64)) -> f64| {
        ratios.iter().enumerate().map(|(i, r)| (f(r), i)).fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a })
    };
    let (space_max, space_at) = max_at(|r| r.0);
    let (time_max, time_at) = max_at(|r| r.1);

    let constants = if refit {
        let c = RegularityConstants { beta: frozen.beta, l_space: REFIT_MARGIN * space_max, l_time: REFIT_MARGIN * time_max };
        let text = toml::to_string(&c).map_err(|e| CliError::io("serializing constants", e))?;
        write_text(&cfg.out.join("regularity_constants.toml"), &text)?;
        c
    } else {
        frozen
    };

    let witness = |i: usize| format!("probe {i}: {:?}", probes[i]);
    Ok(vec![
        CheckResult::new(
            "space Lipschitz",
            space_max <= constants.l_space,
            format!("max ratio {space_max:.6e} vs L = {:.6e} over {} probes", constants.l_space, probes.len()),
        )
        .with_witness(witness(space_at)),
        CheckResult::new(
            "time Lipschitz",
            time_max <= constants.l_time,
            format!("max ratio {time_max:.6e} vs L' = {:.6e} over {} probes", constants.l_time, probes.len()),
        )
        .with_witness(witness(time_at)),
    ])
}

fn martingale_suite(cfg: &RunConfig) -> Result<Vec<CheckResult>, CliError> {
    let run = solve_pde(cfg)?;
    let r = run_martingale(cfg, &run)?;
    let mut checks: Vec<CheckResult> = r
        .checkpoints
        .iter()
        .map(|c| {
            CheckResult::new(
                format!("E[Y] at t = {:.4}", c.t),
                c.deviation_in_stderr <= 3.0,
                format!(
                    "mean {:.6e}, V0 {:.6e}, deviation {:.3e} = {:.2} stderr",
                    c.mean, r.v0, c.deviation, c.deviation_in_stderr
                ),
            )
            .with_witness(format!("seed {}, {} paths, dt {}", cfg.seed.wrapping_add(1), cfg.martingale.n_paths, cfg.martingale.dt))
        })
        .collect();
    checks.push(CheckResult::new(
        "second moment bounded",
        r.sup_second_moment.is_finite(),
        format!("sup E[Y^2] = {:.6e}, {} paths clamped to the box", r.sup_second_moment, r.clamped_paths),
    ));
    Ok(checks)
}

fn gaussian_suite(cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>, CliError> {
    let basis = cfg.basis()?;
    let n = basis.len();
    let m = cfg.proptest.gaussian_samples;
    let tol = cfg.proptest.gaussian_tolerance;
    let mut sum_sq = vec![0.0; n];
    let mut norm_sq = 0.0;
    let mut z = vec![0.0; n];
    for _ in 0..m {
        let h = sample_gaussian_with(n, &basis, rng)?;
        basis.coordinates_of_values(h.values(), &mut z);
        for (s, zi) in sum_sq.iter_mut().zip(&z) {
            *s += zi * zi;
        }
        norm_sq += h.norm_w()?.powi(2);
    }
    let lambdas = basis.eigenvalues();
    let mut checks: Vec<CheckResult> = lambdas
        .iter()
        .zip(&sum_sq)
        .enumerate()
        .map(|(i, (l, s))| {
            let var = s / m as f64;
            let rel = (var / l - 1.0).abs();
            CheckResult::new(
                format!("variance of coordinate {}", i + 1),
                rel <= tol,
                format!("{var:.6e} vs lambda {l:.6e} (relative error {rel:.3e})"),
            )
        })
        .collect();
    let trace: f64 = lambdas.iter().sum();
    let mean = norm_sq / m as f64;
    let rel = (mean / trace - 1.0).abs();
    checks.push(CheckResult::new(
        "E||h||_w^2 = sum lambda",
        rel <= tol,
        format!("{mean:.6e} vs {trace:.6e} (relative error {rel:.3e}, {m} samples)"),
    ));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_data_parses() {
        let probes = parse_probes(BUNDLED_PROBES).unwrap();
        assert_eq!(probes.len(), 200);
        for p in &probes {
            for v in [p.h1, p.h2, p.g1, p.g2] {
                assert!(v.abs() <= 0.9 + 1e-12);
            }
            assert!(p.t1 < 1.0 && p.t2 < 1.0 && (p.t1 - p.t2).abs() >= 0.01 - 1e-12);
        }
        let c = parse_constants(BUNDLED_CONSTANTS).unwrap();
        assert_eq!(c.beta, 1.0);
        assert!(c.l_space > 0.0 && c.l_time > 0.0);
    }

    #[test]
    fn probe_generation_is_seeded() {
        assert_eq!(generate_probes(3, 10), generate_probes(3, 10));
        assert_ne!(generate_probes(3, 10), generate_probes(4, 10));
    }
}
