//! One-axis convergence studies of the PDE price.

use std::path::Path;

use hjm_core::vi_pricer::{solve_chain, solve_chain_on, ChainConfig, ExerciseMode};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{write_json, CheckResult};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    K,
    Alpha,
    N,
    Grid,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::K => "k",
            Axis::Alpha => "alpha",
            Axis::N => "n",
            Axis::Grid => "grid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyPoint {
    /// Parameter value, or the refinement level on the grid axis.
    pub axis_value: f64,
    pub price: f64,
    /// `|price - previous price|`; absent on the first row.
    pub max_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub axis: Axis,
    pub points: Vec<StudyPoint>,
    pub checks: Vec<CheckResult>,
    /// Fitted `c` of `price_k - price_last ≈ c (1/k - 1/k_last)`.
    pub fitted_c: Option<f64>,
    pub richardson_ratios: Option<Vec<f64>>,
}

pub fn run(cfg: &RunConfig, axis: Axis) -> Result<StudyReport, CliError> {
    let basis = cfg.basis()?;
    let problem = cfg.problem(&basis)?;
    let model = cfg.model();
    let base = cfg.chain();
    let c = &cfg.converge;
    let solve = |chain: &ChainConfig| -> Result<f64, CliError> {
        let s = solve_chain(
            &problem,
            &model,
            basis.clone(),
            chain,
            &cfg.pde.grid,
            &cfg.pde.solver,
            ExerciseMode::American,
        )?;
        Ok(s.price())
    };

    let (values, prices): (Vec<f64>, Vec<f64>) = match axis {
        Axis::K => {
            let mut out = Vec::new();
            for &k in &c.k {
                out.push((k, solve(&ChainConfig { k, raw_obstacle: false, ..base.clone() })?));
            }
            out.into_iter().unzip()
        }
        Axis::Alpha => {
            let mut out = Vec::new();
            for &alpha in &c.alpha {
                out.push((alpha, solve(&ChainConfig { alpha, ..base.clone() })?));
            }
            out.into_iter().unzip()
        }
        Axis::N => {
            let mut out = Vec::new();
            for &n in &c.n {
                out.push((n as f64, solve(&ChainConfig { n, ..base.clone() })?));
            }
            out.into_iter().unzip()
        }
        Axis::Grid => {
            let chain = ChainConfig { n: c.grid_n, ..base.clone() };
            let first = solve_chain(
                &problem,
                &model,
                basis.clone(),
                &chain,
                &c.grid_base,
                &cfg.pde.solver,
                ExerciseMode::American,
            )?;
            let mut grid = first.surface.grid().clone();
            let mut out = vec![(0.0, first.price())];
            for level in 1..=c.grid_levels {
                grid = grid.refined();
                let s = solve_chain_on(
                    &problem,
                    &model,
                    basis.clone(),
                    &chain,
                    &grid,
                    &cfg.pde.solver,
                    ExerciseMode::American,
                )?;
                out.push((level as f64, s.price()));
            }
            out.into_iter().unzip()
        }
    };
    if values.is_empty() {
        return Err(CliError::config(format!("the {} schedule is empty", axis.name())));
    }
    for (v, p) in values.iter().zip(&prices) {
        info!("{} = {v}: price {p:.8e}", axis.name());
    }

    let points: Vec<StudyPoint> = values
        .iter()
        .zip(&prices)
        .enumerate()
        .map(|(i, (&v, &p))| StudyPoint {
            axis_value: v,
            price: p,
            max_change: (i > 0).then(|| (p - prices[i - 1]).abs()),
        })
        .collect();

    let mut checks = Vec::new();
    let mut fitted_c = None;
    let mut richardson_ratios = None;
    match axis {
        Axis::Grid => {
            let (check, ratios) = richardson_check(&prices, c.richardson_band);
            checks.push(check);
            richardson_ratios = Some(ratios);
        }
        _ => {
            checks.push(shrinking_check(&values, &prices));
            if axis == Axis::K {
                let (check, fit) = inverse_k_check(&values, &prices, c.k_fit_tolerance);
                checks.push(check);
                fitted_c = fit;
            }
        }
    }
    Ok(StudyReport { axis, points, checks, fitted_c, richardson_ratios })
}

/// Successive price changes strictly decrease in size.
pub fn shrinking_check(values: &[f64], prices: &[f64]) -> CheckResult {
    let changes: Vec<f64> = prices.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if changes.len() < 2 {
        return CheckResult::new(
            "changes shrink",
            true,
            format!("{} change(s) along the schedule, nothing to compare", changes.len()),
        );
    }
    let bad = changes.windows(2).position(|w| !(w[1] < w[0]));
    let detail = format!("changes {}", fmt_list(&changes));
    match bad {
        None => CheckResult::new("changes shrink", true, detail),
        Some(i) => CheckResult::new("changes shrink", false, detail)
            .with_witness(format!("between axis values {} and {}", values[i + 1], values[i + 2])),
    }
}

/// Least-squares fit of `p_k - p_last = c (1/k - 1/k_last)`; passes when
/// every difference is within `tolerance` (relative) of the fit.
pub fn inverse_k_check(ks: &[f64], prices: &[f64], tolerance: f64) -> (CheckResult, Option<f64>) {
    let name = "1/k trend";
    if ks.len() < 2 {
        return (CheckResult::new(name, true, "single point, nothing to fit"), None);
    }
    let last = ks.len() - 1;
    let xs: Vec<f64> = ks[..last].iter().map(|k| 1.0 / k - 1.0 / ks[last]).collect();
    let ds: Vec<f64> = prices[..last].iter().map(|p| p - prices[last]).collect();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let c = xs.iter().zip(&ds).map(|(x, d)| x * d).sum::<f64>() / sxx;
    let misfit: Vec<f64> = xs
        .iter()
        .zip(&ds)
        .map(|(x, d)| if *d == 0.0 { if c * x == 0.0 { 0.0 } else { f64::INFINITY } } else { (d - c * x).abs() / d.abs() })
        .collect();
    let worst = misfit.iter().cloned().fold(0.0, f64::max);
    let passed = c.is_finite() && worst <= tolerance;
    let detail = format!("c = {c:.4e}, relative misfit {} (limit {tolerance})", fmt_list(&misfit));
    let at = misfit.iter().position(|&m| m == worst).unwrap_or(0);
    (CheckResult::new(name, passed, detail).with_witness(format!("k = {}", ks[at])), Some(c))
}

/// Ratios of successive differences under halving of all step sizes.
pub fn richardson_check(prices: &[f64], band: [f64; 2]) -> (CheckResult, Vec<f64>) {
    let name = "Richardson ratio";
    let diffs: Vec<f64> = prices.windows(2).map(|w| w[1] - w[0]).collect();
    let ratios: Vec<f64> = diffs.windows(2).map(|w| w[0] / w[1]).collect();
    if ratios.is_empty() {
        return (CheckResult::new(name, false, "need at least three grid levels"), ratios);
    }
    let bad = ratios.iter().position(|r| !(*r >= band[0] && *r <= band[1]));
    let detail = format!("ratios {} (band [{}, {}])", fmt_list(&ratios), band[0], band[1]);
    let check = match bad {
        None => CheckResult::new(name, true, detail),
        Some(i) => CheckResult::new(name, false, detail).with_witness(format!("levels {}..{}", i, i + 2)),
    };
    (check, ratios)
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4e}")).collect();
    format!("[{}]", parts.join(", "))
}

/// `converge_<axis>.csv` and `converge_<axis>.json`.
pub fn write(dir: &Path, report: &StudyReport) -> Result<(), CliError> {
    let name = report.axis.name();
    let path = dir.join(format!("converge_{name}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&format!("cannot write {}", path.display()), e))?;
    let err = |e: csv::Error| CliError::io("writing csv", e);
    w.write_record(["axis_value", "price", "max_change"]).map_err(err)?;
    for p in &report.points {
        w.write_record([p.axis_value.to_string(), p.price.to_string(), p.max_change.map(|c| c.to_string()).unwrap_or_default()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io("writing csv", e))?;
    write_json(&dir.join(format!("converge_{name}.json")), report)
}
