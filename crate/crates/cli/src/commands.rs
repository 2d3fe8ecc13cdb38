//! The four subcommands. Each takes a validated config, writes its files into
//! `config.out` and returns what it wrote for the caller to inspect.

use std::fs;
use std::io::Write;
use std::sync::Arc;

use flate2::write::GzEncoder;
use flate2::Compression;
use hjm_core::curve_space::{trace_aqa, BasisSet};
use hjm_core::hjm_dynamics::{simulate_paths, PricingProblem, SimulationSpec};
use hjm_core::mc_oracle::{european_price, lsmc_price, martingale_diagnostic, MartingaleReport};
use hjm_core::vi_pricer::{exercise_rule, solve_chain, truncation_sensitivity, ChainSolution, ExerciseMode};
use log::{info, warn};

use crate::config::RunConfig;
use crate::report::{
    ensure_dir, text_summary, write_boundary, write_json, write_surface, write_text, junit_xml, ChainInfo,
    CheckResult, LsmcInfo, MartingaleInfo, PdeInfo, PriceSummary,
};
use crate::study::{self, Axis, StudyReport};
use crate::suites::{self, Suite};
use crate::{CliError, ExitCode};

/// Everything the PDE side of a run needs.
pub struct PdeRun {
    pub basis: Arc<BasisSet>,
    pub problem: PricingProblem,
    pub solution: ChainSolution,
}

pub fn solve_pde(cfg: &RunConfig) -> Result<PdeRun, CliError> {
    let basis = cfg.basis()?;
    let problem = cfg.problem(&basis)?;
    let solution = solve_chain(
        &problem,
        &cfg.model(),
        basis.clone(),
        &cfg.chain(),
        &cfg.pde.grid,
        &cfg.pde.solver,
        ExerciseMode::American,
    )?;
    Ok(PdeRun { basis, problem, solution })
}

pub fn run_martingale(cfg: &RunConfig, run: &PdeRun) -> Result<MartingaleReport, CliError> {
    let rule = exercise_rule(run.solution.surface.clone(), cfg.tol_gap());
    Ok(martingale_diagnostic(&rule, &run.basis, &run.problem, &cfg.model(), &cfg.martingale_config())?)
}

/// PDE chain, LSMC oracle, European reference and (optionally) the
/// martingale diagnostic. Writes `summary.json`, `surface.csv` and
/// `boundary.csv`.
pub fn run_price(cfg: &RunConfig) -> Result<PriceSummary, CliError> {
    ensure_dir(&cfg.out)?;
    let model = cfg.model();
    let run = solve_pde(cfg)?;
    let s = &run.solution;
    info!("pde price {:.6e} on {:?} x {} nodes", s.price(), s.surface.grid().n_state(), s.surface.grid().n_time());

    let trace = trace_aqa(&run.basis);
    let cap = cfg.space.trace_cap.unwrap_or(1e3);
    if trace > cap {
        warn!("trace surrogate {trace:.3e} exceeds the configured cap {cap:.3e}");
    }

    let truncation =
        truncation_sensitivity(&run.problem, &model, run.basis.clone(), &cfg.chain(), s, &cfg.pde.solver)?;
    if truncation > 1e-6 {
        warn!("price moves by {truncation:.2e} when the PDE box is widened");
    }

    let lsmc_cfg = cfg.lsmc(cfg.seed);
    let lsmc = lsmc_price(&run.problem, &model, &lsmc_cfg)?;
    info!("lsmc price {:.6e} ± {:.1e}", lsmc.price(), lsmc.stderr());
    let european = european_price(&run.problem, &model, &lsmc_cfg)?;

    let martingale = if cfg.martingale.enabled {
        let r = run_martingale(cfg, &run)?;
        info!("martingale deviation {:.2} stderr", r.max_deviation_in_stderr);
        Some(r)
    } else {
        None
    };

    let g = s.surface.grid();
    let chain = cfg.chain();
    let summary = PriceSummary {
        price_pde: s.price(),
        price_lsmc_out: lsmc.out_of_sample.value,
        stderr: lsmc.out_of_sample.stderr,
        price_lsmc_in: lsmc.in_sample.value,
        price_european: european.value,
        stderr_european: european.stderr,
        martingale_max_dev: martingale.as_ref().map(|m| m.max_deviation_in_stderr),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        strike: cfg.contract.strike,
        maturity: cfg.contract.maturity,
        t0: cfg.contract.t0,
        chain: ChainInfo {
            k: (!chain.raw_obstacle).then_some(chain.k),
            alpha: chain.alpha,
            n: chain.n,
            epsilon: chain.epsilon.epsilon(chain.n),
            z0: s.z0.clone(),
        },
        pde: PdeInfo {
            n_state: g.n_state().to_vec(),
            n_time: g.n_time(),
            center: g.center().to_vec(),
            half_widths: g.half_widths().to_vec(),
            axes: g.axes().to_vec(),
            max_psor_iterations: s.surface.iterations().iter().copied().max().unwrap_or(0),
            complementarity: s.surface.complementarity(),
            upwinded_rows: s.upwinded_rows,
            truncation_sensitivity: truncation,
        },
        lsmc: LsmcInfo {
            n_paths: lsmc_cfg.n_paths,
            dt: lsmc_cfg.dt,
            degree: lsmc_cfg.degree,
            all_out_of_money: lsmc.all_out_of_money,
            exercise_at_start: lsmc.exercise_at_start,
            degree_reductions: lsmc.degree_reductions,
        },
        martingale: martingale.map(|m| MartingaleInfo {
            v0: m.v0,
            max_abs_deviation: m.max_abs_deviation,
            sup_second_moment: m.sup_second_moment,
            stopped_payoff: m.stopped_payoff,
            clamped_paths: m.clamped_paths,
            checkpoints: m.checkpoints,
        }),
        trace_aqa: trace,
    };

    write_json(&cfg.out.join("summary.json"), &summary)?;
    write_surface(&cfg.out.join("surface.csv"), s, cfg.output.surface_slices, cfg.tol_gap())?;
    write_boundary(&cfg.out.join("boundary.csv"), &s.surface.boundary_trace(cfg.tol_gap()), g.dim())?;
    Ok(summary)
}

/// Writes `converge_<axis>.csv` and `converge_<axis>.json`; a failed trend
/// check becomes exit 3 after the files are written.
pub fn run_converge(cfg: &RunConfig, axis: Axis) -> Result<StudyReport, CliError> {
    ensure_dir(&cfg.out)?;
    let report = study::run(cfg, axis)?;
    study::write(&cfg.out, &report)?;
    if let Some(c) = report.checks.iter().find(|c| !c.passed) {
        return Err(CliError::new(
            ExitCode::TrendFailure,
            format!("{} axis: {} failed: {}", axis.name(), c.name, c.detail),
        ));
    }
    Ok(report)
}

/// Writes `proptest_<suite>.xml` and `proptest_<suite>.txt`; any failed
/// check becomes exit 1 naming the property and its witness.
pub fn run_proptest(cfg: &RunConfig, suite: Suite, refit: bool) -> Result<Vec<CheckResult>, CliError> {
    ensure_dir(&cfg.out)?;
    let checks = suites::run(cfg, suite, refit)?;
    let name = suite.name();
    write_text(&cfg.out.join(format!("proptest_{name}.xml")), &junit_xml(name, &checks))?;
    write_text(&cfg.out.join(format!("proptest_{name}.txt")), &text_summary(name, &checks))?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| match &c.witness {
            Some(w) => format!("{} ({}; witness {w})", c.name, c.detail),
            None => format!("{} ({})", c.name, c.detail),
        })
        .collect();
    if !failed.is_empty() {
        return Err(CliError::new(ExitCode::PropertyFailure, format!("{name} suite failed: {}", failed.join("; "))));
    }
    Ok(checks)
}

/// Full-model paths: per-step summary in `paths_summary.csv`, and every
/// (path, step) row in `paths.csv.gz` when `dump` is set.
pub fn run_simulate(cfg: &RunConfig, dump: bool) -> Result<(), CliError> {
    ensure_dir(&cfg.out)?;
    let basis = cfg.basis()?;
    let problem = cfg.problem(&basis)?;
    let s = &cfg.simulate;
    let spec = SimulationSpec::new(problem.t0, problem.maturity, s.dt, s.n_paths, cfg.seed, s.antithetic)?;
    let ens = simulate_paths(&problem.initial_curve, &cfg.model(), &spec)?;

    let path = cfg.out.join("paths_summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&format!("cannot write {}", path.display()), e))?;
    let csv_err = |e: csv::Error| CliError::io("writing csv", e);
    w.write_record(["t", "spot_mean", "spot_std", "bond_mean", "discount_mean", "discounted_bond_mean", "discounted_bond_stderr"])
        .map_err(csv_err)?;
    let m = ens.n_paths as f64;
    for (step, t) in ens.times.iter().enumerate() {
        let spot: Vec<f64> = (0..ens.n_paths).map(|i| ens.spot(i, step)).collect();
        let db: Vec<f64> = (0..ens.n_paths).map(|i| ens.discount(i, step) * ens.bond(i, step)).collect();
        let (spot_mean, spot_var) = mean_var(&spot);
        let (db_mean, db_var) = mean_var(&db);
        let bond_mean = (0..ens.n_paths).map(|i| ens.bond(i, step)).sum::<f64>() / m;
        let disc_mean = (0..ens.n_paths).map(|i| ens.discount(i, step)).sum::<f64>() / m;
        w.write_record([
            t.to_string(),
            spot_mean.to_string(),
            spot_var.sqrt().to_string(),
            bond_mean.to_string(),
            disc_mean.to_string(),
            db_mean.to_string(),
            (db_var / m).sqrt().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io("writing csv", e))?;

    if dump {
        let path = cfg.out.join("paths.csv.gz");
        let file = fs::File::create(&path).map_err(|e| CliError::io(&format!("cannot write {}", path.display()), e))?;
        let mut w = csv::Writer::from_writer(GzEncoder::new(file, Compression::default()));
        w.write_record(["path", "step", "t", "spot", "bond", "log_discount"]).map_err(csv_err)?;
        for i in 0..ens.n_paths {
            for (step, t) in ens.times.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    step.to_string(),
                    t.to_string(),
                    ens.spot(i, step).to_string(),
                    ens.bond(i, step).to_string(),
                    ens.log_discount(i, step).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        let gz = w.into_inner().map_err(|e| CliError::io("writing paths", e.error()))?;
        gz.finish().and_then(|mut f| f.flush()).map_err(|e| CliError::io("writing paths", e))?;
    }
    Ok(())
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
    (mean, var)
}
