//! Files written into the output directory. Nothing here records wall-clock
//! time, so identical inputs give identical bytes.

use std::fs;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hjm_core::mc_oracle::{CheckpointStat, Estimate};
use hjm_core::vi_pricer::{BoundaryPoint, ChainSolution, Obstacle};
use serde::Serialize;

use crate::{CliError, ExitCode};

/// `summary.json` of the `price` command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSummary {
    pub price_pde: f64,
    pub price_lsmc_out: f64,
    /// Standard error of `price_lsmc_out`.
    pub stderr: f64,
    pub price_lsmc_in: f64,
    pub price_european: f64,
    pub stderr_european: f64,
    /// Largest checkpoint deviation in standard errors; `null` when skipped.
    pub martingale_max_dev: Option<f64>,
    pub config_hash: String,
    pub seed: u64,
    pub strike: f64,
    pub maturity: f64,
    pub t0: f64,
    pub chain: ChainInfo,
    pub pde: PdeInfo,
    pub lsmc: LsmcInfo,
    pub martingale: Option<MartingaleInfo>,
    pub trace_aqa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainInfo {
    pub k: Option<f64>,
    pub alpha: f64,
    pub n: usize,
    pub epsilon: f64,
    pub z0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PdeInfo {
    pub n_state: Vec<usize>,
    pub n_time: usize,
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub axes: Vec<Vec<f64>>,
    pub max_psor_iterations: usize,
    pub complementarity: f64,
    pub upwinded_rows: usize,
    /// `|ΔV(t0)|` when the box is widened by a quarter.
    pub truncation_sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LsmcInfo {
    pub n_paths: usize,
    pub dt: f64,
    pub degree: usize,
    pub all_out_of_money: bool,
    pub exercise_at_start: bool,
    pub degree_reductions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleInfo {
    pub v0: f64,
    pub max_abs_deviation: f64,
    pub sup_second_moment: f64,
    pub stopped_payoff: Estimate,
    pub clamped_paths: usize,
    pub checkpoints: Vec<CheckpointStat>,
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(&format!("cannot create {}", dir.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io("serializing report", e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(&format!("cannot write {}", path.display()), e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::io(&format!("cannot write {}", path.display()), e))
}

fn csv_err(e: impl std::fmt::Display) -> CliError {
    CliError::io("writing csv", e)
}

/// `error.json` written next to the other outputs when a command fails.
pub fn write_error(dir: &Path, err: &CliError) -> Result<PathBuf, CliError> {
    #[derive(Serialize)]
    struct ErrorReport<'a> {
        error: &'a str,
        kind: ExitCode,
        exit_code: i32,
    }
    ensure_dir(dir)?;
    let path = dir.join("error.json");
    write_json(&path, &ErrorReport { error: &err.message, kind: err.code, exit_code: err.code.code() })?;
    Ok(path)
}

/// Value surface on `slices` evenly spread time levels:
/// `t, z1[, z2], V, Psi, exercised`.
pub fn write_surface(path: &Path, solution: &ChainSolution, slices: usize, tol_gap: f64) -> Result<(), CliError> {
    let surface = &solution.surface;
    let g = surface.grid();
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=g.dim()).map(|i| format!("z{i}")));
    header.extend(["V", "Psi", "exercised"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    let mut levels: Vec<usize> = (0..slices).map(|j| (j * g.n_time()) / (slices - 1)).collect();
    levels.dedup();
    for m in levels {
        let mask = surface.exercise_mask(m, tol_gap);
        let t = g.time(m);
        for (idx, (&v, &psi)) in surface.values(m).iter().zip(surface.obstacle_values(m)).enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(g.node_global(idx).iter().map(f64::to_string));
            row.push(v.to_string());
            row.push(psi.to_string());
            row.push(u8::from(mask[idx]).to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(csv_err)
}

/// First exercised node along the first axis per time level:
/// `t, exercised_nodes, threshold_z1[, threshold_z2]` (blank when none).
pub fn write_boundary(path: &Path, trace: &[BoundaryPoint], dim: usize) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string(), "exercised_nodes".to_string()];
    header.extend((1..=dim).map(|i| format!("threshold_z{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for p in trace {
        let mut row = vec![p.t.to_string(), p.exercised_nodes.to_string()];
        match &p.threshold {
            Some(z) => row.extend(z.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), dim)),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(csv_err)
}

/// Obstacle at the initial state, for the text summary.
pub fn obstacle_at_start(solution: &ChainSolution) -> f64 {
    let g = solution.surface.grid();
    solution.obstacle.value(g.t0(), &solution.z0)
}

/// One checked property.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Inputs of the worst case, if the check failed.
    pub witness: Option<String>,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult { name: name.into(), passed, detail: detail.into(), witness: None }
    }

    pub fn with_witness(mut self, witness: impl Into<String>) -> Self {
        if !self.passed {
            self.witness = Some(witness.into());
        }
        self
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// JUnit-style XML, one testcase per check.
pub fn junit_xml(suite: &str, checks: &[CheckResult]) -> String {
    let failures = checks.iter().filter(|c| !c.passed).count();
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str(&format!(
        "<testsuite name=\"{}\" tests=\"{}\" failures=\"{}\">\n",
        xml_escape(suite),
        checks.len(),
        failures
    ));
    for c in checks {
        let name = xml_escape(&c.name);
        if c.passed {
            s.push_str(&format!("  <testcase classname=\"{}\" name=\"{name}\">\n", xml_escape(suite)));
            s.push_str(&format!("    <system-out>{}</system-out>\n", xml_escape(&c.detail)));
        } else {
            s.push_str(&format!("  <testcase classname=\"{}\" name=\"{name}\">\n", xml_escape(suite)));
            let body = match &c.witness {
                Some(w) => format!("{}\nwitness: {w}", c.detail),
                None => c.detail.clone(),
            };
            s.push_str(&format!(
                "    <failure message=\"{}\">{}</failure>\n",
                xml_escape(&c.detail),
                xml_escape(&body)
            ));
        }
        s.push_str("  </testcase>\n");
    }
    s.push_str("</testsuite>\n");
    s
}

pub fn text_summary(title: &str, checks: &[CheckResult]) -> String {
    let mut s = String::new();
    for c in checks {
        let _ = writeln!(s, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        if let Some(w) = &c.witness {
            let _ = writeln!(s, "     witness: {w}");
        }
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(s, "{title}: {} checks, {failed} failed", checks.len());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn junit_counts_and_escapes() {
        let checks = vec![
            CheckResult::new("a<b", true, "ok"),
            CheckResult::new("c", false, "x > 1").with_witness("h = \"flat\""),
        ];
        let xml = junit_xml("payoff", &checks);
        assert!(xml.contains("tests=\"2\" failures=\"1\""));
        assert!(xml.contains("a&lt;b"));
        assert!(xml.contains("witness: h = &quot;flat&quot;"));
        let txt = text_summary("payoff", &checks);
        assert!(txt.contains("PASS a<b: ok"));
        assert!(txt.contains("FAIL c: x > 1"));
        assert!(txt.ends_with("payoff: 2 checks, 1 failed\n"));
    }

    #[test]
    fn witness_only_on_failure() {
        assert!(CheckResult::new("a", true, "").with_witness("w").witness.is_none());
    }
}
