//! Run configuration: a TOML file, validated before any computation.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hjm_core::approximation_chain::EpsilonRule;
use hjm_core::curve_space::{build_basis, geometric_eigenvalues, read_curve_csv, BasisSet, ForwardCurve, SpaceConfig};
use hjm_core::hjm_dynamics::{PricingProblem, VolatilityKind, VolatilityModel};
use hjm_core::mc_oracle::{LsmcConfig, MartingaleConfig};
use hjm_core::vi_pricer::{ChainConfig, GridSettings, SolverSettings};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub contract: Contract,
    pub curve: CurveSource,
    pub model: ModelSection,
    #[serde(default)]
    pub space: SpaceSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub martingale: MartingaleSection,
    #[serde(default)]
    pub converge: ConvergeSection,
    #[serde(default)]
    pub proptest: ProptestSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contract {
    pub strike: f64,
    pub maturity: f64,
    #[serde(default)]
    pub t0: f64,
}

/// Where the initial forward curve comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CurveSource {
    Flat {
        level: f64,
    },
    /// Two-column `x,rate` file, relative paths resolved against the config.
    Csv {
        path: PathBuf,
    },
    /// `β0 + β1 e^{-x/τ} + β2 (x/τ) e^{-x/τ}`.
    NelsonSiegel {
        beta0: f64,
        beta1: f64,
        beta2: f64,
        #[serde(default = "default_ns_tau")]
        tau: f64,
    },
}

fn default_ns_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: VolatilityKind,
    pub sigma0: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    1.0
}

/// Unset fields follow the maturity-dependent defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceSection {
    pub w_exponent: Option<f64>,
    pub x_max: Option<f64>,
    pub n_x: Option<usize>,
    pub basis_size: Option<usize>,
    /// Explicit `λ_i`; defaults to `2^{-i}`.
    pub q_eigenvalues: Option<Vec<f64>>,
    /// Warn when `Σ λ_i ‖φ_i'‖²_w` exceeds this (default 1e3).
    pub trace_cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub k: f64,
    pub alpha: f64,
    pub n: usize,
    /// `ε_n = epsilon_scale / n`.
    pub epsilon_scale: f64,
    pub raw_obstacle: bool,
}

impl Default for ChainSection {
    fn default() -> Self {
        let c = ChainConfig::default();
        ChainSection { k: c.k, alpha: c.alpha, n: c.n, epsilon_scale: c.epsilon.scale, raw_obstacle: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSection {
    pub grid: GridSettings,
    pub solver: SolverSettings,
    /// Exercise-rule gap as a fraction of the strike.
    pub tol_gap_rel: f64,
}

impl Default for PdeSection {
    fn default() -> Self {
        PdeSection { grid: GridSettings::default(), solver: SolverSettings::default(), tol_gap_rel: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub n_paths: usize,
    pub dt: f64,
    pub degree: usize,
    pub antithetic: bool,
}

impl Default for McSection {
    fn default() -> Self {
        let c = LsmcConfig::default();
        McSection { n_paths: c.n_paths, dt: c.dt, degree: c.degree, antithetic: c.antithetic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MartingaleSection {
    pub enabled: bool,
    pub n_paths: usize,
    pub dt: f64,
    pub antithetic: bool,
    pub n_checkpoints: usize,
}

impl Default for MartingaleSection {
    fn default() -> Self {
        let c = MartingaleConfig::default();
        MartingaleSection {
            enabled: true,
            n_paths: c.n_paths,
            dt: c.dt,
            antithetic: c.antithetic,
            n_checkpoints: c.n_checkpoints,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeSection {
    pub k: Vec<f64>,
    pub alpha: Vec<f64>,
    pub n: Vec<usize>,
    /// Coarsest grid of the refinement study.
    pub grid_base: GridSettings,
    pub grid_levels: usize,
    /// Galerkin dimension used by the grid study.
    pub grid_n: usize,
    pub richardson_band: [f64; 2],
    /// Allowed relative misfit of the `c/k` model on the k axis.
    pub k_fit_tolerance: f64,
}

impl Default for ConvergeSection {
    fn default() -> Self {
        ConvergeSection {
            k: vec![4.0, 16.0, 64.0, 256.0],
            alpha: vec![10.0, 50.0, 250.0],
            n: vec![1, 2],
            grid_base: GridSettings { n_state_1d: 51, n_state_2d: [51, 21], n_time: 25, ..GridSettings::default() },
            grid_levels: 3,
            grid_n: 1,
            richardson_band: [2.5, 5.5],
            k_fit_tolerance: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProptestSection {
    pub n_pairs: usize,
    pub n_mollifier_samples: usize,
    pub mollifier_k: Vec<f64>,
    pub quadrature_slack: f64,
    pub gaussian_samples: usize,
    pub gaussian_tolerance: f64,
    /// Overrides for the bundled regularity probe set and frozen constants.
    pub regularity_probes: Option<PathBuf>,
    pub regularity_constants: Option<PathBuf>,
}

impl Default for ProptestSection {
    fn default() -> Self {
        ProptestSection {
            n_pairs: 1000,
            n_mollifier_samples: 10_000,
            mollifier_k: vec![10.0, 100.0, 1000.0],
            quadrature_slack: 1e-6,
            gaussian_samples: 100_000,
            gaussian_tolerance: 0.05,
            regularity_probes: None,
            regularity_constants: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_paths: usize,
    pub dt: f64,
    pub antithetic: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { n_paths: 1000, dt: 1.0 / 200.0, antithetic: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Number of time slices written to the surface CSV.
    pub surface_slices: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { surface_slices: 11 }
    }
}

impl RunConfig {
    /// Reads, parses and validates; relative file references are resolved
    /// against the config's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config(format!("invalid config: {e}")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let CurveSource::Csv { path } = &mut self.curve {
            fix(path);
        }
        if let Some(p) = &mut self.proptest.regularity_probes {
            fix(p);
        }
        if let Some(p) = &mut self.proptest.regularity_constants {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.contract;
        if !(c.strike > 0.0 && c.strike < 1.0) {
            return Err(CliError::config(format!("strike must lie in (0, 1), got {}", c.strike)));
        }
        if !(c.t0 >= 0.0 && c.maturity > c.t0 && c.maturity.is_finite()) {
            return Err(CliError::config(format!("need T > t0 >= 0, got T = {}, t0 = {}", c.maturity, c.t0)));
        }
        if let CurveSource::Csv { path } = &self.curve {
            if !path.is_file() {
                return Err(CliError::config(format!("curve file not found: {}", path.display())));
            }
        }
        for (name, p) in [
            ("regularity probe", &self.proptest.regularity_probes),
            ("regularity constants", &self.proptest.regularity_constants),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(CliError::config(format!("{name} file not found: {}", p.display())));
                }
            }
        }
        if !(self.model.sigma0 >= 0.0 && self.model.kappa > 0.0) {
            return Err(CliError::config("model needs sigma0 >= 0 and kappa > 0"));
        }
        if self.chain.k < 1.0 || self.chain.alpha <= 0.0 || self.chain.epsilon_scale < 0.0 {
            return Err(CliError::config("chain needs k >= 1, alpha > 0 and epsilon_scale >= 0"));
        }
        if !(1..=2).contains(&self.chain.n) {
            return Err(CliError::config(format!("chain.n must be 1 or 2, got {}", self.chain.n)));
        }
        self.space_config().validate(Some(c.maturity)).map_err(CliError::from)?;
        self.lsmc(self.seed).validate().map_err(CliError::from)?;
        if self.output.surface_slices < 2 {
            return Err(CliError::config("output.surface_slices must be at least 2"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective configuration,
    /// leaving out the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let canonical = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn space_config(&self) -> SpaceConfig {
        let d = SpaceConfig::for_maturity(self.contract.maturity);
        let s = &self.space;
        let basis_size = s.basis_size.unwrap_or(d.basis_size);
        SpaceConfig {
            w_exponent: s.w_exponent.unwrap_or(d.w_exponent),
            x_max: s.x_max.unwrap_or(d.x_max),
            n_x: s.n_x.unwrap_or(d.n_x),
            basis_size,
            q_eigenvalues: s.q_eigenvalues.clone().unwrap_or_else(|| geometric_eigenvalues(basis_size)),
        }
    }

    pub fn basis(&self) -> Result<Arc<BasisSet>, CliError> {
        Ok(Arc::new(build_basis(&self.space_config())?))
    }

    pub fn initial_curve(&self, basis: &BasisSet) -> Result<ForwardCurve, CliError> {
        let grid = basis.grid().clone();
        let curve = match &self.curve {
            CurveSource::Flat { level } => ForwardCurve::constant(grid, *level)?,
            CurveSource::Csv { path } => {
                let file = fs::File::open(path)
                    .map_err(|_| CliError::config(format!("curve file not found: {}", path.display())))?;
                read_curve_csv(file, grid)?
            }
            CurveSource::NelsonSiegel { beta0, beta1, beta2, tau } => {
                if !(*tau > 0.0) {
                    return Err(CliError::config("Nelson-Siegel tau must be positive"));
                }
                ForwardCurve::from_fn(grid, |x| {
                    let e = (-x / tau).exp();
                    beta0 + beta1 * e + beta2 * (x / tau) * e
                })?
            }
        };
        Ok(curve)
    }

    pub fn problem(&self, basis: &BasisSet) -> Result<PricingProblem, CliError> {
        let c = &self.contract;
        Ok(PricingProblem::new(c.strike, c.maturity, c.t0, self.initial_curve(basis)?)?)
    }

    pub fn model(&self) -> VolatilityModel {
        VolatilityModel { kind: self.model.kind, sigma0: self.model.sigma0, kappa: self.model.kappa }
    }

    pub fn chain(&self) -> ChainConfig {
        ChainConfig {
            k: self.chain.k,
            alpha: self.chain.alpha,
            n: self.chain.n,
            epsilon: EpsilonRule { scale: self.chain.epsilon_scale },
            raw_obstacle: self.chain.raw_obstacle,
        }
    }

    pub fn lsmc(&self, seed: u64) -> LsmcConfig {
        let m = &self.mc;
        LsmcConfig { n_paths: m.n_paths, dt: m.dt, degree: m.degree, seed, antithetic: m.antithetic }
    }

    pub fn martingale_config(&self) -> MartingaleConfig {
        let m = &self.martingale;
        MartingaleConfig {
            n_paths: m.n_paths,
            dt: m.dt,
            seed: self.seed.wrapping_add(1),
            antithetic: m.antithetic,
            n_checkpoints: m.n_checkpoints,
        }
    }

    pub fn tol_gap(&self) -> f64 {
        self.pde.tol_gap_rel * self.contract.strike
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [contract]
        strike = 0.95
        maturity = 1.0

        [curve]
        kind = "flat"
        level = 0.05

        [model]
        kind = "deterministic-exp"
        sigma0 = 0.02
    "#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.seed, 1);
        assert_eq!(c.chain, ChainSection::default());
        assert_eq!(c.space_config(), SpaceConfig::for_maturity(1.0));
        assert_eq!(c.model(), VolatilityModel::deterministic_exp(0.02, 1.0));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn schema_violations_are_rejected() {
        assert!(RunConfig::parse(&format!("{MINIMAL}\nbogus = 1")).is_err());
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.contract.strike = 1.2;
        assert!(c.validate().is_err());
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.contract.t0 = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::parse(MINIMAL).unwrap();
        c.curve = CurveSource::Csv { path: PathBuf::from("/nonexistent/curve.csv") };
        let e = c.validate().unwrap_err();
        assert_eq!(e.code, crate::ExitCode::ConfigOrIo);
        assert!(e.message.contains("curve file not found"));
    }

    #[test]
    fn nelson_siegel_curve() {
        let text = MINIMAL.replace("kind = \"flat\"\n        level = 0.05", "kind = \"nelson-siegel\"\nbeta0 = 0.04\nbeta1 = -0.01\nbeta2 = 0.02");
        let c = RunConfig::parse(&text).unwrap();
        let basis = c.basis().unwrap();
        let h = c.initial_curve(&basis).unwrap();
        assert!((h.spot() - 0.03).abs() < 1e-12);
        let x = 1.0;
        assert!((h.at(x) - (0.04 - 0.01 * (-x).exp() + 0.02 * x * (-x).exp())).abs() < 1e-4);
    }
}
