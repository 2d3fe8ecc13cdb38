use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flate2::read::GzDecoder;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hjmbond"));
    c.env("RUST_LOG", "warn");
    c
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// A small stochastic config written into `dir`.
fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        format!(
            r#"
            [contract]
            strike = 0.95
            maturity = 1.0
            [curve]
            kind = "flat"
            level = 0.05
            [model]
            kind = "deterministic-exp"
            sigma0 = 0.02
            [pde.grid]
            n_state_2d = [51, 21]
            n_time = 50
            [mc]
            n_paths = 2000
            [martingale]
            n_paths = 200
            dt = 0.01
            [simulate]
            n_paths = 20
            dt = 0.05
            {extra}
            "#
        ),
    )
    .unwrap();
    path
}

#[test]
fn deterministic_price_from_both_engines() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["price"], &configs().join("deterministic.toml"), out.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&out.path().join("summary.json"));
    for key in ["price_pde", "price_lsmc_out"] {
        let p = s[key].as_f64().unwrap();
        assert!((p - 0.0813).abs() < 1e-3, "{key} = {p}");
    }
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    for f in ["surface.csv", "boundary.csv"] {
        let text = fs::read_to_string(out.path().join(f)).unwrap();
        assert!(text.lines().count() > 2, "{f}");
    }
    let header = fs::read_to_string(out.path().join("surface.csv")).unwrap();
    assert!(header.starts_with("t,z1,V,Psi,exercised\n"));
}

#[test]
fn same_seed_gives_identical_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&["price"], &cfg, &a).status.success());
    assert!(run(&["price"], &cfg, &b).status.success());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
    let c = dir.path().join("c");
    assert!(run(&["price", "--seed", "9"], &cfg, &c).status.success());
    let (sa, sc) = (json(&a.join("summary.json")), json(&c.join("summary.json")));
    assert_ne!(sa["config_hash"], sc["config_hash"]);
    assert_eq!(sa["price_pde"], sc["price_pde"]);
    assert_ne!(sa["price_lsmc_out"], sc["price_lsmc_out"]);
}

#[test]
fn missing_curve_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[contract]\nstrike = 0.9\nmaturity = 1.0\n[curve]\nkind = \"csv\"\npath = \"nowhere.csv\"\n\
         [model]\nkind = \"deterministic-exp\"\nsigma0 = 0.01\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&["price"], &cfg, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("curve file not found"));
    let e = json(&out.join("error.json"));
    assert!(e["error"].as_str().unwrap().contains("curve file not found"));
    assert_eq!(e["exit_code"], 2);
}

#[test]
fn invalid_contract_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "").to_string_lossy().to_string();
    let text = fs::read_to_string(&cfg).unwrap().replace("strike = 0.95", "strike = 1.05");
    fs::write(&cfg, text).unwrap();
    assert_eq!(run(&["price"], Path::new(&cfg), &dir.path().join("o")).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    assert_eq!(run(&["proptest", ""], &cfg, dir.path()).status.code(), Some(64));
    assert_eq!(run(&["converge", "sigma"], &cfg, dir.path()).status.code(), Some(64));
    assert_eq!(bin().arg("price").output().unwrap().status.code(), Some(64));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn csv_and_nelson_siegel_configs_load() {
    for name in ["csv_curve.toml", "nelson_siegel.toml", "default.toml"] {
        hjm_cli::RunConfig::load(&configs().join(name)).unwrap();
    }
}

#[test]
fn trend_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "[converge]\ngrid_levels = 1");
    let out = dir.path().join("out");
    let o = run(&["converge", "grid"], &cfg, &out);
    assert_eq!(o.status.code(), Some(3));
    let text = fs::read_to_string(out.join("converge_grid.csv")).unwrap();
    assert!(text.starts_with("axis_value,price,max_change\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn alpha_study_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = run(&["converge", "alpha"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("converge_alpha.json"));
    assert_eq!(r["points"].as_array().unwrap().len(), 3);
}

#[test]
fn suites_report_junit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "[proptest]\ngaussian_samples = 20000\ngaussian_tolerance = 0.1");
    let out = dir.path().join("out");
    for suite in ["payoff", "gaussian"] {
        let o = run(&["proptest", suite], &cfg, &out);
        assert!(o.status.success(), "{suite}: {}", String::from_utf8_lossy(&o.stderr));
        let xml = fs::read_to_string(out.join(format!("proptest_{suite}.xml"))).unwrap();
        assert!(xml.contains("failures=\"0\""));
        assert!(fs::read_to_string(out.join(format!("proptest_{suite}.txt"))).unwrap().contains("0 failed"));
    }
}

#[test]
fn violated_property_exits_1_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let constants = dir.path().join("tight.toml");
    fs::write(&constants, "beta = 1.0\nl_space = 1e-12\nl_time = 1e-12\n").unwrap();
    let cfg = small_config(dir.path(), &format!("[proptest]\nregularity_constants = {:?}", constants.to_string_lossy()));
    let out = dir.path().join("out");
    let o = run(&["proptest", "regularity"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    let txt = fs::read_to_string(out.join("proptest_regularity.txt")).unwrap();
    assert!(txt.contains("FAIL space Lipschitz"));
    assert!(txt.contains("witness: probe"));
    assert!(fs::read_to_string(out.join("proptest_regularity.xml")).unwrap().contains("<failure"));
}

#[test]
fn refit_writes_constants_that_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    assert!(run(&["proptest", "regularity", "--refit"], &cfg, &out).status.success());
    let c: toml::Value = toml::from_str(&fs::read_to_string(out.join("regularity_constants.toml")).unwrap()).unwrap();
    assert!(c["l_space"].as_float().unwrap() > 0.0);
}

#[test]
fn simulate_dumps_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    let o = run(&["simulate", "--dump-paths", "--threads", "1"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("paths_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 21);
    let mut text = String::new();
    GzDecoder::new(fs::File::open(out.join("paths.csv.gz")).unwrap()).read_to_string(&mut text).unwrap();
    assert!(text.starts_with("path,step,t,spot,bond,log_discount\n"));
    assert_eq!(text.lines().count(), 1 + 20 * 21);
    // first row is the initial state: flat 5% curve, bond e^{-0.05}
    let first: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((first[3] - 0.05).abs() < 1e-12);
    assert!((first[4] - (-0.05f64).exp()).abs() < 1e-6);
}
