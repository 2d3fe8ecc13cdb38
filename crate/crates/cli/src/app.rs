//! Argument parsing and exit-code plumbing for the `hjmbond` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::error;

use crate::commands::{run_converge, run_price, run_proptest, run_simulate};
use crate::report::write_error;
use crate::study::Axis;
use crate::suites::Suite;
use crate::{CliError, ExitCode, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hjmbond", version, about = "American bond puts under Musiela-HJM dynamics")]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Overrides `out` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for path simulation (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// PDE chain, LSMC oracle and martingale diagnostic.
    Price,
    /// Re-solve along one parameter axis and check the trend.
    Converge {
        #[arg(value_enum)]
        axis: Axis,
    },
    /// Run one invariant suite.
    Proptest {
        #[arg(value_enum)]
        suite: Suite,
        /// Refit the regularity constants and write them to the output directory.
        #[arg(long)]
        refit: bool,
    },
    /// Simulate full-model paths.
    Simulate {
        /// Also write every path to `paths.csv.gz`.
        #[arg(long)]
        dump_paths: bool,
    },
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::Usage.code() } else { ExitCode::Ok.code() };
        }
    };
    let fallback_out = cli.out.clone();
    match execute(cli) {
        Ok(()) => ExitCode::Ok.code(),
        Err((err, out)) => {
            error!("{err}");
            let json = serde_json::json!({ "error": err.message, "kind": err.code, "exit_code": err.code.code() });
            eprintln!("{json}");
            if let Some(dir) = out.or(fallback_out) {
                let _ = write_error(&dir, &err);
            }
            err.code.code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), (CliError, Option<PathBuf>)> {
    let Some(path) = &cli.config else {
        return Err((CliError::new(ExitCode::Usage, "--config is required"), None));
    };
    let mut cfg = RunConfig::load(path).map_err(|e| (e, None))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    let out = Some(cfg.out.clone());
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err((CliError::new(ExitCode::Usage, "--threads must be positive"), out));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match cli.command {
        Command::Price => run_price(&cfg).map(|_| ()),
        Command::Converge { axis } => run_converge(&cfg, axis).map(|_| ()),
        Command::Proptest { suite, refit } => run_proptest(&cfg, suite, refit).map(|_| ()),
        Command::Simulate { dump_paths } => run_simulate(&cfg, dump_paths),
    };
    result.map_err(|e| (e, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_are_64() {
        assert_eq!(main_with_args(["hjmbond", "proptest", ""]), 64);
        assert_eq!(main_with_args(["hjmbond", "converge", "beta"]), 64);
        assert_eq!(main_with_args(["hjmbond", "price"]), 64);
        assert_eq!(main_with_args(["hjmbond"]), 64);
    }

    #[test]
    fn missing_config_file_is_2() {
        assert_eq!(main_with_args(["hjmbond", "price", "--config", "/nonexistent/run.toml"]), 2);
    }
}
