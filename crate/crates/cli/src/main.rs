//! `torus-spin`: Dirac operators on flat-chart tori from the command line.
//!
//! Exit codes: 0 when every check passes, 1 when a tolerance check fails or
//! a run breaks down numerically, 2 for configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use torus_spin::harness::{self, Outcome};
use torus_spin::{Error, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "torus-spin", version, about = "Dirac operators, spin structures and diffeomorphism lifts on tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Gamma matrices and their Clifford defects.
    Gammas,
    /// Sorted spectrum of −iD.
    Spectrum,
    /// Pulled-back metric and spin structures under the diffeomorphism.
    Pullback,
    /// Equivariance residuals, unitarity and spectrum distance.
    CheckEquivariance,
    /// Both lifts applied to one probe spinor.
    TwoLifts,
    /// Residual, Hermiticity defect and spectrum drift over several resolutions.
    Convergence,
}

#[derive(clap::Args, Debug, Default)]
struct Overrides {
    /// `key = value` config file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Points per axis.
    #[arg(long = "N", global = true)]
    points: Option<usize>,
    /// Comma-separated resolutions, e.g. `8,16,32`.
    #[arg(long = "Ns", global = true)]
    points_list: Option<String>,
    /// spectral, fd2 or fd4.
    #[arg(long, global = true)]
    scheme: Option<String>,
    /// Spin structure, e.g. `0.5,0`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    delta: Option<String>,
    #[arg(long, global = true)]
    metric: Option<String>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    diffeo: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Allow off-grid maps through trigonometric interpolation.
    #[arg(long, global = true)]
    interpolate: bool,
    /// Directory for CSV, JSON and spinor files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print the JSON report instead of the summary line.
    #[arg(long, global = true)]
    json: bool,
}

impl Overrides {
    fn config(&self) -> torus_spin::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let n = self.n.map(|v| v.to_string());
        let points = self.points.map(|v| v.to_string());
        let seed = self.seed.map(|v| v.to_string());
        let out = self.out.as_ref().map(|p| p.display().to_string());
        let pairs = [
            ("n", n.as_deref()),
            ("N", points.as_deref()),
            ("N_list", self.points_list.as_deref()),
            ("scheme", self.scheme.as_deref()),
            ("delta", self.delta.as_deref()),
            ("metric", self.metric.as_deref()),
            ("diffeo", self.diffeo.as_deref()),
            ("seed", seed.as_deref()),
            ("interpolate", self.interpolate.then_some("true")),
            ("out", out.as_deref()),
        ];
        for (key, value) in pairs {
            if let Some(value) = value {
                cfg.override_with(key, value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(command: Command, cfg: &RunConfig) -> torus_spin::Result<Outcome> {
    match command {
        Command::Gammas => harness::run_gammas(cfg),
        Command::Spectrum => harness::run_spectrum(cfg),
        Command::Pullback => harness::run_pullback(cfg),
        Command::CheckEquivariance => harness::run_check_equivariance(cfg),
        Command::TwoLifts => harness::run_two_lifts(cfg),
        Command::Convergence => harness::run_convergence(cfg),
    }
}

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(if err.is_config_error() { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match cli.overrides.config() {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e),
    };
    let outcome = match run(cli.command, &cfg) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    if let Some(dir) = &cfg.out {
        if let Err(e) = outcome.write_to(dir) {
            return fail(&e);
        }
    }
    if cli.overrides.json {
        print!("{}", outcome.json);
    } else {
        println!("{} {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.summary);
    }
    if outcome.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
