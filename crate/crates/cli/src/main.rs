//! `condenser`: runs scenario files through the solver and its checks.
//!
//! Exit status: 0 success, 2 unreadable or invalid config, 3 infeasible
//! constraints, 4 solver did not converge, 5 internal error. Failures print
//! one line `error code=<n> kind=<kind> message="..."` on stderr and leave no
//! output files behind.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod output;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use condenser_core::{Error, Execution};
use config::{Config, Overrides};
use pipeline::Failure;

#[derive(Parser)]
#[command(name = "condenser", version, about = "Constrained minimum-energy problems for discretized condensers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the Riesz-form Gauss functional
    Solve(Run),
    /// Solve in the Green form on the positive plates and lift back
    SolveGreen(Run),
    /// Sweep point charges onto an exterior node set
    Balayage(Run),
    /// Equilibrium measure and capacity of one plate
    Capacity(Run),
    /// Solve and run every applicable optimality and structure check
    Verify(Run),
    /// Energies of the exhausting disk stages and the bounded cap sequence
    Sweep(Run),
    /// Built-in scenario run end to end through `verify`
    Example {
        which: ExampleName,
        #[command(flatten)]
        flags: Flags,
    },
}

#[derive(Args)]
struct Run {
    /// TOML scenario file
    config: PathBuf,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExampleName {
    /// ball and its complement, Riesz order 1.5
    Ex1,
    /// stacked disks over a half-space, Newtonian
    Ex2,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecFlag {
    Sequential,
    Parallel,
}

#[derive(Args, Default)]
struct Flags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol_kkt: Option<f64>,
    /// cut-off radius of unbounded plates
    #[arg(long)]
    truncation: Option<f64>,
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    exec: Option<ExecFlag>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            tol_kkt: self.tol_kkt,
            truncation: self.truncation,
            resolution: self.resolution,
            max_iters: self.max_iters,
            out_dir: self.out_dir.clone(),
            exec: self.exec.map(|e| match e {
                ExecFlag::Sequential => Execution::Sequential,
                ExecFlag::Parallel => Execution::Parallel,
            }),
        }
    }
}

type Stage = fn(&Config) -> Result<pipeline::Output, Failure>;

fn classify(f: &Failure) -> (u8, &'static str) {
    match f {
        Failure::Config(_) => (2, "config"),
        Failure::Internal(_) => (5, "internal"),
        Failure::Module(e) => match e {
            Error::Infeasible(_) => (3, "infeasible"),
            Error::SigmaDomination { .. } => (3, "sigma-domination"),
            Error::SolverDivergence(_) => (4, "divergence"),
            Error::NotPositiveDefinite { .. } => (5, "not-positive-definite"),
            Error::InvalidSpec(_) => (2, "invalid-spec"),
            Error::EmptyPlate { .. } => (2, "empty-plate"),
            Error::ZeroSeparation { .. } => (2, "zero-separation"),
            Error::DuplicateNode { .. } => (2, "duplicate-node"),
            Error::Alignment { .. } => (2, "alignment"),
            Error::UnsupportedKernel(_) => (2, "unsupported-kernel"),
            Error::WrongScenario(_) => (2, "wrong-scenario"),
        },
    }
}

fn message(f: &Failure) -> String {
    match f {
        Failure::Config(m) | Failure::Internal(m) => m.clone(),
        Failure::Module(e) => e.to_string(),
    }
}

fn fail(code: u8, kind: &str, msg: &str) -> ExitCode {
    let one_line = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error code={code} kind={kind} message={one_line:?}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail(2, "usage", first);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };

    let (name, cfg, flags, run): (&str, Result<Config, String>, &Flags, Stage) = match &cli.command {
        Command::Solve(r) => ("solve", config::load(&r.config), &r.flags, pipeline::solve),
        Command::SolveGreen(r) => ("solve-green", config::load(&r.config), &r.flags, pipeline::solve_green),
        Command::Balayage(r) => ("balayage", config::load(&r.config), &r.flags, pipeline::balayage),
        Command::Capacity(r) => ("capacity", config::load(&r.config), &r.flags, pipeline::capacity),
        Command::Verify(r) => ("verify", config::load(&r.config), &r.flags, pipeline::verify),
        Command::Sweep(r) => ("sweep", config::load(&r.config), &r.flags, pipeline::sweep),
        Command::Example { which, flags } => {
            let key = match which {
                ExampleName::Ex1 => "ex1",
                ExampleName::Ex2 => "ex2",
            };
            ("example", config::builtin(key).ok_or_else(|| format!("unknown example {key}")), flags, pipeline::verify)
        }
    };
    let mut cfg = match cfg {
        Ok(c) => c,
        Err(m) => return fail(2, "config", &m),
    };
    cfg.apply(&flags.overrides());

    let result = run(&cfg).and_then(|out| output::write(name, &cfg, &out).map(|()| out.converged));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => fail(4, "not-converged", &format!("solver stopped before meeting its tolerances; outputs written to {}", cfg.output.dir.display())),
        Err(f) => {
            let (code, kind) = classify(&f);
            fail(code, kind, &message(&f))
        }
    }
}
