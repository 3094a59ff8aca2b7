//! Spec-file driven front end for `nbody-core`.
//!
//! ```text
//! nbody <command> --spec <file> [--out <dir>] [--seed <u64>] [--segments <n>] [--quiet]
//! ```
//!
//! Exit codes: 0 ok, 2 spec error, 3 non-convergence (outputs still
//! written), 4 I/O error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use thiserror::Error;

mod commands;
pub mod experiments;
pub mod report;
pub mod spec;

pub use report::{parse_path_csv, parse_traj_csv, Summary};
pub use spec::ExperimentSpec;

/// Failure classes, each with its exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("spec error: {0}")]
    Spec(String),
    #[error("not converged: {0}")]
    NonConvergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<nbody_core::Error> for CliError {
    fn from(e: nbody_core::Error) -> Self {
        match e {
            nbody_core::Error::FitRejected(m) => CliError::NonConvergence(format!("fit rejected: {m}")),
            other => CliError::Spec(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nbody", version, about = "Free time minimizers of the N-body problem")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the action between two configurations.
    Minimize(CommonArgs),
    /// Integrate a motion and write its trajectory.
    Flow(CommonArgs),
    /// Classify the asymptotics of a motion.
    Classify(CommonArgs),
    /// Fit the constants of the minimal-action bound.
    FitBounds(CommonArgs),
    /// Check the no-interaction bound and the comparison chain.
    VerifyBounds(CommonArgs),
    /// Run the energy-level sweep of free-time solves.
    Sweep(CommonArgs),
}

impl Command {
    fn parts(&self) -> (&'static str, &CommonArgs) {
        match self {
            Command::Minimize(a) => ("minimize", a),
            Command::Flow(a) => ("flow", a),
            Command::Classify(a) => ("classify", a),
            Command::FitBounds(a) => ("fit-bounds", a),
            Command::VerifyBounds(a) => ("verify-bounds", a),
            Command::Sweep(a) => ("sweep", a),
        }
    }
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory; overrides the spec's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed; overrides the spec's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Path segments; overrides `[solver] segments`.
    #[arg(long)]
    pub segments: Option<usize>,
    /// Do not print the summary.
    #[arg(long)]
    pub quiet: bool,
}

/// Default output directory when neither `--out` nor the spec's `out` is set.
pub const DEFAULT_OUT: &str = "nbody-out";

/// Runs one command. Outputs are written before a non-convergence error is
/// returned.
pub fn run(cli: &Cli) -> Result<Summary, CliError> {
    let (command, args) = cli.command.parts();
    let bytes = std::fs::read(&args.spec)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", args.spec.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Spec("line 1: spec is not valid UTF-8".to_string()))?;
    let base = args
        .spec
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut spec = ExperimentSpec::parse(&text, &base)?;
    if spec.payload.command() != command {
        return Err(CliError::Spec(format!(
            "command {command} does not match the spec's [{}] payload",
            spec.payload.command()
        )));
    }
    if let Some(s) = args.seed {
        spec.seed = s;
        spec.solve.seed = s;
    }
    if let Some(n) = args.segments {
        if n == 0 {
            return Err(CliError::Spec("--segments must be positive".to_string()));
        }
        spec.solve.segments = n;
    }
    let out = args
        .out
        .clone()
        .or_else(|| spec.out.clone().map(|o| base.join(o)))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    let mut summary = Summary::new();
    summary.put("command", command);
    summary.put("version", nbody_core::VERSION);
    summary.put("spec_sha256", hex::encode(Sha256::digest(&bytes)));
    summary.put("seed", spec.seed);
    let (mut artifacts, outcome) = commands::execute(&spec, &mut summary)?;
    summary.put("status", if outcome.is_ok() { "ok" } else { "not_converged" });
    artifacts.add("summary.txt", summary.render());
    artifacts.write(&out)?;
    if !args.quiet {
        print!("{}", summary.render());
    }
    outcome.map(|_| summary)
}

/// `main` body: parses arguments, runs, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("nbody: {e}");
            e.exit_code()
        }
    }
}
