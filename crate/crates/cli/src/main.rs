//! `mpsh`: cone tests, F_m evaluation, Dirichlet solves, regularisation
//! pipelines and the pointwise property suites from JSON configs.
//!
//! Every run writes `manifest.json` into the output directory. Failures also
//! write `error.json` and exit with 2 (config parse), 3 (validation),
//! 4 (solver or pipeline) or 5 (invariant violation).

mod commands;
mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::commands::Outcome;
use crate::config::{
    apply_grid_override, ConeConfig, EigenConfig, FmConfig, RegularizeConfig, SolveConfig,
    VerifySuiteConfig,
};
use crate::report::{input_hash, write_artifact, Failure, FailureKind, Manifest};

const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    Eigen,
    Cone,
    Fm,
    Solve,
    Regularize,
    VerifySuite,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Eigen => "eigen",
            Command::Cone => "cone",
            Command::Fm => "fm",
            Command::Solve => "solve",
            Command::Regularize => "regularize",
            Command::VerifySuite => "verify-suite",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mpsh",
    version,
    about = "m-positivity, F_m and regularisation toolkit"
)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON config for the command (optional for verify-suite).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, value_name = "DIR", default_value = "mpsh-out")]
    out: PathBuf,
    /// Seed for the randomised suites.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Replaces the grid's points per axis.
    #[arg(long, value_name = "K")]
    grid_override: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

struct Run {
    command: Command,
    config_bytes: Vec<u8>,
    resolved: Option<Value>,
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return ExitCode::from(if err.use_stderr() { 2 } else { 0 });
        }
    };
    let mut run = Run {
        command: cli.command,
        config_bytes: Vec::new(),
        resolved: None,
        seed: cli.seed.unwrap_or(DEFAULT_SEED),
    };
    let outcome = fs::create_dir_all(&cli.out)
        .map_err(|e| {
            Failure::new(
                FailureKind::Invariant,
                "cli",
                "create_output_dir",
                format!("cannot create {}: {e}", cli.out.display()),
            )
        })
        .and_then(|_| execute(&cli, &mut run));

    let (artifacts, summary, failure) = match outcome {
        Ok(Outcome {
            artifacts,
            summary,
            violation,
        }) => (artifacts, Some(summary), violation),
        Err(failure) => (Vec::new(), None, Some(failure)),
    };
    let mut failure = failure;
    let mut records = Vec::new();
    for artifact in &artifacts {
        match write_artifact(&cli.out, &artifact.record.file, &artifact.contents) {
            Ok(()) => records.push(artifact.record.clone()),
            Err(e) => {
                failure.get_or_insert(e);
            }
        }
    }
    let exit_code = failure.as_ref().map_or(0, |f| f.exit_code);
    let manifest = Manifest {
        command: run.command.name().to_string(),
        version: env!("CARGO_PKG_VERSION"),
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        output_dir: cli.out.display().to_string(),
        seed: run.seed,
        grid_override: cli.grid_override,
        input_hash: input_hash(&run.config_bytes, run.seed),
        resolved_config: run.resolved.take(),
        artifacts: records,
        status: if failure.is_some() { "failed" } else { "ok" },
        exit_code,
    };
    let _ = write_json(&cli.out, "manifest.json", &manifest);
    if let Some(f) = &failure {
        let _ = write_json(&cli.out, "error.json", f);
        eprintln!(
            "{}",
            serde_json::to_string(f).unwrap_or_else(|_| f.message.clone())
        );
    }
    if !cli.quiet {
        if let Some(line) = summary {
            println!("{}: {line}", run.command.name());
        }
    }
    ExitCode::from(exit_code)
}

fn write_json(dir: &Path, file: &str, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("manifest serialises");
    text.push('\n');
    write_artifact(dir, file, text.as_bytes())
}

fn execute(cli: &Cli, run: &mut Run) -> Result<Outcome, Failure> {
    let raw = read_config(cli, run)?;
    match cli.command {
        Command::Eigen => {
            let cfg: EigenConfig = typed(raw, run, "hermitian-core")?;
            commands::eigen(&cfg)
        }
        Command::Cone => {
            let cfg: ConeConfig = typed(raw, run, "positivity-cones")?;
            commands::cone(&cfg)
        }
        Command::Fm => {
            let cfg: FmConfig = typed(raw, run, "fm-operator")?;
            commands::fm(&cfg)
        }
        Command::Solve => {
            let mut cfg: SolveConfig = typed(raw, run, "elliptic-solver")?;
            apply_grid_override(&mut cfg.grid, cli.grid_override);
            run.resolved = serde_json::to_value(&cfg).ok();
            commands::solve(&cfg)
        }
        Command::Regularize => {
            let mut cfg: RegularizeConfig = typed(raw, run, "regularization-pipeline")?;
            apply_grid_override(&mut cfg.grid, cli.grid_override);
            run.resolved = serde_json::to_value(&cfg).ok();
            commands::regularize(&cfg)
        }
        Command::VerifySuite => {
            let mut cfg: VerifySuiteConfig = match raw {
                Some(_) => typed(raw, run, "cli")?,
                None => VerifySuiteConfig::default(),
            };
            run.seed = cli.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
            cfg.seed = Some(run.seed);
            run.resolved = serde_json::to_value(&cfg).ok();
            commands::verify_suite(run.seed)
        }
    }
}

/// Reads and syntax-checks the config; `None` when no config was given.
fn read_config(cli: &Cli, run: &mut Run) -> Result<Option<Value>, Failure> {
    let Some(path) = &cli.config else {
        if cli.command == Command::VerifySuite {
            return Ok(None);
        }
        return Err(Failure::new(
            FailureKind::Parse,
            "cli",
            "read_config",
            format!("{} requires --config", cli.command.name()),
        ));
    };
    let bytes = fs::read(path).map_err(|e| {
        Failure::new(
            FailureKind::Parse,
            "cli",
            "read_config",
            format!("cannot read {}: {e}", path.display()),
        )
    })?;
    run.config_bytes = bytes;
    serde_json::from_slice(&run.config_bytes)
        .map(Some)
        .map_err(|e| {
            Failure::new(
                FailureKind::Parse,
                "cli",
                "read_config",
                format!("{}: {e}", path.display()),
            )
        })
}

/// Decodes the schema of one command; the resolved form is recorded for the manifest.
fn typed<T: DeserializeOwned + Serialize>(
    raw: Option<Value>,
    run: &mut Run,
    module: &'static str,
) -> Result<T, Failure> {
    let raw = raw.unwrap_or(Value::Null);
    let cfg: T = serde_json::from_value(raw).map_err(|e| {
        Failure::new(
            FailureKind::Validation,
            module,
            "validate_config",
            e.to_string(),
        )
    })?;
    run.resolved = serde_json::to_value(&cfg).ok();
    Ok(cfg)
}
