//! Failures, exit codes, the run manifest and artifact writing.

use std::fs;
use std::path::Path;

use mpsh_core::Error;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Parse,
    Validation,
    Solver,
    Invariant,
}

impl FailureKind {
    pub fn exit_code(self) -> u8 {
        match self {
            FailureKind::Parse => 2,
            FailureKind::Validation => 3,
            FailureKind::Solver => 4,
            FailureKind::Invariant => 5,
        }
    }
}

/// Machine-readable error report, also written as `error.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub exit_code: u8,
    pub module: &'static str,
    pub operation: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(
        kind: FailureKind,
        module: &'static str,
        operation: &'static str,
        message: impl Into<String>,
    ) -> Self {
        Self {
            kind,
            exit_code: kind.exit_code(),
            module,
            operation,
            message: message.into(),
        }
    }

    pub fn from_core(module: &'static str, operation: &'static str, err: &Error) -> Self {
        Self::new(classify(err), module, operation, err.to_string())
    }
}

/// Maps library errors onto the exit-code classes.
pub fn classify(err: &Error) -> FailureKind {
    match err {
        Error::Io(_) | Error::Format(_) => FailureKind::Parse,
        Error::NewtonDiverged { .. }
        | Error::ConeEscape { .. }
        | Error::LinearSolveFailed { .. }
        | Error::PathStepFailed { .. }
        | Error::DirichletFailure { .. }
        | Error::ScheduleExhausted(_) => FailureKind::Solver,
        _ => FailureKind::Validation,
    }
}

/// One output file and the operation that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub module: &'static str,
    pub operation: &'static str,
}

pub struct Artifact {
    pub record: ArtifactRecord,
    pub contents: Vec<u8>,
}

impl Artifact {
    pub fn new(
        file: &str,
        module: &'static str,
        operation: &'static str,
        contents: impl Into<Vec<u8>>,
    ) -> Self {
        Self {
            record: ArtifactRecord {
                file: file.to_string(),
                module,
                operation,
            },
            contents: contents.into(),
        }
    }

    pub fn json(
        file: &str,
        module: &'static str,
        operation: &'static str,
        value: &impl Serialize,
    ) -> Self {
        let mut text = serde_json::to_string_pretty(value).expect("report serialises");
        text.push('\n');
        Self::new(file, module, operation, text)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub config_path: Option<String>,
    pub output_dir: String,
    pub seed: u64,
    pub grid_override: Option<usize>,
    /// `sha256:` digest of the raw config bytes followed by the seed.
    pub input_hash: String,
    pub resolved_config: Option<Value>,
    pub artifacts: Vec<ArtifactRecord>,
    pub status: &'static str,
    pub exit_code: u8,
}

pub fn input_hash(config: &[u8], seed: u64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config);
    hasher.update(seed.to_le_bytes());
    let digest = hasher.finalize();
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

pub fn write_artifact(dir: &Path, file: &str, contents: &[u8]) -> Result<(), Failure> {
    fs::write(dir.join(file), contents).map_err(|e| {
        Failure::new(
            FailureKind::Invariant,
            "cli",
            "write_artifact",
            format!("cannot write {file}: {e}"),
        )
    })
}

/// Shortest round-trip form, switching to exponent notation for very small
/// or very large magnitudes.
pub fn num(value: f64) -> String {
    let magnitude = value.abs();
    if value != 0.0 && value.is_finite() && !(1e-4..1e16).contains(&magnitude) {
        format!("{value:e}")
    } else {
        value.to_string()
    }
}

/// Formats an optional float for CSV, empty when absent.
pub fn opt(value: Option<f64>) -> String {
    value.map(num).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        let diverged = Error::NewtonDiverged {
            iterations: 3,
            residual: 1.0,
        };
        assert_eq!(classify(&diverged).exit_code(), 4);
        let wrapped = Error::DirichletFailure {
            index: 2,
            source: Box::new(diverged),
        };
        assert_eq!(classify(&wrapped).exit_code(), 4);
        assert_eq!(
            classify(&Error::OrderOutOfRange { m: 4, n: 2 }).exit_code(),
            3
        );
        assert_eq!(classify(&Error::Format("bad row".into())).exit_code(), 2);
        assert_eq!(FailureKind::Invariant.exit_code(), 5);
    }

    #[test]
    fn numbers_round_trip() {
        for x in [
            0.0,
            -0.0,
            1.0,
            2.0 / 3.0,
            1e-300,
            -7.99e-15,
            1e20,
            12345.678,
        ] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits(), "{x}");
        }
        assert_eq!(num(1e-15), "1e-15");
        assert_eq!(opt(None), "");
    }

    #[test]
    fn hash_covers_seed() {
        assert_ne!(input_hash(b"{}", 1), input_hash(b"{}", 2));
        assert_eq!(input_hash(b"{}", 1), input_hash(b"{}", 1));
    }
}
