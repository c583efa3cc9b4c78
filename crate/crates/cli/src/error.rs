use serde_json::json;
use thiserror::Error;

/// Failures of the command-line layer, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },

    #[error("schema error at {path}: {msg}")]
    Schema { path: String, msg: String },

    #[error("range error at {path}: {msg}")]
    Range { path: String, msg: String },

    #[error("I/O error at {path}: {msg}")]
    Io { path: String, msg: String },

    #[error("unknown plot-data kind {kind:?}; expected one of {expected}")]
    UnknownKind { kind: String, expected: String },

    #[error("optimizer did not converge: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Core(#[from] fwspde_core::Error),
}

impl CliError {
    pub fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn range(path: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Range {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            msg: err.to_string(),
        }
    }

    /// 0 ok, 2 validation, 3 I/O, 4 numerical failure, 5 budget rejection.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. }
            | CliError::Schema { .. }
            | CliError::Range { .. }
            | CliError::UnknownKind { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::NotConverged(_) => 4,
            CliError::Core(fwspde_core::Error::Budget(_)) => 5,
            CliError::Core(e) if e.is_numerical() => 4,
            CliError::Core(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Parse { .. } => "ParseError",
            CliError::Schema { .. } => "SchemaError",
            CliError::Range { .. } => "RangeError",
            CliError::Io { .. } => "IoError",
            CliError::UnknownKind { .. } => "UnknownKind",
            CliError::NotConverged(_) => "NotConverged",
            CliError::Core(e) => match e {
                fwspde_core::Error::InvalidInput(_) => "InvalidInput",
                fwspde_core::Error::BasisMismatch(_) => "BasisMismatch",
                fwspde_core::Error::DimensionMismatch { .. } => "DimensionMismatch",
                fwspde_core::Error::UnderResolvedGrid { .. } => "UnderResolvedGrid",
                fwspde_core::Error::PicardDiverged { .. } => "PicardDiverged",
                fwspde_core::Error::CutoffActive { .. } => "CutoffActive",
                fwspde_core::Error::BlowUp { .. } => "BlowUp",
                fwspde_core::Error::InsufficientSamples => "InsufficientSamples",
                fwspde_core::Error::AllCensored { .. } => "AllCensored",
                fwspde_core::Error::Budget(_) => "BudgetRejected",
            },
        }
    }

    /// Machine-readable error report.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({
            "error": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        match self {
            CliError::Schema { path, .. } | CliError::Range { path, .. } | CliError::Io { path, .. } => {
                v["path"] = json!(path);
            }
            CliError::Parse { line, column, .. } => {
                v["line"] = json!(line);
                v["column"] = json!(column);
            }
            _ => {}
        }
        v
    }
}
