//! Crate-wide error type.
//!
//! Errors split into two families that callers treat differently:
//! configuration/input problems (bad JSON, inconsistent dimensions,
//! out-of-domain arguments) and numerical failures detected mid-run
//! (non-finite states, factorization breakdowns). The CLI maps the
//! first family to exit code 1 and the second to exit code 2 with a
//! machine-readable diagnostic.

use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed or inconsistent configuration / constructor input.
    #[error("config error: {0}")]
    Config(String),

    /// Argument outside an operation's documented domain.
    #[error("domain error in {module}::{operation}: {message}")]
    Domain {
        module: &'static str,
        operation: &'static str,
        message: String,
    },

    /// Numerical failure detected while running (non-finite state,
    /// failed factorization, degenerate weights, ...).
    #[error("numerical failure in {module}::{operation}: {message}")]
    Numerical {
        module: &'static str,
        operation: &'static str,
        message: String,
        params: BTreeMap<String, String>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(module: &'static str, operation: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            module,
            operation,
            message: msg.into(),
        }
    }

    pub fn numerical(
        module: &'static str,
        operation: &'static str,
        msg: impl Into<String>,
        params: BTreeMap<String, String>,
    ) -> Self {
        Error::Numerical {
            module,
            operation,
            message: msg.into(),
            params,
        }
    }

    /// Process exit code the CLI should use for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 1,
            Error::Domain { .. } | Error::Numerical { .. } | Error::Io(_) | Error::Csv(_) => 2,
        }
    }

    /// Diagnostic record for the exit-code-2 JSON sidecar.
    pub fn diagnostic(&self) -> serde_json::Value {
        match self {
            Error::Config(m) => serde_json::json!({
                "kind": "config", "message": m,
            }),
            Error::Json(e) => serde_json::json!({
                "kind": "config", "message": e.to_string(),
            }),
            Error::Domain {
                module,
                operation,
                message,
            } => serde_json::json!({
                "kind": "domain", "module": module, "operation": operation,
                "message": message,
            }),
            Error::Numerical {
                module,
                operation,
                message,
                params,
            } => serde_json::json!({
                "kind": "numerical", "module": module, "operation": operation,
                "message": message, "params": params,
            }),
            Error::Io(e) => serde_json::json!({
                "kind": "io", "message": e.to_string(),
            }),
            Error::Csv(e) => serde_json::json!({
                "kind": "io", "message": e.to_string(),
            }),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
