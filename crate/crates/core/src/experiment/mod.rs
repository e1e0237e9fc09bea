//! Scenario configuration, batch execution and CSV/JSON reporting.
//!
//! Everything here is deterministic for a given config and seed except the
//! coding microbenchmark, which measures wall-clock throughput.

mod bench;
mod config;
mod run;
mod stats;
mod sweep;

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use bench::{
    coding_bench, ml_drop, tables, write_coding_bench, write_ml_drop, write_tables,
    CodingBenchConfig, CodingBenchRow, MlAccuracyRow, MlDropConfig, MlDropReport, MlSummaryRow,
    TableRow, TablesConfig,
};
pub use config::{CollectiveSpec, ScenarioConfig, StaticSource, TimeoutSpec};
pub use run::{simulate, summarize, Meta, RunReport, StepRow, Summary};
pub use stats::{ecdf, percentile, read_durations, write_ecdf, EcdfRow};
pub use sweep::{sweep, write_sweep, SeedPolicy, SweepPoint, SweepRow};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("{path}: {message}")]
    Parse {
        path: PathBuf,
        field: Option<String>,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("unknown sweep axis `{0}`")]
    UnknownAxis(String),
    #[error("{0}")]
    EmptyInput(&'static str),
    #[error("simulation failed: {0}")]
    Simulation(String),
}

impl ExperimentError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ExperimentError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, e: impl std::fmt::Display) -> Self {
        ExperimentError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentError::InvalidConfig { .. } => "invalid_config",
            ExperimentError::Parse { .. } => "parse",
            ExperimentError::Io { .. } => "io",
            ExperimentError::Csv { .. } => "csv",
            ExperimentError::UnknownAxis(_) => "unknown_axis",
            ExperimentError::EmptyInput(_) => "empty_input",
            ExperimentError::Simulation(_) => "simulation",
        }
    }

    /// Config field the error is about, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ExperimentError::InvalidConfig { field, .. } => Some(field),
            ExperimentError::Parse { field, .. } => field.as_deref(),
            ExperimentError::UnknownAxis(axis) => Some(axis),
            _ => None,
        }
    }

    /// The error as a JSON object for machine consumption.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Wire<'a> {
            kind: &'a str,
            field: Option<&'a str>,
            message: String,
        }
        serde_json::json!({
            "error": Wire {
                kind: self.kind(),
                field: self.field(),
                message: self.to_string(),
            }
        })
    }
}

/// Prefixes a module-local field name with its config section.
fn scoped(section: &str, field: &str) -> String {
    if field.starts_with(section) {
        field.to_string()
    } else {
        format!("{section}.{field}")
    }
}

impl From<crate::fabric::FabricError> for ExperimentError {
    fn from(e: crate::fabric::FabricError) -> Self {
        let crate::fabric::FabricError::InvalidConfig { field, reason } = e;
        let section = if field.starts_with("background") {
            "background"
        } else {
            "topology"
        };
        ExperimentError::invalid(scoped(section, field), reason)
    }
}

impl From<crate::transport::TransportError> for ExperimentError {
    fn from(e: crate::transport::TransportError) -> Self {
        match e {
            crate::transport::TransportError::InvalidConfig { field, reason } => {
                ExperimentError::invalid(scoped("transport_config", field), reason)
            }
            other => ExperimentError::Simulation(other.to_string()),
        }
    }
}

impl From<crate::timeoutctl::TimeoutError> for ExperimentError {
    fn from(e: crate::timeoutctl::TimeoutError) -> Self {
        match e {
            crate::timeoutctl::TimeoutError::InvalidConfig { field, reason } => {
                ExperimentError::invalid(field, reason)
            }
            other => ExperimentError::invalid("timeout.static_source", other.to_string()),
        }
    }
}

impl From<crate::losstolerance::LossError> for ExperimentError {
    fn from(e: crate::losstolerance::LossError) -> Self {
        match e {
            crate::losstolerance::LossError::InvalidConfig { field, reason } => {
                ExperimentError::invalid(scoped("train", field), reason)
            }
            other => ExperimentError::Simulation(other.to_string()),
        }
    }
}

impl From<crate::collective::CollectiveError> for ExperimentError {
    fn from(e: crate::collective::CollectiveError) -> Self {
        match e {
            crate::collective::CollectiveError::TooFewMembers(n) => ExperimentError::invalid(
                "collective.members",
                format!("a ring needs at least two members, got {n}"),
            ),
            other => ExperimentError::Simulation(other.to_string()),
        }
    }
}

/// Reads and parses a JSON file, naming the offending field on error.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
    parse_json(&text, path)
}

pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(
    text: &str,
    path: &Path,
) -> Result<T, ExperimentError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let message = e.inner().to_string();
        let field = match unknown_key(&message) {
            Some(key) if field == "." => key.to_string(),
            _ if field == "." => return parse_error(path, None, message),
            _ => field,
        };
        parse_error(path, Some(field), message)
    })
}

fn parse_error(path: &Path, field: Option<String>, message: String) -> ExperimentError {
    ExperimentError::Parse {
        path: path.to_path_buf(),
        field,
        message,
    }
}

fn unknown_key(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ExperimentError::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::csv(path, e))?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))
}
