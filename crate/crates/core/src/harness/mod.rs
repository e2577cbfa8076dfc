//! Scenario files, batch evaluation and data export.

use std::io;
use std::path::Path;

use thiserror::Error;

pub mod batch;
pub mod export;
pub mod scenario_io;

pub use batch::{aggregate, batch_eval, batch_eval_with, config_fingerprint, EpisodeRow, MetricsReport, ScenarioRow, DEFAULT_TRIALS};
pub use export::{export_trajectory, write_trajectory_csv};
pub use scenario_io::{load_scenario, save_scenario, scenario_from_json, scenario_to_json};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot access {path}")]
    Io { path: String, source: io::Error },
    #[error("schema error at `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("no scenarios to evaluate")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("episode failed to run: {0}")]
    Episode(String),
}

impl HarnessError {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
