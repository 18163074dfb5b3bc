use thiserror::Error;

use crate::model::Binding;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An invariant violation in a scenario, profile or config, with the
    /// dotted field path that caused it.
    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("infeasible SLA for tenant `{tenant}`: {binding} constraint")]
    InfeasibleSla { tenant: String, binding: Binding },

    #[error("unknown built-in scenario `{0}`")]
    UnknownScenario(String),

    #[error("malformed document: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
