use serde::Serialize;
use thiserror::Error;

use stockqa::corpus::CorpusError;
use stockqa::metrics::MetricError;
use stockqa::model::ModelError;
use stockqa::retrieval::RetrievalError;
use stockqa::tokenizer::TokenizeError;
use stockqa::training::TrainError;

/// Failure of a command, printed as one JSON line on stderr.
#[derive(Debug, Error, Serialize)]
#[error("{kind}: {message}")]
pub struct CliError {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError { kind, field: None, message: message.into() }
    }

    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError { kind: "config", field: Some(field.to_string()), message: message.into() }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::new("io", format!("{}: {e}", path.display()))
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(&serde_json::json!({ "error": self })).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind))
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let kind = if matches!(e, CorpusError::Io { .. }) { "io" } else { "corpus" };
        CliError::new(kind, e.to_string())
    }
}

impl From<TokenizeError> for CliError {
    fn from(e: TokenizeError) -> Self {
        let kind = if matches!(e, TokenizeError::Io { .. }) { "io" } else { "tokenizer" };
        CliError::new(kind, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config { field, message } => CliError::config(field, message),
            ModelError::Io { .. } => CliError::new("io", e.to_string()),
            other => CliError::new("model", other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config { field, message } => CliError::config(field, message),
            TrainError::Model(m) => m.into(),
            TrainError::Diverged { .. } => CliError::new("diverged", e.to_string()),
            other => CliError::new("train", other.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        let kind = if matches!(e, RetrievalError::Io { .. }) { "io" } else { "retrieval" };
        CliError::new(kind, e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::new("metric", e.to_string())
    }
}
