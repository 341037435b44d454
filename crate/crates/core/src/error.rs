use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorIssue;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("category config: {field}: {message}")]
    Config { field: String, message: String },

    #[error("unknown category id {0}")]
    UnknownCategory(u32),

    #[error("local keypoint index {local} out of range for category {category_id} ({count} keypoints)")]
    KeypointIndex {
        category_id: u32,
        local: usize,
        count: usize,
    },

    #[error("invalid head tensors: {}", format_issues(.0))]
    Validation(Vec<TensorIssue>),

    #[error("scene {image_id}: {message}")]
    Scene { image_id: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("tensor container: {0}")]
    Container(String),

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("invalid parameter {name}: {message}")]
    Param { name: &'static str, message: String },

    #[error("{}: {source}", .path.display())]
    File { path: PathBuf, source: Box<Error> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn param(name: &'static str, message: impl Into<String>) -> Self {
        Error::Param {
            name,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_issues(issues: &[TensorIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
