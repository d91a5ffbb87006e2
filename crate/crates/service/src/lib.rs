//! Study server: live suggestions for editor clients, double-blind arm
//! assignment, durable interaction telemetry, and study reports.

pub mod events;
pub mod http;
pub mod report;
pub mod state;

use thiserror::Error;

pub use events::{ClientEvent, EventBody, InteractionEvent, LogRecord, Session};
pub use http::{router, serve};
pub use report::{study_report, ArmStats, ReportFilter, StudyReport};
pub use state::{Arm, CompletionMode, Service, ServiceSettings, SessionView, SuggestRequest, SuggestResponse};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown problem {0}")]
    UnknownProblem(String),
    #[error("unknown assistant label {0}")]
    UnknownArm(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("rejected batch: {0}")]
    SeqRegression(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("event log {path} line {line}: {message}")]
    CorruptLog { path: String, line: usize, message: String },
    #[error("event log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}
