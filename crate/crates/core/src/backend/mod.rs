//! Runtime backend: operator session, event log, bus, HTTP and the polling loop.
//!
//! [`engine::Engine`] is the only writer of session state and weights. The
//! async [`run_loop::run`] feeds it snapshots and operator events; HTTP
//! handlers and bus clients talk to it through channels.

pub mod bus;
pub mod engine;
pub mod http;
pub mod metrics;
pub mod replay;
pub mod run_loop;
pub mod session;
pub mod store;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use bus::Bus;
pub use engine::{Clock, Engine, EngineConfig, ManualClock, SystemClock};
pub use replay::{canonical_json, replay, restore};
pub use run_loop::{run, Command, DataSource, LoopConfig, SimSource, SourceError};
pub use session::{Phase, ProtocolError, Session, UserEvent};
pub use store::{EventKind, EventRecord, EventStore};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error(transparent)]
    Protocol(#[from] session::ProtocolError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("event log line {line}: {message}")]
    Log { line: usize, message: String },
    #[error("replay diverged at seq {seq}: {message}")]
    Replay { seq: u64, message: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Knowledge(#[from] crate::knowledge::KnowledgeError),
    #[error(transparent)]
    Weights(#[from] crate::weights::WeightError),
    #[error(transparent)]
    Evidence(#[from] crate::evidence::EvidenceError),
}

impl BackendError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        BackendError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
