//! Sessions: event-sourced conversation state, persistence, the service
//! that routes user actions through the prompt chains, and transcript
//! replay.

mod service;
mod state;
mod store;
mod transcript;

pub use service::{
    drop_stale_notes, DeployRequest, MessageReply, ServiceConfig, ServiceError, SessionService, StreamBody,
    StreamEnvelope,
};
pub use state::{Mode, ReplayError, SessionEvent, SessionState};
pub use store::{EventLogRecord, FileStore, MemoryStore, SessionStore, StorageError, LOG_VERSION};
pub use transcript::{
    coherent, run_transcript, StepReport, Transcript, TranscriptError, TranscriptRun, TranscriptStep,
    TRANSCRIPT_SCHEMA,
};
