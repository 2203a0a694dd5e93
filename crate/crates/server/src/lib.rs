//! REST and WebSocket API over the session service, plus the `cocobo`
//! command-line tool.

pub mod api;
pub mod cli;
pub mod config;

pub use api::{router, ApiError};
pub use config::Config;
