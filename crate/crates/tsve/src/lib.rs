//! HTTP API and command-line front end over `tsve-core`.

pub mod api;
pub mod cli;
pub mod error;
pub mod pipeline;

pub use api::{router, ServerConfig};
pub use error::ApiError;
