//! Request/response service over the mangaface pipeline, for the studio UI
//! and any other client.
//!
//! [`api::Service`] holds the operations and is usable in-process;
//! [`http::router`] exposes them over HTTP. Generation is progressive:
//! clients request frames, then poll the session status.

pub mod api;
pub mod config;
pub mod http;

pub use api::{ApiError, Service, ServiceConfig};
