//! Command-line tools and HTTP service for cross-view box trajectory
//! transformation.

pub mod commands;
pub mod engine;
pub mod error;
pub mod evaluate;
pub mod service;

pub use engine::{Engine, LoadedModel, Method, TransformRequest, TransformResponse};
pub use error::{ApiError, CliError};
