//! HTTP API and `moods` command line front end over the MOODS platform.

pub mod api;
pub mod cli;
pub mod config;
pub mod error;
pub mod reports;

pub use error::{GatewayError, Result};
