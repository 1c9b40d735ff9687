//! HTTP session API, event-log persistence and the operator CLI.

pub mod api;
pub mod cli;
pub mod config;
pub mod eventlog;
