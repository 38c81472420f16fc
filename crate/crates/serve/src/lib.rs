//! Operational surface of millwatch: config loading, the command line and
//! the HTTP operator endpoints.

pub mod app;
pub mod cli;
pub mod config;
pub mod http;
