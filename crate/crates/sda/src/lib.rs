//! Pipeline front end around `sda-core`: line-delimited JSON pool files,
//! completion- and embedding-endpoint HTTP clients with retries, a TOML
//! configuration with flag overrides, run manifests and reports, and the
//! `sda` command-line tool.

pub mod backends;
pub mod cli;
pub mod config;
pub mod error;
pub mod http;
pub mod manifest;
pub mod records;
pub mod report;
pub mod runner;
pub mod trace;
