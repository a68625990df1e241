//! Command-line front end for the two-state NHHMM sampler.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;
pub mod output;
