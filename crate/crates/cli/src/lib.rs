//! Configuration, orchestration and result persistence for the
//! `bdsde-filter` command line.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
