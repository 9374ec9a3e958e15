//! Library side of the `wslln` binary: run configuration and subcommands.

pub mod commands;
pub mod config;
