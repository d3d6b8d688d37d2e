//! HTTP gateway, configuration loading and the `ecoroute` command line.

pub mod app;
pub mod cli;
pub mod config;
pub mod server;
