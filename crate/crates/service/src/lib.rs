//! Persistence, HTTP API and command-line front end for the biaslab workbench.

pub mod api;
pub mod cli;
pub mod commands;
pub mod store;
