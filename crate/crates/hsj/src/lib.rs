//! Collection service and command-line front end for `hsj-core`.

pub mod cli;
pub mod client;
pub mod commands;
pub mod config;
pub mod server;
pub mod world;
