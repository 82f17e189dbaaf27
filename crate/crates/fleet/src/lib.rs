//! Fleet server, worker, online learner and command-line driver.

pub mod api;
pub mod auth;
pub mod cli;
pub mod client;
pub mod config;
pub mod crash;
pub mod online;
pub mod server;
pub mod store;
pub mod teleop;
pub mod wire;
pub mod worker;
