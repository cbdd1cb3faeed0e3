//! Command-line and HTTP front ends over [`pump_core::api`].

pub mod cli;
pub mod server;
