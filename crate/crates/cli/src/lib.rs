//! Experiment harness behind the `mfbo` command.

pub mod commands;
pub mod config;
pub mod harness;
