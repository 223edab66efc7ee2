//! Configuration, synthetic data and pipeline orchestration behind the `forge` binary.

pub mod synth;
pub mod config;
pub mod stages;
pub mod commands;
