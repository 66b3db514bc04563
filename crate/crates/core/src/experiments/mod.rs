//! Experiment harness: the tabulated protocols, metrics, MNIST ingestion
//! and the config-driven runner.

pub mod config;
pub mod metrics;
pub mod mnist;
pub mod repro;
pub mod runner;
