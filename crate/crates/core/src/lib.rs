pub mod config;
pub mod engine;
pub mod metrics;
pub mod policy;
pub mod pserver;
pub mod simnet;
pub mod runner;
pub mod cli;
