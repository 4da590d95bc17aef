//! End-to-end orchestration: probe clouds, run configuration, the staged
//! driver, and report emission.

pub mod config;
pub mod probes;
pub mod report;
pub mod run;
