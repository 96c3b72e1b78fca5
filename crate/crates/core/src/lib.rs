//! Replay CI build histories through regression test prioritization
//! schemes and compare them by APFD.

pub mod history;
pub mod metrics;
pub mod prioritizers;
pub mod runner;
pub mod simgen;
pub mod stats;
