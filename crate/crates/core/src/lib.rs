//! Cycle-level, trace-driven simulator of a multi-core DRAM subsystem with
//! pluggable RowHammer mitigations and BreakHammer thread throttling.

pub mod breakhammer;
pub mod config;
pub mod controller;
pub mod cpu;
pub mod dram;
pub mod energy;
pub mod harness;
pub mod error;
pub mod metrics;
pub mod mitigation;
pub mod security;
pub mod sim;
pub mod tracegen;

pub use error::{Result, SimError};
