//! Trace-driven cores and the shared last-level cache.

mod core;
mod llc;
mod trace;

pub use self::core::{Core, CoreConfig, CoreStats};
pub use llc::{Access, Llc, LlcConfig, LlcThreadStats, Outgoing, Waiter};
pub use trace::{format_trace, load_trace, parse_trace, write_trace, TraceEntry};
