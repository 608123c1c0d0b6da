use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::llc::{Access, Llc, Waiter};
use super::trace::TraceEntry;
use crate::dram::{Cycle, ThreadId};
use crate::error::{Result, SimError};

fn default_width() -> usize {
    4
}
fn default_window() -> usize {
    128
}
fn default_hit_latency() -> u64 {
    20
}
fn default_outstanding() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreConfig {
    #[serde(default = "default_width")]
    pub issue_width: usize,
    #[serde(default = "default_window")]
    pub window_size: usize,
    /// LLC hit latency in CPU cycles.
    #[serde(default = "default_hit_latency")]
    pub hit_latency: u64,
    /// Read misses a core may wait on at once.
    #[serde(default = "default_outstanding")]
    pub max_outstanding_misses: usize,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            issue_width: default_width(),
            window_size: default_window(),
            hit_latency: default_hit_latency(),
            max_outstanding_misses: default_outstanding(),
        }
    }
}

impl CoreConfig {
    pub fn validate(&self) -> Result<()> {
        if self.issue_width == 0 || self.window_size == 0 || self.max_outstanding_misses == 0 {
            return Err(SimError::config(
                "core.issue_width",
                "issue width, window size and outstanding misses must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoreStats {
    pub memory_ops: u64,
    pub stall_cycles_blocked: u64,
    pub stall_cycles_outstanding: u64,
    pub stall_cycles_window: u64,
}

/// Trace-driven core with an in-order retirement window.
///
/// Non-memory instructions are ready on issue, LLC hits after the hit
/// latency, and read misses once their line is filled. Writes never block.
#[derive(Debug, Clone)]
pub struct Core {
    id: usize,
    thread: ThreadId,
    config: CoreConfig,
    trace: Arc<Vec<TraceEntry>>,
    cursor: usize,
    bubbles_left: u32,
    window: VecDeque<Option<Cycle>>,
    head_seq: u64,
    retired: u64,
    outstanding: usize,
    target: Option<u64>,
    finished_at: Option<Cycle>,
    stats: CoreStats,
}

impl Core {
    /// `target` is the instruction count after which the core counts as
    /// finished; it keeps executing afterwards.
    pub fn new(id: usize, thread: ThreadId, config: CoreConfig, trace: Arc<Vec<TraceEntry>>, target: Option<u64>) -> Self {
        assert!(!trace.is_empty(), "core needs a non-empty trace");
        let bubbles_left = trace[0].bubbles;
        Self {
            id,
            thread,
            window: VecDeque::with_capacity(config.window_size),
            config,
            trace,
            cursor: 0,
            bubbles_left,
            head_seq: 0,
            retired: 0,
            outstanding: 0,
            target,
            finished_at: None,
            stats: CoreStats::default(),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn thread(&self) -> ThreadId {
        self.thread
    }

    pub fn retired(&self) -> u64 {
        self.retired
    }

    pub fn target(&self) -> Option<u64> {
        self.target
    }

    pub fn finished_at(&self) -> Option<Cycle> {
        self.finished_at
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding
    }

    pub fn stats(&self) -> &CoreStats {
        &self.stats
    }

    /// Marks the window slot `seq` ready at `now` after its line arrived.
    pub fn wake(&mut self, seq: u64, now: Cycle) {
        let idx = (seq - self.head_seq) as usize;
        let slot = &mut self.window[idx];
        debug_assert!(slot.is_none(), "slot woken twice");
        *slot = Some(now);
        self.outstanding -= 1;
    }

    pub fn tick(&mut self, now: Cycle, llc: &mut Llc, quota: usize) {
        for _ in 0..self.config.issue_width {
            match self.window.front() {
                Some(Some(ready)) if *ready <= now => {
                    self.window.pop_front();
                    self.head_seq += 1;
                    self.retired += 1;
                }
                _ => break,
            }
        }
        if self.finished_at.is_none() && self.target.is_some_and(|t| self.retired >= t) {
            self.finished_at = Some(now);
        }

        for _ in 0..self.config.issue_width {
            if self.window.len() >= self.config.window_size {
                self.stats.stall_cycles_window += 1;
                break;
            }
            if self.bubbles_left > 0 {
                self.bubbles_left -= 1;
                self.window.push_back(Some(now));
                continue;
            }
            let entry = self.trace[self.cursor];
            if !entry.is_write && self.outstanding >= self.config.max_outstanding_misses {
                self.stats.stall_cycles_outstanding += 1;
                break;
            }
            let seq = self.head_seq + self.window.len() as u64;
            let waiter = (!entry.is_write).then_some(Waiter { core: self.id, seq });
            let slot = match llc.access(self.thread, entry.address, entry.is_write, waiter, quota) {
                Access::Hit => Some(now + self.config.hit_latency),
                Access::MissAllocated | Access::MissMerged if !entry.is_write => {
                    self.outstanding += 1;
                    None
                }
                Access::MissAllocated | Access::MissMerged => Some(now),
                Access::BlockedQuota | Access::BlockedPool => {
                    self.stats.stall_cycles_blocked += 1;
                    break;
                }
            };
            self.window.push_back(slot);
            self.stats.memory_ops += 1;
            self.cursor = (self.cursor + 1) % self.trace.len();
            self.bubbles_left = self.trace[self.cursor].bubbles;
        }
    }
}
