use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::dram::ThreadId;
use crate::error::{Result, SimError};

fn default_size() -> u64 {
    8 << 20
}
fn default_ways() -> usize {
    8
}
fn default_line() -> u64 {
    64
}
fn default_mshrs() -> usize {
    64
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlcConfig {
    #[serde(default = "default_size")]
    pub size_bytes: u64,
    #[serde(default = "default_ways")]
    pub ways: usize,
    #[serde(default = "default_line")]
    pub line_bytes: u64,
    /// Shared pool of cache-miss buffers.
    #[serde(default = "default_mshrs")]
    pub total_mshrs: usize,
    /// XOR-fold upper line-address bits into the set index.
    #[serde(default = "default_true")]
    pub hashed_index: bool,
}

impl Default for LlcConfig {
    fn default() -> Self {
        Self {
            size_bytes: default_size(),
            ways: default_ways(),
            line_bytes: default_line(),
            total_mshrs: default_mshrs(),
            hashed_index: true,
        }
    }
}

impl LlcConfig {
    pub fn sets(&self) -> usize {
        (self.size_bytes / self.line_bytes / self.ways as u64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways == 0 || self.total_mshrs == 0 {
            return Err(SimError::config("llc.ways", "ways and total_mshrs must be positive"));
        }
        if !self.line_bytes.is_power_of_two() {
            return Err(SimError::config("llc.line_bytes", "must be a power of two"));
        }
        let sets = self.size_bytes / self.line_bytes / self.ways as u64;
        if sets == 0 || !sets.is_power_of_two() || sets * self.line_bytes * self.ways as u64 != self.size_bytes {
            return Err(SimError::config(
                "llc.size_bytes",
                "size / (line_bytes * ways) must be a power of two",
            ));
        }
        Ok(())
    }

    pub fn line_of(&self, address: u64) -> u64 {
        address / self.line_bytes
    }

    /// Set holding the line with index `line`.
    pub fn set_of(&self, line: u64) -> usize {
        let sets = self.sets() as u64;
        let bits = sets.trailing_zeros();
        let index = if self.hashed_index && bits > 0 {
            let mut folded = 0;
            let mut rest = line;
            while rest != 0 {
                folded ^= rest;
                rest >>= bits;
            }
            folded
        } else {
            line
        };
        (index & (sets - 1)) as usize
    }
}

/// Outcome of an LLC lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Access {
    Hit,
    MissAllocated,
    MissMerged,
    BlockedQuota,
    BlockedPool,
}

/// Window slot of a core waiting for a line fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Waiter {
    pub core: usize,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Way {
    line: u64,
    valid: bool,
    dirty: bool,
    owner: ThreadId,
    stamp: u64,
}

#[derive(Debug, Clone)]
struct Mshr {
    thread: ThreadId,
    dirty_on_fill: bool,
    waiters: Vec<Waiter>,
}

/// Request the LLC wants to send to memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outgoing {
    pub thread: ThreadId,
    pub address: u64,
    pub is_write: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LlcThreadStats {
    pub hits: u64,
    pub misses: u64,
    pub merged: u64,
    pub blocked_quota: u64,
    pub blocked_pool: u64,
    pub writebacks: u64,
    pub peak_mshrs: usize,
}

/// Shared write-back, write-allocate last-level cache with LRU replacement
/// and a quota-limited miss-buffer pool.
#[derive(Debug, Clone)]
pub struct Llc {
    config: LlcConfig,
    ways: Vec<Way>,
    clock: u64,
    mshrs: HashMap<u64, Mshr>,
    allocated: Vec<usize>,
    outbox: VecDeque<Outgoing>,
    stats: Vec<LlcThreadStats>,
}

impl Llc {
    pub fn new(config: LlcConfig, threads: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            ways: vec![Way::default(); config.sets() * config.ways],
            clock: 0,
            mshrs: HashMap::new(),
            allocated: vec![0; threads],
            outbox: VecDeque::new(),
            stats: vec![LlcThreadStats::default(); threads],
            config,
        })
    }

    pub fn config(&self) -> &LlcConfig {
        &self.config
    }

    pub fn stats(&self, thread: ThreadId) -> &LlcThreadStats {
        &self.stats[thread]
    }

    pub fn allocated(&self, thread: ThreadId) -> usize {
        self.allocated[thread]
    }

    pub fn mshrs_in_use(&self) -> usize {
        self.mshrs.len()
    }

    fn set_range(&self, line: u64) -> std::ops::Range<usize> {
        let set = self.config.set_of(line);
        set * self.config.ways..(set + 1) * self.config.ways
    }

    fn find(&self, line: u64) -> Option<usize> {
        self.set_range(line)
            .find(|&i| self.ways[i].valid && self.ways[i].line == line)
    }

    pub fn contains(&self, address: u64) -> bool {
        self.find(self.config.line_of(address)).is_some()
    }

    pub fn in_flight(&self, address: u64) -> bool {
        self.mshrs.contains_key(&self.config.line_of(address))
    }

    /// Looks up `address` for `thread`, allocating a miss buffer when the
    /// thread is under `quota` and the pool has room.
    pub fn access(
        &mut self,
        thread: ThreadId,
        address: u64,
        is_write: bool,
        waiter: Option<Waiter>,
        quota: usize,
    ) -> Access {
        let line = self.config.line_of(address);
        self.clock += 1;
        if let Some(i) = self.find(line) {
            let w = &mut self.ways[i];
            w.stamp = self.clock;
            if is_write {
                w.dirty = true;
                w.owner = thread;
            }
            self.stats[thread].hits += 1;
            return Access::Hit;
        }
        if let Some(m) = self.mshrs.get_mut(&line) {
            m.waiters.extend(waiter);
            m.dirty_on_fill |= is_write;
            self.stats[thread].merged += 1;
            return Access::MissMerged;
        }
        if self.allocated[thread] >= quota {
            self.stats[thread].blocked_quota += 1;
            return Access::BlockedQuota;
        }
        if self.mshrs.len() >= self.config.total_mshrs {
            self.stats[thread].blocked_pool += 1;
            return Access::BlockedPool;
        }
        self.mshrs.insert(
            line,
            Mshr {
                thread,
                dirty_on_fill: is_write,
                waiters: waiter.into_iter().collect(),
            },
        );
        self.allocated[thread] += 1;
        let st = &mut self.stats[thread];
        st.misses += 1;
        st.peak_mshrs = st.peak_mshrs.max(self.allocated[thread]);
        self.outbox.push_back(Outgoing {
            thread,
            address: line * self.config.line_bytes,
            is_write: false,
        });
        Access::MissAllocated
    }

    /// Installs the line fetched for `address` and returns its waiters.
    pub fn fill(&mut self, address: u64) -> Vec<Waiter> {
        let line = self.config.line_of(address);
        let Some(m) = self.mshrs.remove(&line) else {
            return Vec::new();
        };
        self.allocated[m.thread] -= 1;
        self.clock += 1;
        let range = self.set_range(line);
        let slot = range
            .clone()
            .find(|&i| !self.ways[i].valid)
            .unwrap_or_else(|| range.min_by_key(|&i| self.ways[i].stamp).expect("set has ways"));
        let old = self.ways[slot];
        if old.valid && old.dirty {
            self.stats[old.owner].writebacks += 1;
            self.outbox.push_back(Outgoing {
                thread: old.owner,
                address: old.line * self.config.line_bytes,
                is_write: true,
            });
        }
        self.ways[slot] = Way {
            line,
            valid: true,
            dirty: m.dirty_on_fill,
            owner: m.thread,
            stamp: self.clock,
        };
        m.waiters
    }

    pub fn next_outgoing(&self) -> Option<&Outgoing> {
        self.outbox.front()
    }

    pub fn pop_outgoing(&mut self) -> Option<Outgoing> {
        self.outbox.pop_front()
    }

    /// Puts back a request memory could not accept yet.
    pub fn requeue(&mut self, out: Outgoing) {
        self.outbox.push_back(out);
    }

    pub fn outbox_len(&self) -> usize {
        self.outbox.len()
    }
}
