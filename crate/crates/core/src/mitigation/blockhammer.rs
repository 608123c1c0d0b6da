use std::collections::HashMap;

use super::{Activation, CountingBloomFilter, Mitigation, PreventiveAction};
use crate::dram::Cycle;

enum Counters {
    Bloom([CountingBloomFilter; 2]),
    Exact([HashMap<u64, u32>; 2]),
}

impl Counters {
    fn insert(&mut self, key: u64) {
        match self {
            Counters::Bloom(f) => f.iter_mut().for_each(|f| f.insert(key)),
            Counters::Exact(m) => m.iter_mut().for_each(|m| *m.entry(key).or_default() += 1),
        }
    }

    fn estimate(&self, active: usize, key: u64) -> u32 {
        match self {
            Counters::Bloom(f) => f[active].estimate(key),
            Counters::Exact(m) => m[active].get(&key).copied().unwrap_or(0),
        }
    }

    fn clear(&mut self, set: usize) {
        match self {
            Counters::Bloom(f) => f[set].clear(),
            Counters::Exact(m) => m[set].clear(),
        }
    }
}

/// Rate-limits activations of rows whose estimated count within the
/// current epoch pair reaches the blacklist threshold.
///
/// Both filters count every activation; the active one is the one cleared
/// longest ago, so it always covers at least one full epoch.
pub struct BlockHammer {
    banks: Vec<Counters>,
    active: usize,
    blacklist_threshold: u32,
    delay: Cycle,
    epoch: Cycle,
    next_swap: Cycle,
    last_act: HashMap<u64, Cycle>,
}

fn key(bank: usize, row: u32) -> u64 {
    ((bank as u64) << 32) | row as u64
}

impl BlockHammer {
    pub fn new(
        banks: usize,
        blacklist_threshold: u32,
        delay: Cycle,
        epoch: Cycle,
        counters: usize,
        hashes: usize,
        exact: bool,
    ) -> Self {
        let make = || {
            if exact {
                Counters::Exact([HashMap::new(), HashMap::new()])
            } else {
                Counters::Bloom([
                    CountingBloomFilter::new(counters, hashes),
                    CountingBloomFilter::new(counters, hashes),
                ])
            }
        };
        Self {
            banks: (0..banks).map(|_| make()).collect(),
            active: 0,
            blacklist_threshold,
            delay,
            epoch,
            next_swap: epoch,
            last_act: HashMap::new(),
        }
    }

    pub fn is_blacklisted(&self, bank: usize, row: u32) -> bool {
        self.banks[bank].estimate(self.active, key(bank, row)) >= self.blacklist_threshold
    }

    pub fn delay(&self) -> Cycle {
        self.delay
    }
}

impl Mitigation for BlockHammer {
    fn name(&self) -> &'static str {
        "blockhammer"
    }

    fn on_activation(&mut self, act: &Activation, _out: &mut Vec<PreventiveAction>) {
        let k = key(act.bank, act.address.row);
        self.banks[act.bank].insert(k);
        if self.is_blacklisted(act.bank, act.address.row) {
            self.last_act.insert(k, act.now);
        }
    }

    fn activation_allowed_at(&self, bank: usize, row: u32) -> Cycle {
        if !self.is_blacklisted(bank, row) {
            return 0;
        }
        self.last_act
            .get(&key(bank, row))
            .map_or(0, |&t| t + self.delay)
    }

    fn tick(&mut self, now: Cycle) {
        while now >= self.next_swap {
            let active = self.active;
            self.banks.iter_mut().for_each(|c| c.clear(active));
            self.active ^= 1;
            self.next_swap += self.epoch;
            let banks = &self.banks;
            let (bl, act) = (self.blacklist_threshold, self.active);
            self.last_act
                .retain(|&k, _| banks[(k >> 32) as usize].estimate(act, k) >= bl);
        }
    }
}
