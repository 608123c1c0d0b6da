//! Independent reference models shared by the integration tests.

#![allow(dead_code)]

use std::collections::VecDeque;

use bhsim::controller::{Controller, ControllerConfig, Enqueue};
use bhsim::dram::{CommandKind, CommandRecord, Cycle, DeviceGeometry, DramAddress, DramCommand, Preset, TimingParams};
use bhsim::mitigation::{build, secure_config, MitigationConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Farther back than any pairwise constraint reaches.
const LOOKBACK: Cycle = 8192;

#[derive(Debug, Clone)]
struct Entry {
    at: Cycle,
    kind: CommandKind,
    rank: usize,
    group: usize,
    bank: usize,
    /// Banks a PREab actually closed.
    closed: Vec<usize>,
    /// Bank occupancy of a VRR.
    cost: Cycle,
}

/// Timing checker built from pairwise command-to-command distances over
/// the raw history, with no accumulated next-allowed state.
pub struct Replayer {
    t: TimingParams,
    g: DeviceGeometry,
    radius: u32,
    history: VecDeque<Entry>,
    open: Vec<Option<u32>>,
    acts: Vec<VecDeque<Cycle>>,
    last_data: Option<(Cycle, Cycle, u32, bool)>,
    last_cycle: Option<Cycle>,
    pub checked: u64,
}

impl Replayer {
    pub fn new(preset: &Preset, radius: u32) -> Self {
        let g = preset.geometry;
        Self {
            t: preset.timing,
            radius,
            history: VecDeque::new(),
            open: vec![None; g.total_banks()],
            acts: vec![VecDeque::new(); g.ranks() as usize],
            last_data: None,
            last_cycle: None,
            checked: 0,
            g,
        }
    }

    fn rank_of(&self, a: &DramAddress) -> usize {
        (a.channel * self.g.ranks_per_channel + a.rank) as usize
    }

    fn group_of(&self, a: &DramAddress) -> usize {
        self.rank_of(a) * self.g.bankgroups_per_rank as usize + a.bankgroup as usize
    }

    fn bank_of(&self, a: &DramAddress) -> usize {
        self.group_of(a) * self.g.banks_per_bankgroup as usize + a.bank as usize
    }

    fn rank_banks(&self, rank: usize) -> std::ops::Range<usize> {
        let per = (self.g.bankgroups_per_rank * self.g.banks_per_bankgroup) as usize;
        rank * per..(rank + 1) * per
    }

    /// Victims refreshed around `row`, both sides within the radius.
    pub fn victims(&self, row: u32) -> u64 {
        let lo = row.saturating_sub(self.radius);
        let hi = (row + self.radius).min(self.g.rows_per_bank - 1);
        (hi - lo) as u64
    }

    fn latency(&self, kind: CommandKind) -> Cycle {
        if kind == CommandKind::Wr {
            self.t.cwl
        } else {
            self.t.cl
        }
    }

    /// Earliest cycle at which a bank-occupying command (ACT, VRR, RFM or
    /// the per-bank part of REF) may start after `e`.
    fn bank_gate(&self, e: &Entry, bank: usize) -> Option<(Cycle, &'static str)> {
        let t = &self.t;
        let same = e.bank == bank;
        let same_rank = self.rank_banks(e.rank).contains(&bank);
        match e.kind {
            CommandKind::Act if same => Some((e.at + t.t_rc, "tRC")),
            CommandKind::Vrr if same => Some((e.at + e.cost, "VRR busy")),
            CommandKind::Rfm if same => Some((e.at + t.t_rfm, "tRFM")),
            CommandKind::Pre if same => Some((e.at + t.t_rp, "tRP")),
            CommandKind::PreAll if e.closed.contains(&bank) => Some((e.at + t.t_rp, "tRP (PREab)")),
            CommandKind::Ref if same_rank => Some((e.at + t.t_rfc, "tRFC")),
            _ => None,
        }
    }

    /// Violations `cmd` would commit at `now`; empty when legal.
    pub fn check(&self, cmd: &DramCommand, now: Cycle) -> Vec<String> {
        let t = &self.t;
        let a = &cmd.address;
        let mut v = Vec::new();
        if let Some(last) = self.last_cycle {
            if now < last {
                v.push(format!("time went backwards: {now} < {last}"));
            }
        }
        let rank = self.rank_of(a);
        let mut need = |at: Cycle, what: &str| {
            if now < at {
                v.push(format!("{what}: {} at {now}, allowed from {at}", cmd.kind.mnemonic()));
            }
        };
        match cmd.kind {
            CommandKind::Act | CommandKind::Vrr | CommandKind::Rfm => {
                let bank = self.bank_of(a);
                if self.open[bank].is_some() {
                    need(Cycle::MAX, "bank open");
                }
                for e in &self.history {
                    if let Some((at, what)) = self.bank_gate(e, bank) {
                        need(at, what);
                    }
                }
                if cmd.kind != CommandKind::Rfm {
                    let group = self.group_of(a);
                    for e in &self.history {
                        if !matches!(e.kind, CommandKind::Act | CommandKind::Vrr) || e.bank == bank {
                            continue;
                        }
                        if e.group == group {
                            need(e.at + t.t_rrd_l, "tRRD_L");
                        } else if e.rank == rank {
                            need(e.at + t.t_rrd_s, "tRRD_S");
                        }
                    }
                    let acts = &self.acts[rank];
                    if acts.len() >= 4 {
                        need(acts[acts.len() - 4] + t.t_faw, "tFAW");
                    }
                }
            }
            CommandKind::Ref => {
                for bank in self.rank_banks(rank) {
                    if self.open[bank].is_some() {
                        need(Cycle::MAX, "REF with open bank");
                    }
                    for e in &self.history {
                        if let Some((at, what)) = self.bank_gate(e, bank) {
                            need(at, what);
                        }
                    }
                }
            }
            CommandKind::Pre | CommandKind::PreAll => {
                let banks: Vec<usize> = if cmd.kind == CommandKind::Pre {
                    let b = self.bank_of(a);
                    if self.open[b].is_none() {
                        need(Cycle::MAX, "PRE on closed bank");
                    }
                    vec![b]
                } else {
                    self.rank_banks(rank).filter(|&b| self.open[b].is_some()).collect()
                };
                for e in &self.history {
                    if !banks.contains(&e.bank) {
                        continue;
                    }
                    match e.kind {
                        CommandKind::Act => need(e.at + t.t_ras, "tRAS"),
                        CommandKind::Rd => need(e.at + t.t_rtp, "tRTP"),
                        CommandKind::Wr => need(e.at + t.cwl + t.bl + t.t_wr, "tWR"),
                        _ => {}
                    }
                }
            }
            CommandKind::Rd | CommandKind::Wr => {
                let bank = self.bank_of(a);
                let group = self.group_of(a);
                let is_write = cmd.kind == CommandKind::Wr;
                if self.open[bank] != Some(a.row) {
                    need(Cycle::MAX, "column access to a row that is not open");
                }
                for e in &self.history {
                    let same_group = e.group == group;
                    let same_rank = e.rank == rank;
                    match e.kind {
                        CommandKind::Act if e.bank == bank => need(e.at + t.t_rcd, "tRCD"),
                        CommandKind::Rd | CommandKind::Wr if same_rank => {
                            let write_end = e.at + t.cwl + t.bl;
                            match (e.kind == CommandKind::Wr, is_write) {
                                (true, false) if same_group => need(write_end + t.t_wtr_l, "tWTR_L"),
                                (true, false) => need(write_end + t.t_wtr_s, "tWTR_S"),
                                _ if same_group => need(e.at + t.t_ccd_l, "tCCD_L"),
                                _ => need(e.at + t.t_ccd_s, "tCCD_S"),
                            }
                        }
                        _ => {}
                    }
                }
                let start = now + self.latency(cmd.kind);
                for e in &self.history {
                    if matches!(e.kind, CommandKind::Rd | CommandKind::Wr) {
                        let end = e.at + self.latency(e.kind) + t.bl;
                        if start < end {
                            need(Cycle::MAX, "data bus overlap");
                        }
                    }
                }
                if let Some((_, end, last_rank, last_write)) = self.last_data {
                    let mut gap = 0;
                    if last_rank != a.rank {
                        gap = t.t_rtrs;
                    }
                    if is_write && !last_write {
                        gap = gap.max(2);
                    }
                    if start < end + gap {
                        need(Cycle::MAX, "bus turnaround");
                    }
                }
            }
        }
        v
    }

    pub fn apply(&mut self, cmd: &DramCommand, now: Cycle) {
        let a = &cmd.address;
        let rank = self.rank_of(a);
        let bank = self.bank_of(a);
        let mut entry = Entry {
            at: now,
            kind: cmd.kind,
            rank,
            group: self.group_of(a),
            bank,
            closed: Vec::new(),
            cost: 0,
        };
        match cmd.kind {
            CommandKind::Act => {
                self.open[bank] = Some(a.row);
                self.acts[rank].push_back(now);
            }
            CommandKind::Vrr => {
                entry.cost = self.victims(a.row).max(1) * self.t.t_rc;
                self.acts[rank].push_back(now);
            }
            CommandKind::Pre => self.open[bank] = None,
            CommandKind::PreAll => {
                entry.bank = usize::MAX;
                entry.group = usize::MAX;
                for b in self.rank_banks(rank) {
                    if self.open[b].take().is_some() {
                        entry.closed.push(b);
                    }
                }
            }
            CommandKind::Ref => {
                entry.bank = usize::MAX;
                entry.group = usize::MAX;
            }
            CommandKind::Rd | CommandKind::Wr => {
                let end = now + self.latency(cmd.kind) + self.t.bl;
                self.last_data = Some((now, end, a.rank, cmd.kind == CommandKind::Wr));
            }
            CommandKind::Rfm => {}
        }
        if self.acts[rank].len() > 4 {
            self.acts[rank].pop_front();
        }
        self.history.push_back(entry);
        while self.history.front().is_some_and(|e| e.at + LOOKBACK < now) {
            self.history.pop_front();
        }
        self.last_cycle = Some(now);
        self.checked += 1;
    }

    /// Replays a command log, returning every violation found.
    pub fn replay(&mut self, log: &[CommandRecord]) -> Vec<String> {
        let mut out = Vec::new();
        for rec in log {
            for v in self.check(&rec.command, rec.cycle) {
                out.push(format!("cycle {}: {v}", rec.cycle));
            }
            self.apply(&rec.command, rec.cycle);
        }
        out
    }
}

/// Straightforward model of the throttling algorithm on integer
/// fixed-point scores (16 fractional bits).
#[derive(Debug, Clone)]
pub struct RefThrottle {
    pub threat: u64,
    /// Outlier threshold as a fraction num/den.
    pub outlier: (u64, u64),
    pub old_penalty: usize,
    pub new_divisor: usize,
    pub total: usize,
    pub acts: Vec<u64>,
    pub scores: [Vec<u64>; 2],
    pub suspect: [Vec<bool>; 2],
    pub active: usize,
    pub quota: Vec<usize>,
    pub recent: Vec<bool>,
}

impl RefThrottle {
    pub fn new(threads: usize, total: usize) -> Self {
        Self {
            threat: 32 << 16,
            outlier: (65, 100),
            old_penalty: 1,
            new_divisor: 10,
            total,
            acts: vec![0; threads],
            scores: [vec![0; threads], vec![0; threads]],
            suspect: [vec![false; threads], vec![false; threads]],
            active: 0,
            quota: vec![total; threads],
            recent: vec![false; threads],
        }
    }

    pub fn activate(&mut self, thread: usize) {
        self.acts[thread] = (self.acts[thread] + 1).min(u16::MAX as u64);
    }

    pub fn action(&mut self, weight: u64) -> Vec<usize> {
        let total: u64 = self.acts.iter().sum();
        if total == 0 {
            return Vec::new();
        }
        let n = self.acts.len();
        for i in 0..n {
            let delta = weight * self.acts[i] / total;
            self.scores[0][i] += delta;
            self.scores[1][i] += delta;
            self.acts[i] = 0;
        }
        let set = self.active;
        let sum: u64 = self.scores[set].iter().sum();
        let (num, den) = self.outlier;
        let mut marked = Vec::new();
        for i in 0..n {
            let s = self.scores[set][i];
            // s > (1 + num/den) * sum / n
            let outlier = s as u128 * n as u128 * den as u128 > (den + num) as u128 * sum as u128;
            if s >= self.threat && outlier && !self.suspect[set][i] {
                self.suspect[set][i] = true;
                self.quota[i] = if self.recent[i] {
                    self.quota[i].saturating_sub(self.old_penalty)
                } else {
                    self.quota[i] / self.new_divisor
                };
                marked.push(i);
            }
        }
        marked
    }

    pub fn window_end(&mut self) {
        let set = self.active;
        for i in 0..self.acts.len() {
            self.recent[i] = self.suspect[set][i];
            if !self.recent[i] {
                self.quota[i] = self.total;
            }
            self.scores[set][i] = 0;
            self.suspect[set][i] = false;
        }
        self.active = 1 - set;
    }
}

pub fn preset() -> Preset {
    Preset::ddr5_4800()
}

/// Controller fed by random traffic concentrated on a few rows per bank.
pub struct Traffic {
    pub ctrl: Controller,
    pub rng: ChaCha8Rng,
    pub now: Cycle,
    pub threads: usize,
    pub banks: u32,
    pub rows: u32,
    pub write_fraction: f64,
    pub rate: f64,
    pub accepted_reads: u64,
    pub completed_reads: u64,
    pub worst_latency: Cycle,
}

impl Traffic {
    pub fn new(mitigation: &MitigationConfig, seed: u64, record: bool) -> Self {
        let p = preset();
        let params = secure_config(mitigation, &p.timing).expect("secure config");
        let m = build(&params, p.geometry.total_banks(), seed);
        let cfg = ControllerConfig {
            record_commands: record,
            ..Default::default()
        };
        Self {
            ctrl: Controller::new(cfg, &p, 4, m, None).expect("controller"),
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: 0,
            threads: 4,
            banks: 8,
            rows: 8,
            write_fraction: 0.2,
            rate: 0.3,
            accepted_reads: 0,
            completed_reads: 0,
            worst_latency: 0,
        }
    }

    pub fn random_address(&mut self) -> u64 {
        let g = self.ctrl.device().geometry();
        let flat = self.rng.gen_range(0..self.banks.min(g.total_banks() as u32)) as usize;
        let mut a = g.bank_address(flat);
        a.row = 1000 + self.rng.gen_range(0..self.rows) * 3;
        a.column = self.rng.gen_range(0..g.columns_per_row);
        self.ctrl.mapping().compose(&a)
    }

    /// Offers at most one request, then ticks once.
    pub fn step(&mut self, offer: bool, done: &mut Vec<bhsim::controller::MemRequest>) {
        if offer && self.rng.gen_bool(self.rate) {
            let thread = self.rng.gen_range(0..self.threads);
            let addr = self.random_address();
            let write = self.rng.gen_bool(self.write_fraction);
            if let Enqueue::Accepted(_) = self.ctrl.enqueue(thread, addr, write, self.now) {
                if !write {
                    self.accepted_reads += 1;
                }
            }
        }
        self.ctrl.tick(self.now);
        self.ctrl.drain_completed(self.now, done);
        for r in done.drain(..) {
            self.completed_reads += 1;
            self.worst_latency = self.worst_latency.max(r.completion.unwrap() - r.arrival);
        }
        self.now += 1;
    }

    pub fn run_until_commands(&mut self, commands: usize, max_cycles: Cycle) {
        let mut done = Vec::new();
        while self.ctrl.command_log().map_or(0, <[_]>::len) < commands && self.now < max_cycles {
            self.step(true, &mut done);
        }
    }

    /// Stops offering traffic and ticks until every request is served.
    pub fn drain(&mut self, max_cycles: Cycle) -> bool {
        let mut done = Vec::new();
        let limit = self.now + max_cycles;
        while self.ctrl.outstanding() > 0 && self.now < limit {
            self.step(false, &mut done);
        }
        self.ctrl.outstanding() == 0
    }
}

pub fn count(log: &[CommandRecord], kind: CommandKind) -> usize {
    log.iter().filter(|r| r.command.kind == kind).count()
}
