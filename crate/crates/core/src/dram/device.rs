use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::oracle::SafetyOracle;
use super::{CommandKind, Cycle, DeviceGeometry, DramAddress, DramCommand, TimingParams};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankState {
    pub open_row: Option<u32>,
    pub next_act: Cycle,
    pub next_pre: Cycle,
    pub next_rd: Cycle,
    pub next_wr: Cycle,
    /// Busy serving REF, VRR or RFM until this cycle.
    pub blocked_until: Cycle,
}

#[derive(Debug, Clone, Copy, Default)]
struct GroupState {
    next_act: Cycle,
    next_rd: Cycle,
    next_wr: Cycle,
}

#[derive(Debug, Clone, Default)]
struct RankState {
    next_act: Cycle,
    next_rd: Cycle,
    next_wr: Cycle,
    recent_acts: VecDeque<Cycle>,
    ref_block: u32,
}

#[derive(Debug, Clone, Copy, Default)]
struct BusState {
    data_free: Cycle,
    last_rank: Option<u32>,
    last_was_write: bool,
}

const RD_TO_WR_TURNAROUND: Cycle = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeviceEvent {
    Activated { bank: usize, row: u32, row_count: u32 },
    VictimsRefreshed { bank: usize, rows: Vec<u32> },
    Refreshed { rank: usize, first_row: u32, rows: u32 },
    RfmServed { bank: usize, aggressor: Option<u32> },
}

/// One or more DRAM channels worth of banks with JEDEC-style timing state.
#[derive(Debug, Clone)]
pub struct Device {
    geometry: DeviceGeometry,
    timing: TimingParams,
    vrr_both_sides: bool,
    banks: Vec<BankState>,
    groups: Vec<GroupState>,
    ranks: Vec<RankState>,
    buses: Vec<BusState>,
    // Per-row activation counters maintained on the DRAM die; served by RFM.
    row_counters: Vec<u32>,
    rows_per_ref: u32,
    oracle: SafetyOracle,
}

impl Device {
    pub fn new(
        geometry: DeviceGeometry,
        timing: TimingParams,
        blast_radius: u32,
        vrr_both_sides: bool,
    ) -> Self {
        let rows_per_ref = TimingParams::rows_per_ref(&geometry);
        let blocks = geometry.rows_per_bank / rows_per_ref;
        let oracle = SafetyOracle::new(
            geometry.total_banks(),
            geometry.ranks() as usize,
            geometry.rows_per_bank,
            blocks,
            blast_radius,
            timing.t_refw,
        );
        Self {
            banks: vec![BankState::default(); geometry.total_banks()],
            groups: vec![GroupState::default(); geometry.total_bankgroups()],
            ranks: vec![RankState::default(); geometry.ranks() as usize],
            buses: vec![BusState::default(); geometry.channels as usize],
            row_counters: vec![0; geometry.total_banks() * geometry.rows_per_bank as usize],
            rows_per_ref,
            oracle,
            geometry,
            timing,
            vrr_both_sides,
        }
    }

    pub fn geometry(&self) -> &DeviceGeometry {
        &self.geometry
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn bank(&self, flat_bank: usize) -> &BankState {
        &self.banks[flat_bank]
    }

    pub fn oracle(&self) -> &SafetyOracle {
        &self.oracle
    }

    /// Row with the largest current damage count, as (address, count).
    pub fn oracle_max_damage(&self) -> (DramAddress, u32) {
        let (bank, row, count) = self.oracle.max_damage();
        (self.geometry.bank_address(bank).with_row(row), count)
    }

    pub fn row_counter(&self, flat_bank: usize, row: u32) -> u32 {
        self.row_counters[flat_bank * self.geometry.rows_per_bank as usize + row as usize]
    }

    /// Rows refreshed by a victim-row refresh of `aggressor`.
    pub fn victims_of(&self, aggressor: u32) -> Vec<u32> {
        let rows = self.geometry.rows_per_bank;
        let radius = self.oracle.blast_radius();
        let mut out = Vec::with_capacity(2 * radius as usize);
        for k in 1..=radius {
            if self.vrr_both_sides {
                if let Some(r) = aggressor.checked_sub(k) {
                    out.push(r);
                }
            }
            if let Some(r) = aggressor.checked_add(k).filter(|&r| r < rows) {
                out.push(r);
            } else if !self.vrr_both_sides {
                if let Some(r) = aggressor.checked_sub(k) {
                    out.push(r);
                }
            }
        }
        out
    }

    /// Bank occupancy of a victim-row refresh: one ACT+PRE pair per victim.
    pub fn vrr_cost(&self, aggressor: u32) -> Cycle {
        self.victims_of(aggressor).len().max(1) as Cycle * self.timing.t_rc
    }

    fn rank_banks(&self, flat_rank: usize) -> std::ops::Range<usize> {
        let per = self.geometry.banks_per_rank() as usize;
        flat_rank * per..(flat_rank + 1) * per
    }

    pub fn rank_all_closed(&self, flat_rank: usize) -> bool {
        self.rank_banks(flat_rank).all(|b| self.banks[b].open_row.is_none())
    }

    fn faw_ok(&self, rank: usize, now: Cycle) -> bool {
        let acts = &self.ranks[rank].recent_acts;
        acts.len() < 4 || now >= acts[0] + self.timing.t_faw
    }

    fn act_like_ok(&self, addr: &DramAddress, now: Cycle) -> bool {
        let b = &self.banks[self.geometry.flat_bank(addr)];
        let g = &self.groups[self.geometry.flat_bankgroup(addr)];
        let rank = self.geometry.flat_rank(addr);
        b.open_row.is_none()
            && now >= b.next_act
            && now >= b.blocked_until
            && now >= g.next_act
            && now >= self.ranks[rank].next_act
            && self.faw_ok(rank, now)
    }

    fn bus_ok(&self, addr: &DramAddress, is_write: bool, now: Cycle) -> bool {
        let bus = &self.buses[addr.channel as usize];
        let Some(last_rank) = bus.last_rank else {
            return true;
        };
        let mut gap = 0;
        if last_rank != addr.rank {
            gap = self.timing.t_rtrs;
        }
        if is_write && !bus.last_was_write {
            gap = gap.max(RD_TO_WR_TURNAROUND);
        }
        let latency = if is_write { self.timing.cwl } else { self.timing.cl };
        now + latency >= bus.data_free + gap
    }

    /// True iff `cmd` satisfies every timing and row-buffer constraint at `now`.
    pub fn can_issue(&self, cmd: &DramCommand, now: Cycle) -> Result<bool> {
        let addr = &cmd.address;
        if cmd.kind.is_rank_level() {
            let mut probe = *addr;
            probe.bankgroup = 0;
            probe.bank = 0;
            probe.row = 0;
            probe.column = 0;
            self.geometry.check(&probe)?;
        } else {
            self.geometry.check(addr)?;
        }
        let ok = match cmd.kind {
            CommandKind::Act => self.act_like_ok(addr, now),
            CommandKind::Vrr => self.act_like_ok(addr, now),
            CommandKind::Pre => {
                let b = &self.banks[self.geometry.flat_bank(addr)];
                b.open_row.is_some() && now >= b.next_pre
            }
            CommandKind::PreAll => {
                let rank = self.geometry.flat_rank(addr);
                self.rank_banks(rank).all(|i| {
                    let b = &self.banks[i];
                    b.open_row.is_none() || now >= b.next_pre
                })
            }
            CommandKind::Rd | CommandKind::Wr => {
                let is_write = cmd.kind == CommandKind::Wr;
                let b = &self.banks[self.geometry.flat_bank(addr)];
                let g = &self.groups[self.geometry.flat_bankgroup(addr)];
                let r = &self.ranks[self.geometry.flat_rank(addr)];
                let (bn, gn, rn) = if is_write {
                    (b.next_wr, g.next_wr, r.next_wr)
                } else {
                    (b.next_rd, g.next_rd, r.next_rd)
                };
                b.open_row == Some(addr.row)
                    && now >= bn
                    && now >= gn
                    && now >= rn
                    && self.bus_ok(addr, is_write, now)
            }
            CommandKind::Ref => {
                let rank = self.geometry.flat_rank(addr);
                self.rank_banks(rank).all(|i| {
                    let b = &self.banks[i];
                    b.open_row.is_none() && now >= b.next_act && now >= b.blocked_until
                })
            }
            CommandKind::Rfm => {
                let b = &self.banks[self.geometry.flat_bank(addr)];
                b.open_row.is_none() && now >= b.next_act && now >= b.blocked_until
            }
        };
        Ok(ok)
    }

    fn record_act_window(&mut self, addr: &DramAddress, now: Cycle) {
        let t = self.timing;
        let g = self.geometry.flat_bankgroup(addr);
        let r = self.geometry.flat_rank(addr);
        self.groups[g].next_act = self.groups[g].next_act.max(now + t.t_rrd_l);
        let rank = &mut self.ranks[r];
        rank.next_act = rank.next_act.max(now + t.t_rrd_s);
        rank.recent_acts.push_back(now);
        if rank.recent_acts.len() > 4 {
            rank.recent_acts.pop_front();
        }
    }

    fn refresh_victims(&mut self, bank: usize, aggressor: u32) -> Vec<u32> {
        let victims = self.victims_of(aggressor);
        for &v in &victims {
            self.oracle.refresh_row(bank, v);
        }
        victims
    }

    /// Applies `cmd` at `now`.
    ///
    /// Panics if the command is not legal: the controller must only issue
    /// commands for which [`can_issue`](Self::can_issue) holds.
    pub fn issue(&mut self, cmd: &DramCommand, now: Cycle) -> Vec<DeviceEvent> {
        match self.can_issue(cmd, now) {
            Ok(true) => {}
            other => panic!("illegal DRAM command {cmd:?} at cycle {now}: {other:?}"),
        }
        let t = self.timing;
        let addr = cmd.address;
        let mut events = Vec::new();
        match cmd.kind {
            CommandKind::Act => {
                let bank = self.geometry.flat_bank(&addr);
                let b = &mut self.banks[bank];
                b.open_row = Some(addr.row);
                b.next_rd = b.next_rd.max(now + t.t_rcd);
                b.next_wr = b.next_wr.max(now + t.t_rcd);
                b.next_pre = b.next_pre.max(now + t.t_ras);
                b.next_act = b.next_act.max(now + t.t_rc);
                self.record_act_window(&addr, now);
                self.oracle.on_activate(bank, addr.row, now);
                let idx = bank * self.geometry.rows_per_bank as usize + addr.row as usize;
                self.row_counters[idx] = self.row_counters[idx].saturating_add(1);
                events.push(DeviceEvent::Activated {
                    bank,
                    row: addr.row,
                    row_count: self.row_counters[idx],
                });
            }
            CommandKind::Pre => {
                let b = &mut self.banks[self.geometry.flat_bank(&addr)];
                b.open_row = None;
                b.next_act = b.next_act.max(now + t.t_rp);
            }
            CommandKind::PreAll => {
                let rank = self.geometry.flat_rank(&addr);
                for i in self.rank_banks(rank) {
                    let b = &mut self.banks[i];
                    if b.open_row.take().is_some() {
                        b.next_act = b.next_act.max(now + t.t_rp);
                    }
                }
            }
            CommandKind::Rd => {
                let b = &mut self.banks[self.geometry.flat_bank(&addr)];
                b.next_pre = b.next_pre.max(now + t.t_rtp);
                let g = &mut self.groups[self.geometry.flat_bankgroup(&addr)];
                g.next_rd = g.next_rd.max(now + t.t_ccd_l);
                g.next_wr = g.next_wr.max(now + t.t_ccd_l);
                let r = &mut self.ranks[self.geometry.flat_rank(&addr)];
                r.next_rd = r.next_rd.max(now + t.t_ccd_s);
                r.next_wr = r.next_wr.max(now + t.t_ccd_s);
                let bus = &mut self.buses[addr.channel as usize];
                bus.data_free = now + t.cl + t.bl;
                bus.last_rank = Some(addr.rank);
                bus.last_was_write = false;
            }
            CommandKind::Wr => {
                let write_end = now + t.cwl + t.bl;
                let b = &mut self.banks[self.geometry.flat_bank(&addr)];
                b.next_pre = b.next_pre.max(write_end + t.t_wr);
                let g = &mut self.groups[self.geometry.flat_bankgroup(&addr)];
                g.next_wr = g.next_wr.max(now + t.t_ccd_l);
                g.next_rd = g.next_rd.max(write_end + t.t_wtr_l);
                let r = &mut self.ranks[self.geometry.flat_rank(&addr)];
                r.next_wr = r.next_wr.max(now + t.t_ccd_s);
                r.next_rd = r.next_rd.max(write_end + t.t_wtr_s);
                let bus = &mut self.buses[addr.channel as usize];
                bus.data_free = write_end;
                bus.last_rank = Some(addr.rank);
                bus.last_was_write = true;
            }
            CommandKind::Ref => {
                let rank = self.geometry.flat_rank(&addr);
                let banks = self.rank_banks(rank);
                for i in banks.clone() {
                    let b = &mut self.banks[i];
                    b.next_act = b.next_act.max(now + t.t_rfc);
                    b.blocked_until = now + t.t_rfc;
                }
                let blocks = self.geometry.rows_per_bank / self.rows_per_ref;
                let block = self.ranks[rank].ref_block;
                self.ranks[rank].ref_block = (block + 1) % blocks;
                self.oracle.on_ref(rank, banks, block, self.rows_per_ref, now);
                events.push(DeviceEvent::Refreshed {
                    rank,
                    first_row: block * self.rows_per_ref,
                    rows: self.rows_per_ref,
                });
            }
            CommandKind::Vrr => {
                let bank = self.geometry.flat_bank(&addr);
                let cost = self.vrr_cost(addr.row);
                let b = &mut self.banks[bank];
                b.next_act = b.next_act.max(now + cost);
                b.blocked_until = now + cost;
                self.record_act_window(&addr, now);
                let rows = self.refresh_victims(bank, addr.row);
                events.push(DeviceEvent::VictimsRefreshed { bank, rows });
            }
            CommandKind::Rfm => {
                let bank = self.geometry.flat_bank(&addr);
                let b = &mut self.banks[bank];
                b.next_act = b.next_act.max(now + t.t_rfm);
                b.blocked_until = now + t.t_rfm;
                let rows = self.geometry.rows_per_bank as usize;
                let counters = &mut self.row_counters[bank * rows..(bank + 1) * rows];
                // Highest count wins; ties go to the lowest row.
                let (top, &count) = counters
                    .iter()
                    .enumerate()
                    .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
                    .expect("bank has rows");
                let aggressor = if count > 0 {
                    counters[top] = 0;
                    let row = top as u32;
                    let victims = self.refresh_victims(bank, row);
                    events.push(DeviceEvent::VictimsRefreshed { bank, rows: victims });
                    Some(row)
                } else {
                    None
                };
                events.push(DeviceEvent::RfmServed { bank, aggressor });
            }
        }
        events
    }

    /// Number of REF commands per tREFW needed to refresh every row once.
    pub fn refs_per_sweep(&self) -> u32 {
        self.geometry.rows_per_bank / self.rows_per_ref
    }
}
