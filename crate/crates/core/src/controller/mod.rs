//! Memory controller: request queues, FR-FCFS+Cap scheduling, periodic
//! refresh and execution of mitigation-requested commands.

mod mapping;

pub use mapping::{AddressMapping, Field, Slice};

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::breakhammer::BreakHammer;
use crate::dram::{
    CommandKind, CommandRecord, Cycle, Device, DeviceEvent, DramAddress, DramCommand, Preset,
    ThreadId,
};
use crate::energy::EnergyModel;
use crate::error::{Result, SimError};
use crate::mitigation::{ActionKind, Activation, Mitigation, PreventiveAction};

fn default_queue() -> usize {
    64
}
fn default_cap() -> u32 {
    4
}
fn default_high() -> usize {
    48
}
fn default_low() -> usize {
    16
}
fn default_radius() -> u32 {
    1
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default = "default_queue")]
    pub read_queue_size: usize,
    #[serde(default = "default_queue")]
    pub write_queue_size: usize,
    /// Row-hit bypasses of an older miss allowed per bank.
    #[serde(default = "default_cap")]
    pub cap: u32,
    #[serde(default = "default_high")]
    pub write_high_watermark: usize,
    #[serde(default = "default_low")]
    pub write_low_watermark: usize,
    #[serde(default = "default_radius")]
    pub blast_radius: u32,
    /// Refresh victims on both sides of an aggressor.
    #[serde(default = "default_true")]
    pub vrr_both_sides: bool,
    /// Address layout; the minimalist open-page layout when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<AddressMapping>,
    /// Keep every issued command in memory for later inspection.
    #[serde(default)]
    pub record_commands: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            read_queue_size: default_queue(),
            write_queue_size: default_queue(),
            cap: default_cap(),
            write_high_watermark: default_high(),
            write_low_watermark: default_low(),
            blast_radius: default_radius(),
            vrr_both_sides: true,
            mapping: None,
            record_commands: false,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.read_queue_size == 0 || self.write_queue_size == 0 {
            return Err(SimError::config("controller.read_queue_size", "queues need at least one entry"));
        }
        if self.write_low_watermark >= self.write_high_watermark
            || self.write_high_watermark > self.write_queue_size
        {
            return Err(SimError::config(
                "controller.write_high_watermark",
                "need low < high <= write_queue_size",
            ));
        }
        if self.blast_radius == 0 {
            return Err(SimError::config("controller.blast_radius", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemRequest {
    pub id: u64,
    pub thread: ThreadId,
    pub address: u64,
    pub is_write: bool,
    pub arrival: Cycle,
    pub completion: Option<Cycle>,
    pub dram: DramAddress,
    pub bank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueue {
    Accepted(u64),
    RejectedFull,
}

#[derive(Debug, Clone, Copy)]
struct PendingAction {
    action: PreventiveAction,
    remaining: u32,
    // Request whose ACT triggered the action; it may finish first.
    grace: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerStats {
    /// Issued commands, indexed like [`CommandKind::ALL`].
    pub commands: [u64; 8],
    /// Preventive actions requested by the mitigation, per [`ActionKind::ALL`].
    pub actions_triggered: [u64; 3],
    /// Preventive actions whose commands have all been issued.
    pub actions_executed: [u64; 3],
    /// VRR and RFM commands issued on behalf of each action kind.
    pub action_commands: [u64; 3],
    pub demand_acts_by_thread: Vec<u64>,
    pub reads_served: u64,
    pub writes_served: u64,
    pub row_hits: u64,
    pub rejected_full: u64,
    pub cap_forced: u64,
    pub energy_pj: f64,
    pub energy_pj_by_thread: Vec<f64>,
}

impl ControllerStats {
    pub fn command_count(&self, kind: CommandKind) -> u64 {
        self.commands[kind as usize]
    }

    pub fn triggered(&self, kind: ActionKind) -> u64 {
        self.actions_triggered[kind as usize]
    }

    pub fn executed(&self, kind: ActionKind) -> u64 {
        self.actions_executed[kind as usize]
    }

    pub fn total_triggered(&self) -> u64 {
        self.actions_triggered.iter().sum()
    }
}

/// One controller driving every channel of a [`Device`]; each channel
/// issues at most one command per cycle.
pub struct Controller {
    config: ControllerConfig,
    mapping: AddressMapping,
    device: Device,
    energy: EnergyModel,
    mitigation: Option<Box<dyn Mitigation>>,
    breakhammer: Option<BreakHammer>,
    reads: Vec<MemRequest>,
    writes: Vec<MemRequest>,
    cap: Vec<u32>,
    draining: bool,
    pending: Vec<VecDeque<PendingAction>>,
    refresh_due: Vec<Cycle>,
    refresh_pending: Vec<bool>,
    inflight: BinaryHeap<Reverse<(Cycle, u64)>>,
    inflight_reqs: std::collections::HashMap<u64, MemRequest>,
    log: Option<Vec<CommandRecord>>,
    stats: ControllerStats,
    next_id: u64,
    scratch: Vec<PreventiveAction>,
    banks_per_rank: usize,
    ranks_per_channel: usize,
}

impl Controller {
    pub fn new(
        config: ControllerConfig,
        preset: &Preset,
        threads: usize,
        mitigation: Option<Box<dyn Mitigation>>,
        breakhammer: Option<BreakHammer>,
    ) -> Result<Self> {
        config.validate()?;
        preset.validate()?;
        let geometry = preset.geometry;
        let mapping = config.mapping.clone().unwrap_or_else(|| AddressMapping::mop(&geometry));
        mapping.validate(&geometry)?;
        let device = Device::new(geometry, preset.timing, config.blast_radius, config.vrr_both_sides);
        let ranks = geometry.ranks() as usize;
        Ok(Self {
            log: config.record_commands.then(Vec::new),
            mapping,
            device,
            energy: preset.energy,
            mitigation,
            breakhammer,
            reads: Vec::with_capacity(config.read_queue_size),
            writes: Vec::with_capacity(config.write_queue_size),
            cap: vec![0; geometry.total_banks()],
            draining: false,
            pending: vec![VecDeque::new(); geometry.total_banks()],
            refresh_due: vec![preset.timing.t_refi; ranks],
            refresh_pending: vec![false; ranks],
            inflight: BinaryHeap::new(),
            inflight_reqs: std::collections::HashMap::new(),
            stats: ControllerStats {
                demand_acts_by_thread: vec![0; threads],
                energy_pj_by_thread: vec![0.0; threads],
                ..Default::default()
            },
            next_id: 0,
            scratch: Vec::new(),
            banks_per_rank: geometry.banks_per_rank() as usize,
            ranks_per_channel: geometry.ranks_per_channel as usize,
            config,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn mapping(&self) -> &AddressMapping {
        &self.mapping
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn stats(&self) -> &ControllerStats {
        &self.stats
    }

    pub fn command_log(&self) -> Option<&[CommandRecord]> {
        self.log.as_deref()
    }

    pub fn breakhammer(&self) -> Option<&BreakHammer> {
        self.breakhammer.as_ref()
    }

    pub fn mitigation_name(&self) -> &'static str {
        self.mitigation.as_ref().map_or("none", |m| m.name())
    }

    pub fn read_queue_len(&self) -> usize {
        self.reads.len()
    }

    pub fn write_queue_len(&self) -> usize {
        self.writes.len()
    }

    pub fn is_draining(&self) -> bool {
        self.draining
    }

    pub fn cap_counter(&self, bank: usize) -> u32 {
        self.cap[bank]
    }

    pub fn pending_actions(&self) -> usize {
        self.pending.iter().map(VecDeque::len).sum()
    }

    pub fn outstanding(&self) -> usize {
        self.reads.len() + self.writes.len() + self.inflight.len()
    }

    pub fn enqueue(&mut self, thread: ThreadId, address: u64, is_write: bool, now: Cycle) -> Enqueue {
        let (queue, size) = if is_write {
            (&mut self.writes, self.config.write_queue_size)
        } else {
            (&mut self.reads, self.config.read_queue_size)
        };
        if queue.len() >= size {
            self.stats.rejected_full += 1;
            return Enqueue::RejectedFull;
        }
        let dram = self.mapping.decompose(address);
        let id = self.next_id;
        self.next_id += 1;
        queue.push(MemRequest {
            id,
            thread,
            address,
            is_write,
            arrival: now,
            completion: None,
            dram,
            bank: self.device.geometry().flat_bank(&dram),
        });
        Enqueue::Accepted(id)
    }

    /// Moves reads whose data has returned by `now` into `out`.
    pub fn drain_completed(&mut self, now: Cycle, out: &mut Vec<MemRequest>) {
        while let Some(&Reverse((at, id))) = self.inflight.peek() {
            if at > now {
                break;
            }
            self.inflight.pop();
            out.extend(self.inflight_reqs.remove(&id));
        }
    }

    /// Advances the controller by one DRAM cycle.
    pub fn tick(&mut self, now: Cycle) {
        if let Some(m) = self.mitigation.as_mut() {
            m.tick(now);
        }
        if let Some(bh) = self.breakhammer.as_mut() {
            bh.tick(now);
        }
        for (rank, due) in self.refresh_due.iter().enumerate() {
            if now >= *due {
                self.refresh_pending[rank] = true;
            }
        }
        if self.writes.len() >= self.config.write_high_watermark {
            self.draining = true;
        } else if self.writes.len() <= self.config.write_low_watermark {
            self.draining = false;
        }
        for ch in 0..self.device.geometry().channels as usize {
            let _ = self.issue_refresh(ch, now)
                || self.issue_mitigation(ch, now)
                || self.issue_data(ch, now);
        }
    }

    fn rank_address(&self, flat_rank: usize) -> DramAddress {
        DramAddress {
            channel: (flat_rank / self.ranks_per_channel) as u32,
            rank: (flat_rank % self.ranks_per_channel) as u32,
            ..Default::default()
        }
    }

    fn rank_of_bank(&self, bank: usize) -> usize {
        bank / self.banks_per_rank
    }

    fn try_issue(&mut self, cmd: DramCommand, thread: Option<ThreadId>, now: Cycle) -> Option<Vec<DeviceEvent>> {
        if !self.device.can_issue(&cmd, now).expect("controller addresses are in range") {
            return None;
        }
        let events = self.device.issue(&cmd, now);
        let victims = events
            .iter()
            .map(|e| match e {
                DeviceEvent::VictimsRefreshed { rows, .. } => rows.len() as u32,
                _ => 0,
            })
            .sum();
        let rec = CommandRecord {
            cycle: now,
            command: cmd,
            thread,
            victims,
        };
        self.stats.commands[cmd.kind as usize] += 1;
        let pj = self.energy.command_pj(&rec);
        self.stats.energy_pj += pj;
        if let Some(t) = thread {
            self.stats.energy_pj_by_thread[t] += pj;
        }
        if let Some(log) = self.log.as_mut() {
            log.push(rec);
        }
        Some(events)
    }

    fn issue_refresh(&mut self, ch: usize, now: Cycle) -> bool {
        let first = ch * self.ranks_per_channel;
        for rank in first..first + self.ranks_per_channel {
            if !self.refresh_pending[rank] {
                continue;
            }
            let addr = self.rank_address(rank);
            if !self.device.rank_all_closed(rank) {
                if self.try_issue(DramCommand::new(CommandKind::PreAll, addr), None, now).is_some() {
                    let banks = rank * self.banks_per_rank..(rank + 1) * self.banks_per_rank;
                    self.cap[banks].fill(0);
                    return true;
                }
            } else if self.try_issue(DramCommand::new(CommandKind::Ref, addr), None, now).is_some() {
                self.refresh_pending[rank] = false;
                self.refresh_due[rank] += self.device.timing().t_refi;
                return true;
            }
        }
        false
    }

    fn issue_mitigation(&mut self, ch: usize, now: Cycle) -> bool {
        let per_channel = self.banks_per_rank * self.ranks_per_channel;
        for bank in ch * per_channel..(ch + 1) * per_channel {
            let Some(front) = self.pending[bank].front().copied() else {
                continue;
            };
            if self.refresh_pending[self.rank_of_bank(bank)] {
                continue;
            }
            let target = front.action.target;
            if let Some(id) = front.grace {
                let open = self.device.bank(bank).open_row;
                let waiting = self
                    .reads
                    .iter()
                    .chain(&self.writes)
                    .any(|r| r.id == id && open == Some(r.dram.row));
                if waiting {
                    continue;
                }
            }
            if self.device.bank(bank).open_row.is_some() {
                if self.try_issue(DramCommand::new(CommandKind::Pre, target), None, now).is_some() {
                    self.cap[bank] = 0;
                    return true;
                }
                continue;
            }
            let cmd = match front.action.kind {
                ActionKind::VictimRefresh => DramCommand::new(CommandKind::Vrr, target),
                _ => DramCommand::new(CommandKind::Rfm, target.with_row(0)),
            };
            if self.try_issue(cmd, None, now).is_some() {
                let p = self.pending[bank].front_mut().expect("front exists");
                self.stats.action_commands[p.action.kind as usize] += 1;
                p.remaining -= 1;
                if p.remaining == 0 {
                    self.stats.actions_executed[p.action.kind as usize] += 1;
                    self.pending[bank].pop_front();
                }
                return true;
            }
        }
        false
    }

    fn bank_available(&self, bank: usize) -> bool {
        self.pending[bank].is_empty() && !self.refresh_pending[self.rank_of_bank(bank)]
    }

    fn hit_allowed(&self, req: &MemRequest) -> bool {
        if self.refresh_pending[self.rank_of_bank(req.bank)] {
            return false;
        }
        self.pending[req.bank]
            .front()
            .is_none_or(|p| p.grace == Some(req.id))
    }

    fn issue_data(&mut self, ch: usize, now: Cycle) -> bool {
        let ch = ch as u32;
        let reads_here = self.reads.iter().any(|r| r.dram.channel == ch);
        let order: &[bool] = if self.draining {
            &[true, false]
        } else if reads_here {
            &[false]
        } else {
            &[true]
        };
        order.iter().any(|&w| self.schedule_queue(w, ch, now))
    }

    /// FR-FCFS with a per-bank cap on hit-over-miss bypasses.
    fn schedule_queue(&mut self, writes: bool, ch: u32, now: Cycle) -> bool {
        let banks = self.cap.len();
        let mut oldest: Vec<Option<usize>> = vec![None; banks];
        let mut oldest_is_miss = vec![false; banks];
        let mut eligible_hit = vec![false; banks];
        let mut ready_hit = None;
        {
            let queue = if writes { &self.writes } else { &self.reads };
            for (i, req) in queue.iter().enumerate() {
                if req.dram.channel != ch || !self.hit_allowed(req) {
                    continue;
                }
                let open = self.device.bank(req.bank).open_row;
                let hit = open == Some(req.dram.row);
                if oldest[req.bank].is_none() {
                    oldest[req.bank] = Some(i);
                    oldest_is_miss[req.bank] = !hit;
                }
                if !hit {
                    continue;
                }
                let is_oldest = oldest[req.bank] == Some(i);
                if !is_oldest && self.cap[req.bank] >= self.config.cap {
                    continue;
                }
                eligible_hit[req.bank] = true;
                if ready_hit.is_none() {
                    let kind = if writes { CommandKind::Wr } else { CommandKind::Rd };
                    let cmd = DramCommand::new(kind, req.dram);
                    if self.device.can_issue(&cmd, now).unwrap_or(false) {
                        ready_hit = Some(i);
                    }
                }
            }
        }

        if let Some(i) = ready_hit {
            let req = if writes { self.writes.remove(i) } else { self.reads.remove(i) };
            let kind = if writes { CommandKind::Wr } else { CommandKind::Rd };
            self.try_issue(DramCommand::new(kind, req.dram), Some(req.thread), now)
                .expect("checked legal");
            self.stats.row_hits += 1;
            if oldest[req.bank] != Some(i) && oldest_is_miss[req.bank] {
                self.cap[req.bank] += 1;
                if self.cap[req.bank] >= self.config.cap {
                    self.stats.cap_forced += 1;
                }
            }
            if writes {
                self.stats.writes_served += 1;
            } else {
                let t = self.device.timing();
                let done = now + t.cl + t.bl;
                let mut req = req;
                req.completion = Some(done);
                self.inflight.push(Reverse((done, req.id)));
                self.inflight_reqs.insert(req.id, req);
                self.stats.reads_served += 1;
            }
            return true;
        }

        let n = if writes { self.writes.len() } else { self.reads.len() };
        for i in 0..n {
            let req = if writes { self.writes[i] } else { self.reads[i] };
            if req.dram.channel != ch || !self.bank_available(req.bank) {
                continue;
            }
            let open = self.device.bank(req.bank).open_row;
            if open == Some(req.dram.row) {
                continue;
            }
            if open.is_some() {
                if eligible_hit[req.bank] {
                    continue;
                }
                if self.try_issue(DramCommand::new(CommandKind::Pre, req.dram), None, now).is_some() {
                    self.cap[req.bank] = 0;
                    return true;
                }
                continue;
            }
            if let Some(m) = self.mitigation.as_ref() {
                if m.activation_allowed_at(req.bank, req.dram.row) > now {
                    continue;
                }
            }
            if let Some(events) = self.try_issue(DramCommand::new(CommandKind::Act, req.dram), Some(req.thread), now) {
                self.cap[req.bank] = 0;
                self.stats.demand_acts_by_thread[req.thread] += 1;
                self.on_activation(&events, req, now);
                return true;
            }
        }
        false
    }

    fn on_activation(&mut self, events: &[DeviceEvent], req: MemRequest, now: Cycle) {
        if let Some(bh) = self.breakhammer.as_mut() {
            bh.record_activation(req.thread);
        }
        let Some(mitigation) = self.mitigation.as_mut() else {
            return;
        };
        let row_count = events
            .iter()
            .find_map(|e| match *e {
                DeviceEvent::Activated { row_count, .. } => Some(row_count),
                _ => None,
            })
            .unwrap_or(0);
        let act = Activation {
            thread: Some(req.thread),
            address: req.dram,
            bank: req.bank,
            row_count,
            now,
            vrr_cost: self.device.vrr_cost(req.dram.row),
            rfm_cost: self.device.timing().t_rfm,
        };
        self.scratch.clear();
        mitigation.on_activation(&act, &mut self.scratch);
        for action in self.scratch.drain(..) {
            self.stats.actions_triggered[action.kind as usize] += 1;
            let remaining = match action.kind {
                ActionKind::VictimRefresh => 1,
                _ => action.rfm_count.max(1),
            };
            self.pending[action.bank].push_back(PendingAction {
                action,
                remaining,
                grace: Some(req.id),
            });
            if let Some(bh) = self.breakhammer.as_mut() {
                bh.on_action(action.kind, now);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitigation::{build, secure_config, Mechanism, MitigationConfig};

    fn controller(record: bool) -> Controller {
        let cfg = ControllerConfig {
            record_commands: record,
            ..Default::default()
        };
        Controller::new(cfg, &Preset::ddr5_4800(), 4, None, None).unwrap()
    }

    fn addr_of(c: &Controller, bank: usize, row: u32, col: u32) -> u64 {
        let a = c.device().geometry().bank_address(bank).with_row(row);
        c.mapping().compose(&DramAddress { column: col, ..a })
    }

    fn run(c: &mut Controller, from: Cycle, to: Cycle, out: &mut Vec<MemRequest>) {
        for now in from..to {
            c.tick(now);
            c.drain_completed(now, out);
        }
    }

    #[test]
    fn queue_rejects_when_full() {
        let mut c = controller(false);
        for i in 0..64 {
            assert!(matches!(c.enqueue(0, i * 64, false, 0), Enqueue::Accepted(_)));
        }
        assert_eq!(c.enqueue(0, 1 << 20, false, 0), Enqueue::RejectedFull);
        assert!(matches!(c.enqueue(0, 0, true, 0), Enqueue::Accepted(_)));
        assert_eq!(c.stats().rejected_full, 1);
    }

    #[test]
    fn read_completes_with_latency() {
        let mut c = controller(true);
        c.enqueue(2, 0, false, 0);
        let mut done = Vec::new();
        run(&mut c, 0, 200, &mut done);
        assert_eq!(done.len(), 1);
        let t = *c.device().timing();
        // ACT at 0, RD at tRCD, data after CL + BL.
        assert_eq!(done[0].completion, Some(t.t_rcd + t.cl + t.bl));
        assert_eq!(c.stats().demand_acts_by_thread[2], 1);
        let log = c.command_log().unwrap();
        assert_eq!(log[0].command.kind, CommandKind::Act);
        assert_eq!(log[0].thread, Some(2));
    }

    #[test]
    fn hit_bypasses_older_miss_until_cap() {
        let mut c = controller(true);
        // Open row 5 of bank 0.
        c.enqueue(0, addr_of(&c, 0, 5, 0), false, 0);
        let mut done = Vec::new();
        run(&mut c, 0, 100, &mut done);
        // Older miss, then a stream of hits to the open row.
        c.enqueue(1, addr_of(&c, 0, 9, 0), false, 100);
        for col in 1..=8 {
            c.enqueue(0, addr_of(&c, 0, 5, col), false, 100);
        }
        run(&mut c, 100, 2000, &mut done);
        let log = c.command_log().unwrap();
        let after: Vec<_> = log.iter().filter(|r| r.cycle >= 100).collect();
        let kinds: Vec<_> = after.iter().map(|r| r.command.kind).collect();
        // Four bypassing hits, then the forced miss: PRE, ACT, RD.
        assert_eq!(
            &kinds[..7],
            &[
                CommandKind::Rd,
                CommandKind::Rd,
                CommandKind::Rd,
                CommandKind::Rd,
                CommandKind::Pre,
                CommandKind::Act,
                CommandKind::Rd
            ]
        );
        assert_eq!(after[6].command.address.row, 9);
        assert_eq!(c.stats().cap_forced, 1);
        assert_eq!(done.len(), 10);
    }

    #[test]
    fn first_hit_increments_cap_counter() {
        let mut c = controller(false);
        c.enqueue(0, addr_of(&c, 0, 5, 0), false, 0);
        let mut done = Vec::new();
        run(&mut c, 0, 100, &mut done);
        c.enqueue(1, addr_of(&c, 0, 9, 0), false, 100);
        c.enqueue(0, addr_of(&c, 0, 5, 1), false, 100);
        let mut now = 100;
        while c.cap_counter(0) == 0 {
            c.tick(now);
            now += 1;
            assert!(now < 1000);
        }
        assert_eq!(c.cap_counter(0), 1);
        assert_eq!(c.read_queue_len(), 1);
    }

    #[test]
    fn refresh_issued_every_refi() {
        let mut c = controller(true);
        let t = *c.device().timing();
        let mut done = Vec::new();
        run(&mut c, 0, t.t_refi * 3 + 10, &mut done);
        let refs: Vec<_> = c
            .command_log()
            .unwrap()
            .iter()
            .filter(|r| r.command.kind == CommandKind::Ref)
            .map(|r| (r.command.address.rank, r.cycle))
            .collect();
        assert_eq!(refs.len(), 6);
        assert!(refs.iter().all(|&(_, cyc)| cyc % t.t_refi < 10));
        assert_eq!(refs[0].1, t.t_refi);
    }

    #[test]
    fn write_drain_hysteresis() {
        let mut c = controller(false);
        for i in 0..48 {
            c.enqueue(0, i * 4096 * 64, true, 0);
        }
        c.enqueue(1, 64, false, 0);
        c.tick(0);
        assert!(c.is_draining());
        let mut done = Vec::new();
        let mut now = 1;
        while c.write_queue_len() > 16 {
            c.tick(now);
            c.drain_completed(now, &mut done);
            now += 1;
        }
        c.tick(now);
        assert!(!c.is_draining());
    }

    #[test]
    fn mitigation_preempts_data_for_its_bank() {
        let preset = Preset::ddr5_4800();
        let mut mc = MitigationConfig::new(Mechanism::Para, 1024);
        mc.para_probability = Some(1.0);
        let params = secure_config(&mc, &preset.timing).unwrap();
        let m = build(&params, preset.geometry.total_banks(), 1);
        let cfg = ControllerConfig {
            record_commands: true,
            ..Default::default()
        };
        let mut c = Controller::new(cfg, &preset, 1, m, None).unwrap();
        c.enqueue(0, addr_of(&c, 3, 100, 0), false, 0);
        let mut done = Vec::new();
        run(&mut c, 0, 2000, &mut done);
        let kinds: Vec<_> = c.command_log().unwrap().iter().map(|r| r.command.kind).collect();
        assert_eq!(done.len(), 1);
        assert_eq!(
            kinds,
            [CommandKind::Act, CommandKind::Rd, CommandKind::Pre, CommandKind::Vrr]
        );
        assert_eq!(c.stats().triggered(ActionKind::VictimRefresh), 1);
        assert_eq!(c.stats().executed(ActionKind::VictimRefresh), 1);
    }

    #[test]
    fn pending_action_blocks_other_requests_to_bank() {
        let preset = Preset::ddr5_4800();
        let mut mc = MitigationConfig::new(Mechanism::Para, 1024);
        mc.para_probability = Some(1.0);
        let params = secure_config(&mc, &preset.timing).unwrap();
        let m = build(&params, preset.geometry.total_banks(), 1);
        let cfg = ControllerConfig {
            record_commands: true,
            ..Default::default()
        };
        let mut c = Controller::new(cfg, &preset, 1, m, None).unwrap();
        c.enqueue(0, addr_of(&c, 3, 100, 0), false, 0);
        c.enqueue(0, addr_of(&c, 3, 100, 1), false, 0);
        let mut done = Vec::new();
        run(&mut c, 0, 3000, &mut done);
        let kinds: Vec<_> = c.command_log().unwrap().iter().map(|r| r.command.kind).collect();
        // The second hit waits behind the victim refresh.
        assert_eq!(&kinds[..5], &[CommandKind::Act, CommandKind::Rd, CommandKind::Pre, CommandKind::Vrr, CommandKind::Act]);
        assert_eq!(done.len(), 2);
    }
}
