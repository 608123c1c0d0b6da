mod common;

use std::collections::HashMap;

use bhsim::dram::{CommandKind, CommandRecord, Cycle, TimingParams, REFS_PER_SWEEP};
use bhsim::mitigation::{Mechanism, MitigationConfig};
use common::{preset, Traffic};

/// Longest gap any REF block went unrefreshed, per rank, up to `end`.
pub fn worst_refresh_gap(log: &[CommandRecord], ranks: usize, end: Cycle) -> Vec<Cycle> {
    let mut last: HashMap<(usize, u32), Cycle> = HashMap::new();
    let mut issued = vec![0u32; ranks];
    let mut worst = vec![0; ranks];
    for rec in log.iter().filter(|r| r.command.kind == CommandKind::Ref) {
        let rank = rec.command.address.rank as usize;
        let block = issued[rank] % REFS_PER_SWEEP;
        issued[rank] += 1;
        let prev = last.insert((rank, block), rec.cycle).unwrap_or(0);
        worst[rank] = worst[rank].max(rec.cycle - prev);
    }
    for (rank, w) in worst.iter_mut().enumerate() {
        for block in 0..REFS_PER_SWEEP {
            let prev = last.get(&(rank, block)).copied().unwrap_or(0);
            *w = (*w).max(end - prev);
        }
    }
    worst
}

#[test]
fn every_row_refreshed_within_each_window() {
    let p = preset();
    let t: TimingParams = p.timing;
    let mut traffic = Traffic::new(&MitigationConfig::new(Mechanism::None, 1024), 3, true);
    traffic.banks = 32;
    traffic.rate = 0.2;
    let end = 2 * t.t_refw + t.t_refi;
    let mut done = Vec::new();
    while traffic.now < end {
        let offer = traffic.now.is_multiple_of(256);
        traffic.step(offer, &mut done);
    }
    let log = traffic.ctrl.command_log().unwrap();
    let refs = log.iter().filter(|r| r.command.kind == CommandKind::Ref).count() as u64;
    assert!(refs >= 2 * (end / t.t_refi) - 2, "{refs} REFs");
    assert!(traffic.completed_reads > 10_000);
    for (rank, gap) in worst_refresh_gap(log, 2, end).into_iter().enumerate() {
        assert!(gap <= t.t_refw, "rank {rank}: block unrefreshed for {gap} cycles");
    }
    assert_eq!(traffic.ctrl.device().oracle().liveness_violations(end), 0);
}
