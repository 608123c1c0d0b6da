use super::{ActionKind, Activation, MisraGries, Mitigation, PreventiveAction};
use crate::dram::Cycle;

/// Per-bank Misra-Gries tracking with victim refresh every `threshold`
/// estimated activations of a row.
pub struct Graphene {
    tables: Vec<MisraGries>,
    threshold: u64,
    reset_period: Cycle,
    next_reset: Cycle,
}

impl Graphene {
    pub fn new(banks: usize, entries: usize, threshold: u32, reset_period: Cycle) -> Self {
        Self {
            tables: vec![MisraGries::new(entries); banks],
            threshold: threshold as u64,
            reset_period,
            next_reset: reset_period,
        }
    }

    pub fn table(&self, bank: usize) -> &MisraGries {
        &self.tables[bank]
    }
}

impl Mitigation for Graphene {
    fn name(&self) -> &'static str {
        "graphene"
    }

    fn on_activation(&mut self, act: &Activation, out: &mut Vec<PreventiveAction>) {
        let table = &mut self.tables[act.bank];
        let Some((count, base)) = table.observe(act.address.row) else {
            return;
        };
        if count - base >= self.threshold {
            table.mark_refreshed(act.address.row);
            out.push(PreventiveAction {
                kind: ActionKind::VictimRefresh,
                target: act.address,
                bank: act.bank,
                rfm_count: 1,
                cost_cycles: act.vrr_cost,
                trigger_cycle: act.now,
            });
        }
    }

    fn tick(&mut self, now: Cycle) {
        while now >= self.next_reset {
            self.tables.iter_mut().for_each(MisraGries::reset);
            self.next_reset += self.reset_period;
        }
    }
}
