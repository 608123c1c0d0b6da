use super::{ActionKind, Activation, Mitigation, PreventiveAction};

/// Issues one RFM command to a bank every `threshold` activations.
pub struct Rfm {
    threshold: u32,
    rolling: Vec<u32>,
}

impl Rfm {
    pub fn new(banks: usize, threshold: u32) -> Self {
        Self {
            threshold: threshold.max(1),
            rolling: vec![0; banks],
        }
    }

    pub fn rolling_count(&self, bank: usize) -> u32 {
        self.rolling[bank]
    }
}

impl Mitigation for Rfm {
    fn name(&self) -> &'static str {
        "rfm"
    }

    fn on_activation(&mut self, act: &Activation, out: &mut Vec<PreventiveAction>) {
        let count = &mut self.rolling[act.bank];
        *count += 1;
        if *count >= self.threshold {
            *count = 0;
            out.push(rfm_action(ActionKind::RfmCommand, act, 1));
        }
    }
}

/// Per-row activation counting on the DRAM die with a back-off signal once
/// a row counter reaches the back-off threshold.
pub struct Prac {
    backoff_threshold: u32,
    burst: u32,
}

impl Prac {
    pub fn new(backoff_threshold: u32, burst: u32) -> Self {
        Self {
            backoff_threshold: backoff_threshold.max(1),
            burst,
        }
    }
}

impl Mitigation for Prac {
    fn name(&self) -> &'static str {
        "prac"
    }

    fn on_activation(&mut self, act: &Activation, out: &mut Vec<PreventiveAction>) {
        if act.row_count >= self.backoff_threshold {
            out.push(rfm_action(ActionKind::BackOffRfmBurst, act, self.burst));
        }
    }
}

fn rfm_action(kind: ActionKind, act: &Activation, rfm_count: u32) -> PreventiveAction {
    let mut target = act.address;
    target.column = 0;
    PreventiveAction {
        kind,
        target,
        bank: act.bank,
        rfm_count,
        cost_cycles: rfm_count as u64 * act.rfm_cost,
        trigger_cycle: act.now,
    }
}
