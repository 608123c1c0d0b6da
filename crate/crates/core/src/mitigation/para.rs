use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ActionKind, Activation, Mitigation, PreventiveAction};

/// Probabilistic adjacent-row refresh.
pub struct Para {
    probability: f64,
    rng: ChaCha8Rng,
}

impl Para {
    pub fn new(probability: f64, seed: u64) -> Self {
        Self {
            probability,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Mitigation for Para {
    fn name(&self) -> &'static str {
        "para"
    }

    fn on_activation(&mut self, act: &Activation, out: &mut Vec<PreventiveAction>) {
        if self.rng.gen_bool(self.probability) {
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
}
