//! RowHammer mitigation mechanisms.
//!
//! Each mechanism observes row activations and either emits
//! [`PreventiveAction`]s for the controller to execute or, for BlockHammer,
//! delays future activations of hot rows.

mod blockhammer;
mod bloom;
mod graphene;
mod misra_gries;
mod para;
mod rfm;

pub use blockhammer::BlockHammer;
pub use bloom::CountingBloomFilter;
pub use graphene::Graphene;
pub use misra_gries::MisraGries;
pub use para::Para;
pub use rfm::{Prac, Rfm};

use serde::{Deserialize, Serialize};

use crate::dram::{Cycle, DramAddress, ThreadId, TimingParams};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    VictimRefresh,
    RfmCommand,
    BackOffRfmBurst,
}

impl ActionKind {
    pub const ALL: [ActionKind; 3] = [
        ActionKind::VictimRefresh,
        ActionKind::RfmCommand,
        ActionKind::BackOffRfmBurst,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActionKind::VictimRefresh => "victim_refresh",
            ActionKind::RfmCommand => "rfm_command",
            ActionKind::BackOffRfmBurst => "back_off_rfm_burst",
        }
    }
}

/// A RowHammer-preventive action requested by a mitigation mechanism.
///
/// The target bank is blocked for `cost_cycles` once the controller
/// executes the action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreventiveAction {
    pub kind: ActionKind,
    /// Target bank; `row` is the aggressor for victim refreshes.
    pub target: DramAddress,
    pub bank: usize,
    /// Number of RFM commands (bursts only; 1 otherwise).
    pub rfm_count: u32,
    pub cost_cycles: Cycle,
    pub trigger_cycle: Cycle,
}

/// Facts about one activation handed to the mechanism.
#[derive(Debug, Clone, Copy)]
pub struct Activation {
    pub thread: Option<ThreadId>,
    pub address: DramAddress,
    pub bank: usize,
    /// On-die activation counter of the row after this ACT.
    pub row_count: u32,
    pub now: Cycle,
    /// Bank occupancy of a victim refresh of this row.
    pub vrr_cost: Cycle,
    /// Bank occupancy of one RFM command.
    pub rfm_cost: Cycle,
}

pub trait Mitigation: Send {
    fn name(&self) -> &'static str;

    fn on_activation(&mut self, act: &Activation, out: &mut Vec<PreventiveAction>);

    /// Earliest cycle at which `row` of `bank` may be activated again.
    fn activation_allowed_at(&self, _bank: usize, _row: u32) -> Cycle {
        0
    }

    /// Advances time-based state (table resets, filter epochs).
    fn tick(&mut self, _now: Cycle) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    #[default]
    None,
    Para,
    Graphene,
    Rfm,
    Prac,
    BlockHammer,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::None => "none",
            Mechanism::Para => "para",
            Mechanism::Graphene => "graphene",
            Mechanism::Rfm => "rfm",
            Mechanism::Prac => "prac",
            Mechanism::BlockHammer => "blockhammer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Mechanism::None,
            Mechanism::Para,
            Mechanism::Graphene,
            Mechanism::Rfm,
            Mechanism::Prac,
            Mechanism::BlockHammer,
        ]
        .into_iter()
        .find(|m| m.name().eq_ignore_ascii_case(s))
    }

    pub fn is_deterministic(self) -> bool {
        !matches!(self, Mechanism::Para)
    }
}

fn default_graphene_budget() -> usize {
    32 * 1024
}
fn default_prac_burst() -> u32 {
    4
}
fn default_bloom_counters() -> usize {
    1024
}
fn default_bloom_hashes() -> usize {
    4
}
fn default_rfm_raaimt() -> u32 {
    80
}

/// Mechanism selection and optional parameter overrides. Parameters left
/// unset are derived from `nrh` by [`secure_config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MitigationConfig {
    pub mechanism: Mechanism,
    pub nrh: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub para_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graphene_threshold: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graphene_entries: Option<usize>,
    /// Hardware budget for Graphene table entries per bank.
    #[serde(default = "default_graphene_budget")]
    pub graphene_entry_budget: usize,
    /// Default RFM interval, in activations per bank.
    #[serde(default = "default_rfm_raaimt")]
    pub rfm_raaimt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rfm_threshold: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prac_backoff_threshold: Option<u32>,
    #[serde(default = "default_prac_burst")]
    pub prac_burst: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blockhammer_threshold: Option<u32>,
    #[serde(default = "default_bloom_counters")]
    pub blockhammer_counters: usize,
    #[serde(default = "default_bloom_hashes")]
    pub blockhammer_hashes: usize,
    /// Exact per-row counters instead of counting Bloom filters.
    #[serde(default)]
    pub blockhammer_exact: bool,
}

impl MitigationConfig {
    pub fn new(mechanism: Mechanism, nrh: u32) -> Self {
        Self {
            mechanism,
            nrh,
            seed: 0,
            para_probability: None,
            graphene_threshold: None,
            graphene_entries: None,
            graphene_entry_budget: default_graphene_budget(),
            rfm_raaimt: default_rfm_raaimt(),
            rfm_threshold: None,
            prac_backoff_threshold: None,
            prac_burst: default_prac_burst(),
            blockhammer_threshold: None,
            blockhammer_counters: default_bloom_counters(),
            blockhammer_hashes: default_bloom_hashes(),
            blockhammer_exact: false,
        }
    }
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self::new(Mechanism::None, 1024)
    }
}

/// Fully resolved mechanism parameters, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "lowercase")]
pub enum MechanismParams {
    None,
    Para {
        probability: f64,
        /// Probability that a row survives `nrh / 2` activations unrefreshed.
        survival_bound: f64,
    },
    Graphene {
        threshold: u32,
        entries: usize,
        reset_period: Cycle,
    },
    Rfm {
        threshold: u32,
    },
    Prac {
        backoff_threshold: u32,
        burst: u32,
    },
    BlockHammer {
        blacklist_threshold: u32,
        row_limit: u32,
        delay: Cycle,
        epoch: Cycle,
        counters: usize,
        hashes: usize,
        exact: bool,
    },
}

/// PARA probability such that a row survives `threshold` activations
/// without a neighbour refresh with probability at most 2^-40.
pub fn para_probability(threshold: u32) -> f64 {
    1.0 - (-40.0 / threshold as f64).exp2()
}

/// Parameters that make `mechanism` safe at `nrh` under `timing`.
pub fn secure_config(config: &MitigationConfig, timing: &TimingParams) -> Result<MechanismParams> {
    let nrh = config.nrh;
    if nrh == 0 {
        return Err(SimError::config("mitigation.nrh", "must be positive"));
    }
    let half = (nrh / 2).max(1);
    let params = match config.mechanism {
        Mechanism::None => MechanismParams::None,
        Mechanism::Para => {
            let probability = config.para_probability.unwrap_or_else(|| para_probability(half));
            if !(0.0..=1.0).contains(&probability) {
                return Err(SimError::config(
                    "mitigation.para_probability",
                    "must be within [0, 1]",
                ));
            }
            MechanismParams::Para {
                probability,
                survival_bound: (1.0 - probability).powi(half as i32),
            }
        }
        Mechanism::Graphene => {
            let threshold = config.graphene_threshold.unwrap_or(half).max(1);
            let max_acts = timing.t_refw / timing.t_rc;
            let entries = config
                .graphene_entries
                .unwrap_or_else(|| max_acts.div_ceil(threshold as u64) as usize);
            if entries == 0 {
                return Err(SimError::config("mitigation.graphene_entries", "must be positive"));
            }
            if entries > config.graphene_entry_budget {
                return Err(SimError::Infeasible(format!(
                    "Graphene needs {entries} entries per bank at threshold {threshold}, budget is {}",
                    config.graphene_entry_budget
                )));
            }
            MechanismParams::Graphene {
                threshold,
                entries,
                reset_period: timing.t_refw,
            }
        }
        Mechanism::Rfm => MechanismParams::Rfm {
            threshold: config
                .rfm_threshold
                .unwrap_or_else(|| config.rfm_raaimt.min(nrh / 4).max(1)),
        },
        Mechanism::Prac => {
            if config.prac_burst == 0 {
                return Err(SimError::config("mitigation.prac_burst", "must be positive"));
            }
            MechanismParams::Prac {
                backoff_threshold: config.prac_backoff_threshold.unwrap_or(half),
                burst: config.prac_burst,
            }
        }
        Mechanism::BlockHammer => {
            // Per-aggressor ceiling keeping a double-sided victim below nrh.
            let row_limit = (nrh.saturating_sub(1) / 2).max(2);
            let blacklist_threshold = config
                .blockhammer_threshold
                .unwrap_or(row_limit / 2)
                .clamp(1, row_limit - 1);
            let epoch = timing.t_refw;
            let slots = (row_limit - blacklist_threshold).saturating_sub(1).max(1) as u64;
            if config.blockhammer_counters == 0 || config.blockhammer_hashes == 0 {
                return Err(SimError::config(
                    "mitigation.blockhammer_counters",
                    "filter size and hash count must be positive",
                ));
            }
            MechanismParams::BlockHammer {
                blacklist_threshold,
                row_limit,
                delay: epoch.div_ceil(slots),
                epoch,
                counters: config.blockhammer_counters,
                hashes: config.blockhammer_hashes,
                exact: config.blockhammer_exact,
            }
        }
    };
    Ok(params)
}

/// Instantiates the mechanism described by `params`.
pub fn build(params: &MechanismParams, banks: usize, seed: u64) -> Option<Box<dyn Mitigation>> {
    match *params {
        MechanismParams::None => None,
        MechanismParams::Para { probability, .. } => Some(Box::new(Para::new(probability, seed))),
        MechanismParams::Graphene {
            threshold,
            entries,
            reset_period,
        } => Some(Box::new(Graphene::new(banks, entries, threshold, reset_period))),
        MechanismParams::Rfm { threshold } => Some(Box::new(Rfm::new(banks, threshold))),
        MechanismParams::Prac {
            backoff_threshold,
            burst,
        } => Some(Box::new(Prac::new(backoff_threshold, burst))),
        MechanismParams::BlockHammer {
            blacklist_threshold,
            delay,
            epoch,
            counters,
            hashes,
            exact,
            ..
        } => Some(Box::new(BlockHammer::new(
            banks,
            blacklist_threshold,
            delay,
            epoch,
            counters,
            hashes,
            exact,
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::Preset;

    fn timing() -> TimingParams {
        Preset::ddr5_4800().timing
    }

    #[test]
    fn graphene_threshold_is_half_nrh() {
        let p = secure_config(&MitigationConfig::new(Mechanism::Graphene, 1024), &timing()).unwrap();
        let MechanismParams::Graphene { threshold, entries, .. } = p else {
            panic!("wrong params {p:?}")
        };
        assert_eq!(threshold, 512);
        let max_acts = timing().t_refw / timing().t_rc;
        assert_eq!(entries as u64, max_acts.div_ceil(512));
    }

    #[test]
    fn graphene_over_budget_is_infeasible() {
        let mut c = MitigationConfig::new(Mechanism::Graphene, 64);
        c.graphene_entry_budget = 1000;
        assert!(matches!(
            secure_config(&c, &timing()),
            Err(SimError::Infeasible(_))
        ));
    }

    #[test]
    fn prac_backoff_threshold() {
        let p = secure_config(&MitigationConfig::new(Mechanism::Prac, 64), &timing()).unwrap();
        assert_eq!(
            p,
            MechanismParams::Prac {
                backoff_threshold: 32,
                burst: 4
            }
        );
    }

    #[test]
    fn para_probability_meets_bound() {
        let p = secure_config(&MitigationConfig::new(Mechanism::Para, 1024), &timing()).unwrap();
        let MechanismParams::Para {
            probability,
            survival_bound,
        } = p
        else {
            panic!()
        };
        // Closed form 1 - 2^(-40/512), evaluated independently.
        let expected = 1.0 - 2f64.powf(-40.0 / 512.0);
        assert!((probability - expected).abs() < 1e-15);
        assert!((probability - 0.052722).abs() < 1e-5);
        assert!(survival_bound <= 2f64.powi(-40) * (1.0 + 1e-9));
    }

    #[test]
    fn rfm_default_interval() {
        let p = secure_config(&MitigationConfig::new(Mechanism::Rfm, 1024), &timing()).unwrap();
        assert_eq!(p, MechanismParams::Rfm { threshold: 80 });
        let p = secure_config(&MitigationConfig::new(Mechanism::Rfm, 256), &timing()).unwrap();
        assert_eq!(p, MechanismParams::Rfm { threshold: 64 });
    }

    #[test]
    fn blockhammer_keeps_double_sided_damage_below_nrh() {
        let p = secure_config(&MitigationConfig::new(Mechanism::BlockHammer, 1024), &timing()).unwrap();
        let MechanismParams::BlockHammer {
            blacklist_threshold,
            row_limit,
            delay,
            epoch,
            ..
        } = p
        else {
            panic!()
        };
        assert!(2 * row_limit < 1024);
        assert!(blacklist_threshold < row_limit);
        // Unthrottled burst plus rate-limited tail fits within the limit.
        assert!(blacklist_threshold as u64 + epoch / delay < row_limit as u64);
    }

    #[test]
    fn zero_nrh_rejected() {
        assert!(secure_config(&MitigationConfig::new(Mechanism::Graphene, 0), &timing()).is_err());
    }

    #[test]
    fn mechanism_names_round_trip() {
        for m in ["none", "para", "graphene", "rfm", "prac", "blockhammer"] {
            assert_eq!(Mechanism::parse(m).unwrap().name(), m);
        }
        assert!(Mechanism::parse("hydra").is_none());
    }
}
