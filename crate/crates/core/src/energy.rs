//! Command-count DRAM energy model.

use serde::{Deserialize, Serialize};

use crate::dram::{CommandKind, CommandRecord, ThreadId};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyModel {
    pub act_pre_pj: f64,
    pub rd_pj: f64,
    pub wr_pj: f64,
    pub ref_pj: f64,
    pub vrr_victim_pj: f64,
    pub rfm_pj: f64,
    pub background_mw_per_rank: f64,
}

impl EnergyModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("act_pre_pj", self.act_pre_pj),
            ("rd_pj", self.rd_pj),
            ("wr_pj", self.wr_pj),
            ("ref_pj", self.ref_pj),
            ("vrr_victim_pj", self.vrr_victim_pj),
            ("rfm_pj", self.rfm_pj),
            ("background_mw_per_rank", self.background_mw_per_rank),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::config(format!("energy.{name}"), "must be a finite value >= 0"));
            }
        }
        Ok(())
    }

    /// Energy of one logged command in picojoules. PRE/PREab are folded
    /// into the ACT+PRE pair.
    pub fn command_pj(&self, rec: &CommandRecord) -> f64 {
        match rec.command.kind {
            CommandKind::Act => self.act_pre_pj,
            CommandKind::Pre | CommandKind::PreAll => 0.0,
            CommandKind::Rd => self.rd_pj,
            CommandKind::Wr => self.wr_pj,
            CommandKind::Ref => self.ref_pj,
            CommandKind::Vrr => self.vrr_victim_pj * rec.victims as f64,
            CommandKind::Rfm => self.rfm_pj,
        }
    }

    pub fn background_j(&self, duration_ns: f64, ranks: u32) -> f64 {
        self.background_mw_per_rank * 1e-3 * duration_ns * 1e-9 * ranks as f64
    }

    /// Total energy in joules: command energy plus background power over
    /// `duration_ns` for `ranks` ranks.
    pub fn energy(&self, log: &[CommandRecord], duration_ns: f64, ranks: u32) -> f64 {
        let commands: f64 = log.iter().map(|r| self.command_pj(r)).sum();
        commands * 1e-12 + self.background_j(duration_ns, ranks)
    }

    /// Command energy attributed to the given threads, in joules.
    pub fn attributed_j(&self, log: &[CommandRecord], threads: &[ThreadId]) -> f64 {
        log.iter()
            .filter(|r| r.thread.is_some_and(|t| threads.contains(&t)))
            .map(|r| self.command_pj(r))
            .sum::<f64>()
            * 1e-12
    }
}
