use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cycle, DeviceGeometry};
use crate::energy::EnergyModel;
use crate::error::{Result, SimError};

const DDR5_4800: &str = include_str!("../../presets/ddr5-4800.toml");

/// Number of REF commands that together cover every row of a bank.
pub const REFS_PER_SWEEP: u32 = 8192;

/// DRAM timing constraints, in DRAM clock cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingParams {
    pub clock_mhz: u32,
    pub cl: u64,
    pub cwl: u64,
    /// Data burst length on the bus, in clock cycles.
    pub bl: u64,
    pub t_rcd: u64,
    pub t_ras: u64,
    pub t_rp: u64,
    pub t_rc: u64,
    pub t_ccd_s: u64,
    pub t_ccd_l: u64,
    pub t_rrd_s: u64,
    pub t_rrd_l: u64,
    pub t_faw: u64,
    pub t_wr: u64,
    pub t_rtp: u64,
    pub t_wtr_s: u64,
    pub t_wtr_l: u64,
    /// Rank-to-rank data bus switching gap.
    pub t_rtrs: u64,
    pub t_rfc: u64,
    pub t_refi: u64,
    pub t_refw: u64,
    pub t_rfm: u64,
}

impl TimingParams {
    pub fn clock_period_ns(&self) -> f64 {
        1000.0 / self.clock_mhz as f64
    }

    pub fn ns_to_cycles(&self, ns: f64) -> Cycle {
        (ns / self.clock_period_ns()).round() as Cycle
    }

    pub fn cycles_to_ns(&self, cycles: Cycle) -> f64 {
        cycles as f64 * self.clock_period_ns()
    }

    /// Rows refreshed in each bank by one REF command.
    pub fn rows_per_ref(geometry: &DeviceGeometry) -> u32 {
        (geometry.rows_per_bank / REFS_PER_SWEEP).max(1)
    }

    pub fn validate(&self, geometry: &DeviceGeometry) -> Result<()> {
        let err = |field: &str, msg: String| Err(SimError::config(format!("dram.timing.{field}"), msg));
        if self.clock_mhz == 0 {
            return err("clock_mhz", "must be positive".into());
        }
        if self.t_rc < self.t_ras + self.t_rp {
            return err(
                "t_rc",
                format!("tRC ({}) < tRAS + tRP ({})", self.t_rc, self.t_ras + self.t_rp),
            );
        }
        if self.t_faw < 4 * self.t_rrd_s {
            return err(
                "t_faw",
                format!("tFAW ({}) < 4 * tRRD_S ({})", self.t_faw, 4 * self.t_rrd_s),
            );
        }
        if self.t_refi == 0 || self.t_refw == 0 {
            return err("t_refi", "tREFI and tREFW must be positive".into());
        }
        let needed = geometry.rows_per_bank / Self::rows_per_ref(geometry);
        if self.t_refw / self.t_refi < needed as u64 {
            return err(
                "t_refw",
                format!(
                    "tREFW / tREFI = {} REFs but {} are needed to cover every row",
                    self.t_refw / self.t_refi,
                    needed
                ),
            );
        }
        if self.t_rfm == 0 {
            return err("t_rfm", "must be positive".into());
        }
        Ok(())
    }
}

/// A device preset: geometry, timing and energy constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    pub geometry: DeviceGeometry,
    pub timing: TimingParams,
    pub energy: EnergyModel,
}

impl Preset {
    pub fn ddr5_4800() -> Self {
        toml::from_str(DDR5_4800).expect("bundled preset parses")
    }

    /// Resolves a preset by bundled name or by file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "ddr5-4800" | "DDR5-4800" => Ok(Self::ddr5_4800()),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let preset: Preset = toml::from_str(text).map_err(|e| SimError::Parse {
            path: origin.to_string(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            msg: e.message().to_string(),
        })?;
        preset.validate()?;
        Ok(preset)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.timing.validate(&self.geometry)?;
        self.energy.validate()
    }
}

pub(crate) fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_preset_is_valid() {
        let p = Preset::ddr5_4800();
        p.validate().unwrap();
        assert_eq!(p.geometry, DeviceGeometry::default());
        // 32 ms refresh window and 3.9 us refresh interval.
        assert!((p.timing.cycles_to_ns(p.timing.t_refw) - 32e6).abs() < 1.0);
        assert!((p.timing.cycles_to_ns(p.timing.t_refi) - 3900.0).abs() < 1.0);
        // tRRD_L of 5 ns.
        assert!((p.timing.cycles_to_ns(p.timing.t_rrd_l) - 5.0).abs() < 1e-9);
        assert_eq!(p.timing.t_rfm, 4 * p.timing.t_rc);
    }

    #[test]
    fn rejects_inconsistent_trc() {
        let mut p = Preset::ddr5_4800();
        p.timing.t_rc = p.timing.t_ras + p.timing.t_rp - 1;
        assert!(matches!(p.validate(), Err(SimError::Config { .. })));
    }

    #[test]
    fn rejects_short_refresh_window() {
        let mut p = Preset::ddr5_4800();
        p.timing.t_refw = p.timing.t_refi * 100;
        assert!(p.validate().is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        let text = DDR5_4800.replace("t_rfm = 468", "t_rfm = 468\nt_bogus = 1");
        let err = Preset::parse(&text, "x.toml").unwrap_err();
        assert!(err.to_string().contains("t_bogus"), "{err}");
    }
}
