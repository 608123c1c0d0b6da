//! Synthetic trace generation: RowHammer attackers and benign threads with
//! a target row-buffer miss rate.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::AddressMapping;
use crate::cpu::{LlcConfig, TraceEntry};
use crate::dram::{DeviceGeometry, DramAddress};
use crate::error::{Result, SimError};

/// Accepted relative error between measured and target RBMPKI.
pub const RBMPKI_TOLERANCE: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intensity {
    High,
    Medium,
    Low,
}

impl Intensity {
    pub fn parse(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'H' => Some(Intensity::High),
            'M' => Some(Intensity::Medium),
            'L' => Some(Intensity::Low),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Intensity::High => 'H',
            Intensity::Medium => 'M',
            Intensity::Low => 'L',
        }
    }

    /// Target row-buffer misses per kilo-instruction for the class.
    pub fn target_rbmpki(self) -> f64 {
        match self {
            Intensity::High => 25.0,
            Intensity::Medium => 14.0,
            Intensity::Low => 2.0,
        }
    }

    pub fn of_rbmpki(rbmpki: f64) -> Self {
        if rbmpki >= 20.0 {
            Intensity::High
        } else if rbmpki >= 10.0 {
            Intensity::Medium
        } else {
            Intensity::Low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenignProfile {
    pub target_rbmpki: f64,
    pub working_set: u64,
    /// Probability that the next access reuses the current row.
    pub row_locality: f64,
    pub write_fraction: f64,
    pub seed: u64,
}

impl BenignProfile {
    pub fn new(target_rbmpki: f64, seed: u64) -> Self {
        Self {
            target_rbmpki,
            working_set: 256 << 20,
            row_locality: 0.5,
            write_fraction: 0.1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_rbmpki >= 0.0 && self.target_rbmpki.is_finite()) {
            return Err(SimError::InvalidInput("target_rbmpki must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.row_locality) || !(0.0..=1.0).contains(&self.write_fraction) {
            return Err(SimError::InvalidInput(
                "row_locality must be in [0, 1) and write_fraction in [0, 1]".into(),
            ));
        }
        if self.working_set < 1 << 20 {
            return Err(SimError::InvalidInput("working_set must be at least 1 MiB".into()));
        }
        Ok(())
    }

    /// Mean bubbles that would hit the target if every new row missed.
    pub fn initial_bubbles(&self) -> f64 {
        if self.target_rbmpki == 0.0 {
            return 0.0;
        }
        (1000.0 * (1.0 - self.row_locality) / self.target_rbmpki - 1.0).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerProfile {
    pub num_aggressor_rows: usize,
    /// Keep every aggressor in one bank instead of spreading over banks.
    pub same_bank: bool,
    pub bubbles_between_acts: u32,
    pub seed: u64,
}

impl Default for AttackerProfile {
    fn default() -> Self {
        Self {
            num_aggressor_rows: 2,
            same_bank: false,
            bubbles_between_acts: 0,
            seed: 0,
        }
    }
}

/// Address layout and cache geometry the generators target.
#[derive(Debug, Clone)]
pub struct Target {
    pub geometry: DeviceGeometry,
    pub mapping: AddressMapping,
    pub llc: LlcConfig,
}

impl Target {
    pub fn new(geometry: DeviceGeometry, mapping: AddressMapping, llc: LlcConfig) -> Self {
        Self { geometry, mapping, llc }
    }

    fn address(&self, bank: usize, row: u32, column: u32) -> u64 {
        let a = DramAddress {
            row,
            column,
            ..self.geometry.bank_address(bank)
        };
        self.mapping.compose(&a)
    }

    fn set_of(&self, address: u64) -> usize {
        self.llc.set_of(self.llc.line_of(address))
    }
}

fn entries_for(length: u64, bubbles: u32) -> usize {
    length.div_ceil(bubbles as u64 + 1).max(1) as usize
}

struct Unit {
    bank: usize,
    base: u32,
    column: u32,
}

/// Hammering trace: each access opens a different row of its bank and
/// misses in the LLC.
pub fn gen_attacker(profile: &AttackerProfile, length: u64, target: &Target) -> Result<Vec<TraceEntry>> {
    let n = profile.num_aggressor_rows;
    if n == 0 {
        return Err(SimError::InvalidInput("num_aggressor_rows must be positive".into()));
    }
    let g = &target.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let count = entries_for(length, profile.bubbles_between_acts);
    if n == 1 {
        let bank = rng.gen_range(0..g.total_banks());
        let row = rng.gen_range(0..g.rows_per_bank);
        let addr = target.address(bank, row, 0);
        return Ok(vec![TraceEntry::read(profile.bubbles_between_acts, addr); count]);
    }

    let span = 2 * n as u32;
    let align = span.next_power_of_two();
    if align * 2 > g.rows_per_bank {
        return Err(SimError::InvalidInput(format!(
            "{n} aggressor rows do not fit in a bank of {} rows",
            g.rows_per_bank
        )));
    }
    // Enough lines per cache set to defeat LRU; spread attacks also use
    // every bank so that misses never merge.
    let units_needed = if profile.same_bank {
        target.llc.ways + 1
    } else {
        (target.llc.ways + 1).max(g.total_banks())
    };
    let mut banks: Vec<usize> = (0..g.total_banks()).collect();
    banks.shuffle(&mut rng);
    let bank_of = |u: usize| {
        if profile.same_bank {
            banks[0]
        } else {
            banks[u % banks.len()]
        }
    };

    let slots = g.rows_per_bank / align;
    let start = rng.gen_range(0..slots);
    let mut units: Vec<Unit> = Vec::with_capacity(units_needed);
    let mut sets: Vec<usize> = Vec::new();
    for u in 0..units_needed {
        let bank = bank_of(u);
        let found = (0..slots).find_map(|k| {
            let base = ((start + k) % slots) * align;
            let clash = units
                .iter()
                .any(|x| x.bank == bank && x.base.abs_diff(base) <= 2 * align);
            if clash {
                return None;
            }
            (0..g.columns_per_row).find_map(|column| {
                let s: Vec<usize> = (0..n)
                    .map(|i| target.set_of(target.address(bank, base + 2 * i as u32, column)))
                    .collect();
                let ok = if sets.is_empty() {
                    true
                } else {
                    s == sets
                };
                ok.then_some((base, column, s))
            })
        });
        let Some((base, column, s)) = found else {
            return Err(SimError::InvalidInput(format!(
                "no rows in bank {bank} map to the attack's cache sets"
            )));
        };
        if sets.is_empty() {
            sets = s;
        }
        units.push(Unit { bank, base, column });
    }

    let mut out = Vec::with_capacity(count);
    'fill: loop {
        for i in 0..n as u32 {
            for unit in &units {
                if out.len() == count {
                    break 'fill;
                }
                let addr = target.address(unit.bank, unit.base + 2 * i, unit.column);
                out.push(TraceEntry::read(profile.bubbles_between_acts, addr));
            }
        }
    }
    Ok(out)
}

/// Benign trace with bubbles drawn uniformly from `[0, 2 * mean_bubbles]`.
pub fn gen_benign_with(
    profile: &BenignProfile,
    length: u64,
    mean_bubbles: f64,
    target: &Target,
) -> Result<Vec<TraceEntry>> {
    profile.validate()?;
    let g = &target.geometry;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let max_bubbles = (2.0 * mean_bubbles).round() as u32;
    let count = entries_for(length, max_bubbles / 2);
    if profile.target_rbmpki == 0.0 {
        // A footprint far below the LLC size: all hits after warm-up.
        let base = rng.gen_range(0..1024u64) << 20;
        return Ok((0..count as u64)
            .map(|i| TraceEntry::read(max_bubbles.max(8), base + (i % 64) * 64))
            .collect());
    }
    let capacity = target.mapping.capacity();
    let ws = profile.working_set.min(capacity);
    let line = target.llc.line_bytes;
    let regions = (capacity - ws) >> 20;
    let base = if regions == 0 { 0 } else { rng.gen_range(0..=regions) << 20 };
    let mut current: Option<DramAddress> = None;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let addr = match current {
            Some(a) if rng.gen_bool(profile.row_locality) => DramAddress {
                column: rng.gen_range(0..g.columns_per_row),
                ..a
            },
            _ => target.mapping.decompose(base + rng.gen_range(0..ws / line) * line),
        };
        current = Some(addr);
        let bubbles = rng.gen_range(0..=max_bubbles);
        let phys = target.mapping.compose(&addr);
        out.push(if rng.gen_bool(profile.write_fraction) {
            TraceEntry::write(bubbles, phys)
        } else {
            TraceEntry::read(bubbles, phys)
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Calibrated {
    pub entries: Vec<TraceEntry>,
    pub mean_bubbles: f64,
    pub measured_rbmpki: f64,
}

/// Adjusts the bubble density until `measure` reports an RBMPKI within
/// tolerance of the profile's target.
pub fn calibrate_benign(
    profile: &BenignProfile,
    length: u64,
    target: &Target,
    mut measure: impl FnMut(&[TraceEntry]) -> Result<f64>,
) -> Result<Calibrated> {
    profile.validate()?;
    let goal = profile.target_rbmpki;
    if goal == 0.0 {
        let entries = gen_benign_with(profile, length, 0.0, target)?;
        let measured_rbmpki = measure(&entries)?;
        return Ok(Calibrated {
            entries,
            mean_bubbles: 0.0,
            measured_rbmpki,
        });
    }
    let mut bubbles = profile.initial_bubbles();
    let mut best: Option<Calibrated> = None;
    for _ in 0..12 {
        let entries = gen_benign_with(profile, length, bubbles, target)?;
        let measured = measure(&entries)?;
        let err = (measured - goal).abs() / goal;
        let better = best
            .as_ref()
            .is_none_or(|b| err < (b.measured_rbmpki - goal).abs() / goal);
        if better {
            best = Some(Calibrated {
                entries,
                mean_bubbles: bubbles,
                measured_rbmpki: measured,
            });
        }
        if err <= RBMPKI_TOLERANCE / 2.0 {
            break;
        }
        if bubbles == 0.0 && measured < goal {
            return Err(SimError::InvalidInput(format!(
                "target RBMPKI {goal} unreachable: {measured:.2} without any bubbles"
            )));
        }
        let next = ((bubbles + 1.0) * measured / goal - 1.0).max(0.0);
        bubbles = (next * 2.0).round() / 2.0;
    }
    let best = best.expect("at least one measurement");
    if (best.measured_rbmpki - goal).abs() / goal > RBMPKI_TOLERANCE {
        return Err(SimError::InvalidInput(format!(
            "calibration for RBMPKI {goal} stopped at {:.2}",
            best.measured_rbmpki
        )));
    }
    Ok(best)
}

/// One thread slot of a workload mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Benign(Intensity),
    Attacker,
}

/// Mix written as class letters, e.g. `HHHA`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mix(pub Vec<Slot>);

impl Mix {
    pub fn parse(s: &str) -> Result<Self> {
        let slots = s
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'A' => Ok(Slot::Attacker),
                other => Intensity::parse(other)
                    .map(Slot::Benign)
                    .ok_or_else(|| SimError::InvalidInput(format!("unknown class `{c}` in mix `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if slots.is_empty() {
            return Err(SimError::InvalidInput("empty mix".into()));
        }
        Ok(Mix(slots))
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            let c = match s {
                Slot::Attacker => 'A',
                Slot::Benign(i) => i.letter(),
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// One run of a manifest: trace paths, with attacker entries flagged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRun {
    pub traces: Vec<(PathBuf, bool)>,
}

const ATTACKER_PREFIX: &str = "attacker:";

/// Mix manifest: one line per run holding comma-separated trace paths;
/// attacker traces carry an `attacker:` prefix.
pub fn format_manifest(runs: &[ManifestRun]) -> String {
    let mut out = String::new();
    for run in runs {
        let fields: Vec<String> = run
            .traces
            .iter()
            .map(|(p, atk)| format!("{}{}", if *atk { ATTACKER_PREFIX } else { "" }, p.display()))
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRun>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            let traces = line
                .split(',')
                .map(|f| {
                    let f = f.trim();
                    let (path, atk) = match f.strip_prefix(ATTACKER_PREFIX) {
                        Some(p) => (p, true),
                        None => (f, false),
                    };
                    if path.is_empty() {
                        return Err(SimError::InvalidInput(format!("empty trace path in `{line}`")));
                    }
                    let p = Path::new(path);
                    Ok((if p.is_relative() { base.join(p) } else { p.to_path_buf() }, atk))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ManifestRun { traces })
        })
        .collect()
}
