//! Evaluation metrics and the run report.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::breakhammer::WindowRecord;
use crate::config::ExperimentConfig;
use crate::controller::ControllerStats;
use crate::dram::{CommandKind, CommandRecord};
use crate::error::{Result, SimError};
use crate::mitigation::{ActionKind, MechanismParams};
use crate::sim::{RunOutput, SafetyResult, ThreadResult};

/// A ratio that may be unbounded; serialized as a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ratio {
    Finite(f64),
    Unbounded,
}

impl Ratio {
    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Finite(v) => Some(v),
            Ratio::Unbounded => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Finite(v) => write!(f, "{v}"),
            Ratio::Unbounded => f.write_str("inf"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Ratio::Finite(v) => s.serialize_f64(*v),
            Ratio::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Ratio::Finite(v)),
            Raw::Text(t) if t == "inf" => Ok(Ratio::Unbounded),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid ratio `{t}`"))),
        }
    }
}

fn check_lengths(shared: &[f64], alone: &[f64]) -> Result<()> {
    if shared.len() != alone.len() {
        return Err(SimError::InvalidInput(format!(
            "{} shared IPCs but {} alone IPCs",
            shared.len(),
            alone.len()
        )));
    }
    Ok(())
}

pub fn weighted_speedup(shared: &[f64], alone: &[f64]) -> Result<f64> {
    check_lengths(shared, alone)?;
    shared
        .iter()
        .zip(alone)
        .map(|(&s, &a)| {
            if a > 0.0 {
                Ok(s / a)
            } else {
                Err(SimError::InvalidInput("alone IPC must be positive".into()))
            }
        })
        .sum()
}

pub fn max_slowdown(shared: &[f64], alone: &[f64]) -> Result<Ratio> {
    check_lengths(shared, alone)?;
    let mut worst = 0.0f64;
    for (&s, &a) in shared.iter().zip(alone) {
        if a <= 0.0 {
            return Err(SimError::InvalidInput("alone IPC must be positive".into()));
        }
        if s <= 0.0 {
            return Ok(Ratio::Unbounded);
        }
        worst = worst.max(a / s);
    }
    Ok(Ratio::Finite(worst))
}

/// Nearest-rank percentiles; `points` are in percent.
pub fn latency_percentiles(latencies: &[u64], points: &[f64]) -> Result<Vec<u64>> {
    if latencies.is_empty() {
        return Err(SimError::InvalidInput("no latencies recorded".into()));
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    points
        .iter()
        .map(|&p| {
            if !(0.0..=100.0).contains(&p) {
                return Err(SimError::InvalidInput(format!("percentile {p} outside 0..=100")));
            }
            let rank = ((p / 100.0) * n as f64).ceil() as usize;
            Ok(sorted[rank.clamp(1, n) - 1])
        })
        .collect()
}

pub const PERCENTILES: [f64; 5] = [50.0, 90.0, 99.0, 99.9, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadReport {
    pub thread: usize,
    pub attacker: bool,
    pub ipc_shared: f64,
    pub ipc_alone: Option<f64>,
    pub instructions: u64,
    pub cycles: u64,
    pub rbmpki: f64,
    pub demand_acts: u64,
    pub llc_hits: u64,
    pub llc_misses: u64,
    pub llc_blocked_quota: u64,
    pub energy_j: f64,
    pub marked_suspect: bool,
    pub first_marked_cycle: Option<u64>,
    pub final_quota: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCounts {
    pub kind: String,
    pub triggered: u64,
    pub executed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyPoint {
    pub percentile: f64,
    pub cycles: u64,
    pub ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakHammerTelemetry {
    pub markings: u64,
    pub suspects: Vec<usize>,
    pub windows: Vec<WindowRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub name: String,
    pub config: ExperimentConfig,
    pub preset: String,
    pub seed: u64,
    pub mitigation_seed: u64,
    pub mechanism: MechanismParams,
    pub cpu_cycles: u64,
    pub dram_cycles: u64,
    pub duration_ns: f64,
    pub threads: Vec<ThreadReport>,
    pub weighted_speedup: Option<f64>,
    pub max_slowdown: Option<Ratio>,
    pub actions: Vec<ActionCounts>,
    pub preventive_actions: u64,
    pub commands: Vec<(String, u64)>,
    pub row_hits: u64,
    pub reads_served: u64,
    pub writes_served: u64,
    pub read_latency: Vec<LatencyPoint>,
    pub energy_j: f64,
    pub energy_benign_j: f64,
    pub safety: SafetyResult,
    pub breakhammer: Option<BreakHammerTelemetry>,
    pub invariants: Vec<InvariantCheck>,
}

const COMMANDS: [CommandKind; 8] = [
    CommandKind::Act,
    CommandKind::Pre,
    CommandKind::PreAll,
    CommandKind::Rd,
    CommandKind::Wr,
    CommandKind::Ref,
    CommandKind::Vrr,
    CommandKind::Rfm,
];

/// Checks that hold after every run.
pub fn invariant_checks(
    out: &RunOutput,
    deterministic: bool,
    log: Option<&[CommandRecord]>,
) -> Vec<InvariantCheck> {
    let s = &out.safety;
    let mut checks = Vec::new();
    let safe = !deterministic || s.peak_damage < s.nrh;
    checks.push(InvariantCheck {
        name: "rowhammer_safety".into(),
        passed: safe,
        detail: format!(
            "peak damage {} at bank {} row {} (cycle {}), threshold {}{}",
            s.peak_damage,
            s.peak_bank,
            s.peak_row,
            s.peak_cycle,
            s.nrh,
            if deterministic { "" } else { ", probabilistic mechanism not enforced" }
        ),
    });
    checks.push(InvariantCheck {
        name: "refresh_liveness".into(),
        passed: s.liveness_violations == 0,
        detail: format!("{} rows exceeded the refresh window", s.liveness_violations),
    });
    let count = |kind: CommandKind| match log {
        Some(log) => log.iter().filter(|r| r.command.kind == kind).count() as u64,
        None => out.controller.command_count(kind),
    };
    let c = &out.controller;
    let burst = match out.mechanism {
        MechanismParams::Prac { burst, .. } => burst as u64,
        _ => 1,
    };
    let vrr = count(CommandKind::Vrr);
    let rfm = count(CommandKind::Rfm);
    let per_kind = |k: ActionKind| c.action_commands[k as usize];
    let size = |k: ActionKind| if k == ActionKind::BackOffRfmBurst { burst } else { 1 };
    // Each kind's commands cover its completed actions plus at most the
    // unfinished remainder of those still pending.
    let consistent = ActionKind::ALL.iter().all(|&k| {
        let done = c.executed(k) * size(k);
        let open = (c.triggered(k) - c.executed(k)) * size(k);
        c.executed(k) <= c.triggered(k) && per_kind(k) >= done && per_kind(k) <= done + open
    });
    let vrr_actions = per_kind(ActionKind::VictimRefresh);
    let rfm_actions = per_kind(ActionKind::RfmCommand) + per_kind(ActionKind::BackOffRfmBurst);
    checks.push(InvariantCheck {
        name: "action_counters_match_log".into(),
        passed: consistent && vrr == vrr_actions && rfm == rfm_actions,
        detail: format!(
            "VRR {vrr} logged vs {vrr_actions} from actions, RFM {rfm} logged vs {rfm_actions} from actions"
        ),
    });
    checks
}

impl StatsReport {
    /// Builds the report; `alone` holds solo-run IPCs of benign threads.
    pub fn build(cfg: &ExperimentConfig, out: &RunOutput, alone: Option<&[Option<f64>]>) -> Result<Self> {
        let threads: Vec<ThreadReport> = out
            .threads
            .iter()
            .map(|t: &ThreadResult| ThreadReport {
                thread: t.thread,
                attacker: t.attacker,
                ipc_shared: t.ipc,
                ipc_alone: alone.and_then(|a| a.get(t.thread).copied().flatten()),
                instructions: t.measured_instructions,
                cycles: t.measured_cycles,
                rbmpki: t.rbmpki,
                demand_acts: t.demand_acts,
                llc_hits: t.llc.hits,
                llc_misses: t.llc.misses,
                llc_blocked_quota: t.llc.blocked_quota,
                energy_j: t.energy_j,
                marked_suspect: t.marked_suspect,
                first_marked_cycle: t.first_marked_cycle,
                final_quota: t.final_quota,
            })
            .collect();
        let benign: Vec<&ThreadReport> = threads.iter().filter(|t| !t.attacker).collect();
        let (ws, ms) = if alone.is_some() && !benign.is_empty() {
            let shared: Vec<f64> = benign.iter().map(|t| t.ipc_shared).collect();
            let solo = benign
                .iter()
                .map(|t| {
                    t.ipc_alone
                        .ok_or_else(|| SimError::InvalidInput(format!("thread {} has no alone IPC", t.thread)))
                })
                .collect::<Result<Vec<f64>>>()?;
            (
                Some(weighted_speedup(&shared, &solo)?),
                Some(max_slowdown(&shared, &solo)?),
            )
        } else {
            (None, None)
        };
        let c: &ControllerStats = &out.controller;
        let actions = ActionKind::ALL
            .iter()
            .map(|&k| ActionCounts {
                kind: k.name().into(),
                triggered: c.triggered(k),
                executed: c.executed(k),
            })
            .collect();
        let read_latency = if out.read_latencies.is_empty() {
            Vec::new()
        } else {
            latency_percentiles(&out.read_latencies, &PERCENTILES)?
                .into_iter()
                .zip(PERCENTILES)
                .map(|(cycles, percentile)| LatencyPoint {
                    percentile,
                    cycles,
                    ns: cycles as f64 * out.dram_period_ns,
                })
                .collect()
        };
        let breakhammer = cfg.breakhammer.enabled.then(|| BreakHammerTelemetry {
            markings: out.breakhammer_markings,
            suspects: threads.iter().filter(|t| t.marked_suspect).map(|t| t.thread).collect(),
            windows: out.breakhammer_windows.clone(),
        });
        Ok(Self {
            name: cfg.name.clone(),
            config: cfg.clone(),
            preset: cfg.preset.clone(),
            seed: cfg.seed,
            mitigation_seed: cfg.mitigation.seed,
            mechanism: out.mechanism.clone(),
            cpu_cycles: out.cpu_cycles,
            dram_cycles: out.dram_cycles,
            duration_ns: out.duration_ns,
            threads,
            weighted_speedup: ws,
            max_slowdown: ms,
            actions,
            preventive_actions: c.total_triggered(),
            commands: COMMANDS
                .iter()
                .map(|&k| (k.mnemonic().to_string(), c.command_count(k)))
                .collect(),
            row_hits: c.row_hits,
            reads_served: c.reads_served,
            writes_served: c.writes_served,
            read_latency,
            energy_j: out.energy_j,
            energy_benign_j: out.energy_benign_j,
            safety: out.safety.clone(),
            breakhammer,
            invariants: invariant_checks(
                out,
                cfg.mitigation.mechanism.is_deterministic(),
                out.command_log.as_deref(),
            ),
        })
    }

    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SimError::Parse {
            path: "report".into(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Flat `key = value` lines, one per leaf of the JSON document.
    pub fn to_kv(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut out = String::new();
        flatten("", &value, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut String) {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), v, out);
            }
        }
        Value::Null => out.push_str(&format!("{prefix} = none\n")),
        Value::String(s) => out.push_str(&format!("{prefix} = {s}\n")),
        other => out.push_str(&format!("{prefix} = {other}\n")),
    }
}
