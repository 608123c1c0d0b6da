//! Experiment orchestration: solo baselines, shared runs, sweeps and
//! workload-mix construction.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, ThreadSpec};
use crate::cpu::{load_trace, write_trace, TraceEntry};
use crate::dram::Preset;
use crate::error::{Result, SimError};
use crate::metrics::{Ratio, StatsReport};
use crate::mitigation::{ActionKind, Mechanism, MitigationConfig};
use crate::sim::{simulate, RunOutput, Workload};
use crate::tracegen::{
    calibrate_benign, format_manifest, gen_attacker, gen_benign_with, AttackerProfile, BenignProfile,
    Calibrated, ManifestRun, Mix, Slot, Target,
};

pub fn load_workload(cfg: &ExperimentConfig) -> Result<Workload> {
    let traces = cfg
        .threads
        .iter()
        .map(|t| load_trace(&t.trace))
        .collect::<Result<Vec<_>>>()?;
    Ok(Workload::new(traces, cfg.threads.iter().map(|t| t.attacker).collect()))
}

fn solo(workload: &Workload, thread: usize) -> Workload {
    Workload {
        traces: vec![workload.traces[thread].clone()],
        attackers: vec![false],
    }
}

/// IPC of each benign thread running alone under the same configuration.
pub fn alone_ipcs(cfg: &ExperimentConfig, preset: &Preset, workload: &Workload) -> Result<Vec<Option<f64>>> {
    let mut solo_cfg = cfg.clone();
    solo_cfg.controller.record_commands = false;
    (0..workload.threads())
        .into_par_iter()
        .map(|t| {
            if workload.attackers[t] {
                return Ok(None);
            }
            let out = simulate(&solo_cfg, preset, &solo(workload, t))?;
            Ok(Some(out.threads[0].ipc))
        })
        .collect()
}

#[derive(Debug)]
pub struct RunResult {
    pub report: StatsReport,
    pub output: RunOutput,
}

/// Solo baselines followed by the shared run.
pub fn run_workload(cfg: &ExperimentConfig, preset: &Preset, workload: &Workload) -> Result<RunResult> {
    let alone = alone_ipcs(cfg, preset, workload)?;
    let mut shared_cfg = cfg.clone();
    shared_cfg.controller.record_commands |= cfg.output.event_log;
    let output = simulate(&shared_cfg, preset, workload)?;
    let report = StatsReport::build(cfg, &output, Some(&alone))?;
    Ok(RunResult { report, output })
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let preset = cfg.preset()?;
    let workload = load_workload(cfg)?;
    run_workload(cfg, &preset, &workload)
}

/// Writes `report.json`, `report.txt` and, when requested, the
/// compressed command log into `dir`.
pub fn write_outputs(dir: &Path, result: &RunResult, event_log: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let mut written = Vec::new();
    let json = dir.join("report.json");
    std::fs::write(&json, result.report.to_json()).map_err(|e| SimError::io(&json, e))?;
    written.push(json);
    let kv = dir.join("report.txt");
    std::fs::write(&kv, result.report.to_kv()).map_err(|e| SimError::io(&kv, e))?;
    written.push(kv);
    if event_log {
        if let Some(log) = result.output.command_log.as_deref() {
            let path = dir.join("events.log.gz");
            let file = std::fs::File::create(&path).map_err(|e| SimError::io(&path, e))?;
            let mut gz = GzEncoder::new(std::io::BufWriter::new(file), Compression::default());
            for rec in log {
                writeln!(gz, "{}", rec.to_line()).map_err(|e| SimError::io(&path, e))?;
            }
            gz.finish()
                .and_then(|mut w| w.flush())
                .map_err(|e| SimError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub mix: String,
    pub mechanism: Mechanism,
    pub nrh: u32,
    pub breakhammer: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub mix: String,
    pub mechanism: String,
    pub nrh: u32,
    pub breakhammer: bool,
    pub status: String,
    pub weighted_speedup: Option<f64>,
    pub normalized_ws: Option<f64>,
    pub max_slowdown: Option<Ratio>,
    pub preventive_actions: Option<u64>,
    pub victim_refreshes: Option<u64>,
    pub rfm_commands: Option<u64>,
    pub energy_j: Option<f64>,
    pub energy_benign_j: Option<f64>,
    pub p50_ns: Option<f64>,
    pub p90_ns: Option<f64>,
    pub p99_ns: Option<f64>,
    pub suspects: Option<usize>,
    pub invariants_passed: Option<bool>,
    pub error: String,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

fn percentile_ns(report: &StatsReport, p: f64) -> Option<f64> {
    report.read_latency.iter().find(|l| l.percentile == p).map(|l| l.ns)
}

fn row_for(point: &SweepPoint, result: Result<RunResult>, baseline: Option<f64>) -> SweepRow {
    let mut row = SweepRow {
        mix: point.mix.clone(),
        mechanism: point.mechanism.name().into(),
        nrh: point.nrh,
        breakhammer: point.breakhammer,
        status: "ok".into(),
        weighted_speedup: None,
        normalized_ws: None,
        max_slowdown: None,
        preventive_actions: None,
        victim_refreshes: None,
        rfm_commands: None,
        energy_j: None,
        energy_benign_j: None,
        p50_ns: None,
        p90_ns: None,
        p99_ns: None,
        suspects: None,
        invariants_passed: None,
        error: String::new(),
    };
    match result {
        Ok(r) => {
            let rep = &r.report;
            row.weighted_speedup = rep.weighted_speedup;
            row.normalized_ws = match (rep.weighted_speedup, baseline) {
                (Some(ws), Some(b)) if b > 0.0 => Some(ws / b),
                _ => None,
            };
            row.max_slowdown = rep.max_slowdown;
            row.preventive_actions = Some(rep.preventive_actions);
            row.victim_refreshes = Some(r.output.controller.executed(ActionKind::VictimRefresh));
            row.rfm_commands = Some(r.output.controller.command_count(crate::dram::CommandKind::Rfm));
            row.energy_j = Some(rep.energy_j);
            row.energy_benign_j = Some(rep.energy_benign_j);
            row.p50_ns = percentile_ns(rep, 50.0);
            row.p90_ns = percentile_ns(rep, 90.0);
            row.p99_ns = percentile_ns(rep, 99.0);
            row.suspects = Some(rep.threads.iter().filter(|t| t.marked_suspect).count());
            row.invariants_passed = Some(rep.passed());
            if !rep.passed() {
                row.status = "invariant_failed".into();
            }
        }
        Err(e) => {
            row.status = "error".into();
            row.error = e.to_string();
        }
    }
    row
}

fn point_config(template: &ExperimentConfig, p: &SweepPoint) -> ExperimentConfig {
    let mut cfg = template.clone();
    let seed = template.mitigation.seed;
    cfg.mitigation = MitigationConfig {
        mechanism: p.mechanism,
        nrh: p.nrh,
        seed,
        ..template.mitigation.clone()
    };
    cfg.breakhammer.enabled = p.breakhammer;
    cfg.name = format!("{}-{}-{}-{}", p.mix, p.mechanism.name(), p.nrh, if p.breakhammer { "bh" } else { "nobh" });
    cfg
}

/// Runs every (mix, mechanism, threshold, breakhammer) combination.
/// Normalized weighted speedup divides by the unmitigated run of the
/// same mix. Failures are recorded per row.
pub fn sweep(
    template: &ExperimentConfig,
    preset: &Preset,
    mixes: &[(String, Workload)],
    mechanisms: &[Mechanism],
    nrhs: &[u32],
    breakhammer: &[bool],
) -> Vec<SweepRow> {
    let baselines: Vec<Option<f64>> = mixes
        .par_iter()
        .map(|(name, w)| {
            let p = SweepPoint {
                mix: name.clone(),
                mechanism: Mechanism::None,
                nrh: template.mitigation.nrh,
                breakhammer: false,
            };
            run_workload(&point_config(template, &p), preset, w)
                .ok()
                .and_then(|r| r.report.weighted_speedup)
        })
        .collect();
    let mut points = Vec::new();
    for (m, (name, _)) in mixes.iter().enumerate() {
        for &mechanism in mechanisms {
            for &nrh in nrhs {
                for &bh in breakhammer {
                    points.push((
                        m,
                        SweepPoint {
                            mix: name.clone(),
                            mechanism,
                            nrh,
                            breakhammer: bh,
                        },
                    ));
                }
            }
        }
    }
    points
        .par_iter()
        .map(|(m, p)| {
            let result = run_workload(&point_config(template, p), preset, &mixes[*m].1);
            row_for(p, result, baselines[*m])
        })
        .collect()
}

/// Settings for synthesizing a workload mix.
#[derive(Debug, Clone)]
pub struct MixSpec {
    pub instructions: u64,
    pub calibration_instructions: u64,
    pub attacker: AttackerProfile,
    pub seed: u64,
}

impl MixSpec {
    pub fn new(instructions: u64, seed: u64) -> Self {
        Self {
            instructions,
            calibration_instructions: (instructions / 2).clamp(50_000, 300_000),
            attacker: AttackerProfile {
                seed,
                ..Default::default()
            },
            seed,
        }
    }
}

pub fn target_for(cfg: &ExperimentConfig, preset: &Preset) -> Target {
    let mapping = cfg
        .controller
        .mapping
        .clone()
        .unwrap_or_else(|| crate::controller::AddressMapping::mop(&preset.geometry));
    Target::new(preset.geometry, mapping, cfg.llc.clone())
}

/// Calibrates a benign trace against solo runs of `cfg` without any
/// mitigation.
pub fn calibrated_benign(
    cfg: &ExperimentConfig,
    preset: &Preset,
    profile: &BenignProfile,
    spec: &MixSpec,
) -> Result<(Vec<TraceEntry>, Calibrated)> {
    let target = target_for(cfg, preset);
    let mut probe = cfg.clone();
    probe.mitigation = MitigationConfig::new(Mechanism::None, cfg.mitigation.nrh);
    probe.breakhammer.enabled = false;
    probe.controller.record_commands = false;
    probe.system.instructions = spec.calibration_instructions;
    probe.system.warmup_cycles = 0;
    let length = spec.calibration_instructions + spec.calibration_instructions / 2;
    let calibrated = calibrate_benign(profile, length, &target, |entries| {
        let w = Workload::new(vec![entries.to_vec()], vec![false]);
        Ok(simulate(&probe, preset, &w)?.threads[0].rbmpki)
    })?;
    // Long enough that the trace never wraps during the measured run.
    let full = spec.instructions * 3 + cfg.system.warmup_cycles * 4;
    let entries = gen_benign_with(profile, full, calibrated.mean_bubbles, &target)?;
    Ok((entries, calibrated))
}

#[derive(Debug, Clone)]
pub struct BuiltMix {
    pub workload: Workload,
    pub labels: Vec<String>,
    pub calibration: Vec<Option<f64>>,
}

/// Synthesizes the traces of `mix`; benign slots get distinct seeds.
pub fn build_mix(cfg: &ExperimentConfig, preset: &Preset, mix: &Mix, spec: &MixSpec) -> Result<BuiltMix> {
    let target = target_for(cfg, preset);
    let built = mix
        .0
        .par_iter()
        .enumerate()
        .map(|(i, slot)| match slot {
            Slot::Attacker => {
                let trace = gen_attacker(&spec.attacker, 100_000, &target)?;
                Ok((trace, true, "A".to_string(), None))
            }
            Slot::Benign(class) => {
                let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64 * 7919 + 1);
                let profile = BenignProfile::new(class.target_rbmpki(), seed);
                let (trace, cal) = calibrated_benign(cfg, preset, &profile, spec)?;
                Ok((trace, false, class.letter().to_string(), Some(cal.measured_rbmpki)))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut traces = Vec::new();
    let mut attackers = Vec::new();
    let mut labels = Vec::new();
    let mut calibration = Vec::new();
    for (t, a, l, c) in built {
        traces.push(t);
        attackers.push(a);
        labels.push(l);
        calibration.push(c);
    }
    Ok(BuiltMix {
        workload: Workload::new(traces, attackers),
        labels,
        calibration,
    })
}

/// Writes the traces of each mix into `dir` and returns the manifest path.
pub fn write_mixes(dir: &Path, mixes: &[(Mix, BuiltMix)]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    let mut runs = Vec::new();
    for (m, (mix, built)) in mixes.iter().enumerate() {
        let mut traces = Vec::new();
        for (i, trace) in built.workload.traces.iter().enumerate() {
            let name = format!("mix{m}-{mix}-t{i}-{}.trace", built.labels[i]);
            let path = dir.join(&name);
            let header = match built.calibration[i] {
                Some(r) => format!("benign class {}, calibrated RBMPKI {r:.3}", built.labels[i]),
                None => "attacker".to_string(),
            };
            write_trace(&path, trace, &header)?;
            traces.push((PathBuf::from(name), built.workload.attackers[i]));
        }
        runs.push(ManifestRun { traces });
    }
    let manifest = dir.join("mixes.manifest");
    std::fs::write(&manifest, format_manifest(&runs)).map_err(|e| SimError::io(&manifest, e))?;
    Ok(manifest)
}

/// Config with one thread per manifest entry.
pub fn config_for_run(template: &ExperimentConfig, run: &ManifestRun) -> ExperimentConfig {
    let mut cfg = template.clone();
    cfg.threads = run
        .traces
        .iter()
        .map(|(p, a)| ThreadSpec {
            trace: p.clone(),
            attacker: *a,
        })
        .collect();
    cfg
}
