//! Whole-system simulation loop: cores, LLC and memory controller in
//! lockstep on the CPU clock.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::breakhammer::{BreakHammer, WindowRecord};
use crate::config::ExperimentConfig;
use crate::controller::{Controller, ControllerStats, Enqueue, MemRequest};
use crate::cpu::{Core, CoreStats, Llc, LlcThreadStats, TraceEntry};
use crate::dram::{CommandRecord, Cycle, Preset};
use crate::error::{Result, SimError};
use crate::mitigation::{build, secure_config, MechanismParams};

#[derive(Debug, Clone)]
pub struct Workload {
    pub traces: Vec<Arc<Vec<TraceEntry>>>,
    pub attackers: Vec<bool>,
}

impl Workload {
    pub fn new(traces: Vec<Vec<TraceEntry>>, attackers: Vec<bool>) -> Self {
        assert_eq!(traces.len(), attackers.len());
        Self {
            traces: traces.into_iter().map(Arc::new).collect(),
            attackers,
        }
    }

    pub fn threads(&self) -> usize {
        self.traces.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadResult {
    pub thread: usize,
    pub attacker: bool,
    pub retired: u64,
    pub measured_instructions: u64,
    pub measured_cycles: u64,
    pub ipc: f64,
    pub finished_at: Option<Cycle>,
    pub demand_acts: u64,
    pub rbmpki: f64,
    pub energy_j: f64,
    pub marked_suspect: bool,
    pub first_marked_cycle: Option<Cycle>,
    pub final_quota: usize,
    pub llc: LlcThreadStats,
    pub core: CoreStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyResult {
    pub nrh: u32,
    /// Largest damage any row ever reached.
    pub peak_damage: u32,
    pub peak_bank: usize,
    pub peak_row: u32,
    pub peak_cycle: Cycle,
    pub liveness_violations: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub threads: Vec<ThreadResult>,
    pub cpu_cycles: u64,
    pub dram_cycles: u64,
    pub duration_ns: f64,
    pub controller: ControllerStats,
    /// Post-warm-up read latencies of benign threads, in DRAM cycles.
    pub read_latencies: Vec<u64>,
    pub dram_period_ns: f64,
    pub safety: SafetyResult,
    pub mechanism: MechanismParams,
    pub breakhammer_windows: Vec<WindowRecord>,
    pub breakhammer_markings: u64,
    pub energy_j: f64,
    pub energy_benign_j: f64,
    pub command_log: Option<Vec<CommandRecord>>,
    pub max_llc_mshrs: usize,
}

struct Clock {
    cpu_mhz: u64,
    dram_mhz: u64,
    acc: u64,
}

impl Clock {
    /// DRAM edges that fall within the next CPU cycle.
    fn advance(&mut self) -> u32 {
        self.acc += self.dram_mhz;
        let mut n = 0;
        while self.acc >= self.cpu_mhz {
            self.acc -= self.cpu_mhz;
            n += 1;
        }
        n
    }
}

pub fn simulate(cfg: &ExperimentConfig, preset: &Preset, workload: &Workload) -> Result<RunOutput> {
    cfg.validate_values()?;
    let threads = workload.threads();
    if threads == 0 {
        return Err(SimError::config("threads", "at least one thread is required"));
    }
    let timing = preset.timing;
    let mechanism = secure_config(&cfg.mitigation, &timing)?;
    let mitigation = build(&mechanism, preset.geometry.total_banks(), cfg.mitigation.seed ^ cfg.seed);
    let breakhammer = cfg.breakhammer.enabled.then(|| {
        let window = timing.ns_to_cycles(cfg.breakhammer.window_ms * 1e6);
        BreakHammer::new(&cfg.breakhammer, threads, cfg.llc.total_mshrs, window)
    });
    let mut ctrl = Controller::new(cfg.controller.clone(), preset, threads, mitigation, breakhammer)?;
    let mut llc = Llc::new(cfg.llc.clone(), threads)?;

    let any_benign = workload.attackers.iter().any(|a| !a);
    let mut cores: Vec<Core> = (0..threads)
        .map(|t| {
            let target = (!workload.attackers[t] || !any_benign).then_some(cfg.system.instructions);
            Core::new(t, t, cfg.core.clone(), workload.traces[t].clone(), target)
        })
        .collect();

    let mut clock = Clock {
        cpu_mhz: cfg.system.cpu_mhz as u64,
        dram_mhz: timing.clock_mhz as u64,
        acc: 0,
    };
    let warmup = cfg.system.warmup_cycles;
    let mut warm_retired = vec![0u64; threads];
    let mut finish_retired = vec![None::<u64>; threads];
    let mut latencies = Vec::new();
    let mut warm_dram: Option<Cycle> = None;
    let mut completed: Vec<MemRequest> = Vec::new();
    let mut retry = Vec::new();
    let mut dram_now: Cycle = 0;
    let mut max_mshrs = 0;
    let mut cpu_now: Cycle = 0;

    loop {
        if cpu_now == warmup {
            for (i, c) in cores.iter().enumerate() {
                warm_retired[i] = c.retired();
            }
            warm_dram = Some(dram_now);
        }
        for core in cores.iter_mut() {
            let t = core.thread();
            let quota = ctrl
                .breakhammer()
                .map_or(cfg.llc.total_mshrs, |b| b.quota(t));
            core.tick(cpu_now, &mut llc, quota);
            if core.finished_at().is_some() && finish_retired[t].is_none() {
                finish_retired[t] = Some(core.retired());
            }
        }
        max_mshrs = max_mshrs.max(llc.mshrs_in_use());

        let pending = llc.outbox_len();
        for _ in 0..pending {
            let o = llc.pop_outgoing().expect("counted");
            match ctrl.enqueue(o.thread, o.address, o.is_write, dram_now) {
                Enqueue::Accepted(_) => {}
                Enqueue::RejectedFull => retry.push(o),
            }
        }
        for o in retry.drain(..) {
            llc.requeue(o);
        }

        for _ in 0..clock.advance() {
            ctrl.tick(dram_now);
            ctrl.drain_completed(dram_now, &mut completed);
            for req in completed.drain(..) {
                if !workload.attackers[req.thread] && warm_dram.is_some_and(|w| req.arrival >= w) {
                    latencies.push(req.completion.expect("completed") - req.arrival);
                }
                for w in llc.fill(req.address) {
                    cores[w.core].wake(w.seq, cpu_now + 1);
                }
            }
            dram_now += 1;
        }

        cpu_now += 1;
        if cores.iter().all(|c| c.target().is_none() || c.finished_at().is_some()) {
            break;
        }
        if cpu_now >= cfg.system.max_cycles {
            return Err(SimError::Aborted(format!(
                "benign cores did not finish within {} CPU cycles",
                cfg.system.max_cycles
            )));
        }
    }

    let stats = ctrl.stats().clone();
    let bh = ctrl.breakhammer();
    let start = if cpu_now > warmup { warmup } else { 0 };
    let thread_results = cores
        .iter()
        .enumerate()
        .map(|(t, c)| {
            let end_cycle = c.finished_at().unwrap_or(cpu_now);
            let end_retired = finish_retired[t].unwrap_or(c.retired());
            let (from_cycle, from_retired) = if end_cycle > start && start > 0 {
                (start, warm_retired[t])
            } else {
                (0, 0)
            };
            let measured_cycles = end_cycle.saturating_sub(from_cycle);
            let measured_instructions = end_retired - from_retired;
            let acts = stats.demand_acts_by_thread[t];
            ThreadResult {
                thread: t,
                attacker: workload.attackers[t],
                retired: c.retired(),
                measured_instructions,
                measured_cycles,
                ipc: if measured_cycles == 0 {
                    0.0
                } else {
                    measured_instructions as f64 / measured_cycles as f64
                },
                finished_at: c.finished_at(),
                demand_acts: acts,
                rbmpki: if c.retired() == 0 {
                    0.0
                } else {
                    acts as f64 * 1000.0 / c.retired() as f64
                },
                energy_j: stats.energy_pj_by_thread[t] * 1e-12,
                marked_suspect: bh.is_some_and(|b| b.ever_marked(t)),
                first_marked_cycle: bh.and_then(|b| b.first_marked(t)),
                final_quota: bh.map_or(cfg.llc.total_mshrs, |b| b.quota(t)),
                llc: llc.stats(t).clone(),
                core: c.stats().clone(),
            }
        })
        .collect();

    let period = timing.clock_period_ns();
    let duration_ns = dram_now as f64 * period;
    let ranks = preset.geometry.ranks();
    let background = preset.energy.background_j(duration_ns, ranks);
    let benign_cmd: f64 = (0..threads)
        .filter(|&t| !workload.attackers[t])
        .map(|t| stats.energy_pj_by_thread[t])
        .sum();
    let peak = ctrl.device().oracle().peak();
    Ok(RunOutput {
        threads: thread_results,
        cpu_cycles: cpu_now,
        dram_cycles: dram_now,
        duration_ns,
        read_latencies: latencies,
        dram_period_ns: period,
        safety: SafetyResult {
            nrh: cfg.mitigation.nrh,
            peak_damage: peak.count,
            peak_bank: peak.bank,
            peak_row: peak.row,
            peak_cycle: peak.cycle,
            liveness_violations: ctrl.device().oracle().liveness_violations(dram_now),
        },
        mechanism,
        breakhammer_windows: bh.map(|b| b.history().to_vec()).unwrap_or_default(),
        breakhammer_markings: bh.map_or(0, |b| b.markings()),
        energy_j: stats.energy_pj * 1e-12 + background,
        energy_benign_j: benign_cmd * 1e-12,
        command_log: ctrl.command_log().map(<[_]>::to_vec),
        max_llc_mshrs: max_mshrs,
        controller: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitigation::{Mechanism, MitigationConfig};

    fn cfg(instructions: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.system.instructions = instructions;
        c.system.warmup_cycles = 1000;
        c
    }

    fn streaming(seed: u64, n: usize) -> Vec<TraceEntry> {
        (0..n as u64)
            .map(|i| TraceEntry::read(3, ((i * 7919 + seed * 104_729) % (1 << 22)) << 6))
            .collect()
    }

    #[test]
    fn hit_only_thread_approaches_issue_width() {
        let w = Workload::new(vec![vec![TraceEntry::read(30, 0x40)]], vec![false]);
        let out = simulate(&cfg(200_000), &Preset::ddr5_4800(), &w).unwrap();
        assert!(out.threads[0].ipc > 3.9, "{}", out.threads[0].ipc);
        assert_eq!(out.controller.total_triggered(), 0);
    }

    #[test]
    fn streaming_threads_finish_and_miss() {
        let w = Workload::new(vec![streaming(1, 50_000), streaming(2, 50_000)], vec![false, false]);
        let out = simulate(&cfg(100_000), &Preset::ddr5_4800(), &w).unwrap();
        for t in &out.threads {
            assert!(t.retired >= 100_000);
            assert!(t.ipc > 0.0 && t.ipc < 4.0);
            assert!(t.llc.misses > 1000);
        }
        assert!(!out.read_latencies.is_empty());
        assert_eq!(out.safety.liveness_violations, 0);
    }

    #[test]
    fn identical_inputs_identical_outputs() {
        let mut c = cfg(50_000);
        c.mitigation = MitigationConfig::new(Mechanism::Para, 256);
        c.mitigation.seed = 3;
        let w = Workload::new(vec![streaming(1, 20_000), streaming(5, 20_000)], vec![false, false]);
        let a = simulate(&c, &Preset::ddr5_4800(), &w).unwrap();
        let b = simulate(&c, &Preset::ddr5_4800(), &w).unwrap();
        assert_eq!(a.threads, b.threads);
        assert_eq!(a.controller, b.controller);
        assert_eq!(a.read_latencies, b.read_latencies);
    }
}
