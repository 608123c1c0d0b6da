//! Thread throttling driven by RowHammer-preventive action attribution.
//!
//! Every preventive action distributes a score across hardware threads in
//! proportion to the activations each issued since the previous action.
//! Threads whose score stands out from the mean are marked suspect and lose
//! most of their cache-miss-buffer quota.

use serde::{Deserialize, Serialize};

use crate::dram::{Cycle, ThreadId};
use crate::error::{Result, SimError};
use crate::mitigation::ActionKind;

/// Unsigned 16.16 fixed-point score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(pub u32);

impl Score {
    pub const FRAC_BITS: u32 = 16;
    pub const ONE: Score = Score(1 << Self::FRAC_BITS);
    pub const ZERO: Score = Score(0);

    pub fn from_f64(v: f64) -> Self {
        Score((v * Self::ONE.0 as f64).round().clamp(0.0, u32::MAX as f64) as u32)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Self::ONE.0 as f64
    }

    pub fn saturating_add(self, other: Score) -> Score {
        Score(self.0.saturating_add(other.0))
    }
}

fn default_true() -> bool {
    true
}
fn default_window_ms() -> f64 {
    64.0
}
fn default_threat() -> f64 {
    32.0
}
fn default_outlier() -> f64 {
    0.65
}
fn default_old_penalty() -> u32 {
    1
}
fn default_new_divisor() -> u32 {
    10
}
fn default_weight() -> f64 {
    1.0
}

/// Score contributed by one preventive action of each kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionWeights {
    #[serde(default = "default_weight")]
    pub victim_refresh: f64,
    #[serde(default = "default_weight")]
    pub rfm_command: f64,
    #[serde(default = "default_weight")]
    pub back_off_rfm_burst: f64,
}

impl Default for ActionWeights {
    fn default() -> Self {
        Self {
            victim_refresh: 1.0,
            rfm_command: 1.0,
            back_off_rfm_burst: 1.0,
        }
    }
}

impl ActionWeights {
    pub fn of(&self, kind: ActionKind) -> f64 {
        match kind {
            ActionKind::VictimRefresh => self.victim_refresh,
            ActionKind::RfmCommand => self.rfm_command,
            ActionKind::BackOffRfmBurst => self.back_off_rfm_burst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreakHammerConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Throttling window length in milliseconds.
    #[serde(default = "default_window_ms")]
    pub window_ms: f64,
    /// Minimum score for a thread to be considered a threat.
    #[serde(default = "default_threat")]
    pub threat_threshold: f64,
    /// Fraction above the mean score that marks an outlier.
    #[serde(default = "default_outlier")]
    pub outlier_threshold: f64,
    /// Quota decrement for a thread that was already suspect.
    #[serde(default = "default_old_penalty")]
    pub old_suspect_penalty: u32,
    /// Quota divisor for a newly suspect thread.
    #[serde(default = "default_new_divisor")]
    pub new_suspect_divisor: u32,
    #[serde(default)]
    pub weights: ActionWeights,
}

impl Default for BreakHammerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            window_ms: default_window_ms(),
            threat_threshold: default_threat(),
            outlier_threshold: default_outlier(),
            old_suspect_penalty: default_old_penalty(),
            new_suspect_divisor: default_new_divisor(),
            weights: ActionWeights::default(),
        }
    }
}

impl BreakHammerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |f: &str, m: &str| Err(SimError::config(format!("breakhammer.{f}"), m));
        if self.window_ms.is_nan() || self.window_ms <= 0.0 {
            return bad("window_ms", "must be positive");
        }
        if self.outlier_threshold.is_nan() || self.outlier_threshold < 0.0 {
            return bad("outlier_threshold", "must be non-negative");
        }
        if self.threat_threshold.is_nan() || self.threat_threshold < 0.0 {
            return bad("threat_threshold", "must be non-negative");
        }
        if self.new_suspect_divisor == 0 {
            return bad("new_suspect_divisor", "must be at least 1");
        }
        for (name, w) in [
            ("victim_refresh", self.weights.victim_refresh),
            ("rfm_command", self.weights.rfm_command),
            ("back_off_rfm_burst", self.weights.back_off_rfm_burst),
        ] {
            if w.is_nan() || w < 0.0 {
                return bad(&format!("weights.{name}"), "must be non-negative");
            }
        }
        Ok(())
    }
}

/// Per-thread score state as laid out in hardware.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadScoreState {
    pub activations: u16,
    pub scores: [Score; 2],
    pub suspect: [bool; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThrottleState {
    pub quota: usize,
    pub recent_suspect: bool,
}

/// Snapshot taken at the end of each throttling window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window: u64,
    pub end_cycle: Cycle,
    pub scores: Vec<f64>,
    pub suspect: Vec<bool>,
    pub quotas: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct BreakHammer {
    threat: Score,
    outlier: f64,
    old_penalty: usize,
    new_divisor: usize,
    weights: ActionWeights,
    total_mshrs: usize,
    window: Cycle,
    next_window_end: Cycle,
    active: usize,
    threads: Vec<ThreadScoreState>,
    throttle: Vec<ThrottleState>,
    ever_marked: Vec<bool>,
    first_marked: Vec<Option<Cycle>>,
    markings: u64,
    actions_seen: u64,
    history: Vec<WindowRecord>,
}

impl BreakHammer {
    /// `window` is the throttling window in controller cycles.
    pub fn new(config: &BreakHammerConfig, threads: usize, total_mshrs: usize, window: Cycle) -> Self {
        Self {
            threat: Score::from_f64(config.threat_threshold),
            outlier: config.outlier_threshold,
            old_penalty: config.old_suspect_penalty as usize,
            new_divisor: config.new_suspect_divisor.max(1) as usize,
            weights: config.weights,
            total_mshrs,
            window: window.max(1),
            next_window_end: window.max(1),
            active: 0,
            threads: vec![ThreadScoreState::default(); threads],
            throttle: vec![
                ThrottleState {
                    quota: total_mshrs,
                    recent_suspect: false,
                };
                threads
            ],
            ever_marked: vec![false; threads],
            first_marked: vec![None; threads],
            markings: 0,
            actions_seen: 0,
            history: Vec::new(),
        }
    }

    pub fn threads(&self) -> usize {
        self.threads.len()
    }

    pub fn total_mshrs(&self) -> usize {
        self.total_mshrs
    }

    pub fn active_set(&self) -> usize {
        self.active
    }

    pub fn state(&self, thread: ThreadId) -> &ThreadScoreState {
        &self.threads[thread]
    }

    pub fn throttle(&self, thread: ThreadId) -> &ThrottleState {
        &self.throttle[thread]
    }

    /// Score of `thread` in the active counter set.
    pub fn score(&self, thread: ThreadId) -> Score {
        self.threads[thread].scores[self.active]
    }

    pub fn is_suspect(&self, thread: ThreadId) -> bool {
        self.threads[thread].suspect[self.active]
    }

    pub fn quota(&self, thread: ThreadId) -> usize {
        self.throttle[thread].quota
    }

    pub fn ever_marked(&self, thread: ThreadId) -> bool {
        self.ever_marked[thread]
    }

    pub fn first_marked(&self, thread: ThreadId) -> Option<Cycle> {
        self.first_marked[thread]
    }

    pub fn markings(&self) -> u64 {
        self.markings
    }

    pub fn actions_seen(&self) -> u64 {
        self.actions_seen
    }

    pub fn history(&self) -> &[WindowRecord] {
        &self.history
    }

    pub fn record_activation(&mut self, thread: ThreadId) {
        let a = &mut self.threads[thread].activations;
        *a = a.saturating_add(1);
    }

    pub fn on_action(&mut self, kind: ActionKind, now: Cycle) -> Vec<ThreadId> {
        self.on_preventive_action(Score::from_f64(self.weights.of(kind)), now)
    }

    /// Attributes `weight` to threads by activation share, then marks
    /// outliers in the active set. Returns the newly marked threads.
    pub fn on_preventive_action(&mut self, weight: Score, now: Cycle) -> Vec<ThreadId> {
        self.actions_seen += 1;
        let total: u64 = self.threads.iter().map(|t| t.activations as u64).sum();
        if total == 0 {
            return Vec::new();
        }
        for t in &mut self.threads {
            let delta = Score((weight.0 as u64 * t.activations as u64 / total) as u32);
            for s in &mut t.scores {
                *s = s.saturating_add(delta);
            }
            t.activations = 0;
        }

        let active = self.active;
        let n = self.threads.len() as f64;
        let sum: f64 = self.threads.iter().map(|t| t.scores[active].0 as f64).sum();
        let limit = (1.0 + self.outlier) * sum;
        let mut marked = Vec::new();
        for i in 0..self.threads.len() {
            let score = self.threads[i].scores[active];
            if score < self.threat || score.0 as f64 * n <= limit {
                continue;
            }
            if !self.threads[i].suspect[active] {
                self.threads[i].suspect[active] = true;
                self.apply_quota(i);
                self.markings += 1;
                self.ever_marked[i] = true;
                self.first_marked[i].get_or_insert(now);
                marked.push(i);
            }
        }
        marked
    }

    fn apply_quota(&mut self, thread: ThreadId) -> usize {
        let st = &mut self.throttle[thread];
        st.quota = if st.recent_suspect {
            st.quota.saturating_sub(self.old_penalty)
        } else {
            st.quota / self.new_divisor
        };
        st.quota
    }

    /// Ends every window whose boundary is at or before `now`.
    pub fn tick(&mut self, now: Cycle) {
        while now >= self.next_window_end {
            let end = self.next_window_end;
            self.on_window_end(end);
        }
    }

    pub fn next_window_end(&self) -> Cycle {
        self.next_window_end
    }

    pub fn on_window_end(&mut self, now: Cycle) {
        let active = self.active;
        self.history.push(WindowRecord {
            window: self.history.len() as u64,
            end_cycle: now,
            scores: self.threads.iter().map(|t| t.scores[active].to_f64()).collect(),
            suspect: self.threads.iter().map(|t| t.suspect[active]).collect(),
            quotas: self.throttle.iter().map(|t| t.quota).collect(),
        });
        for (t, st) in self.threads.iter_mut().zip(&mut self.throttle) {
            st.recent_suspect = t.suspect[active];
            if !st.recent_suspect {
                st.quota = self.total_mshrs;
            }
            t.scores[active] = Score::ZERO;
            t.suspect[active] = false;
        }
        self.active ^= 1;
        self.next_window_end = now + self.window;
    }
}
