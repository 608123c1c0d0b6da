//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::breakhammer::BreakHammerConfig;
use crate::controller::ControllerConfig;
use crate::cpu::{CoreConfig, LlcConfig};
use crate::dram::{line_of, Preset};
use crate::error::{Result, SimError};
use crate::mitigation::MitigationConfig;

fn default_preset() -> String {
    "ddr5-4800".into()
}
fn default_cpu_mhz() -> u32 {
    4200
}
fn default_warmup() -> u64 {
    100_000
}
fn default_instructions() -> u64 {
    1_000_000
}
fn default_max_cycles() -> u64 {
    2_000_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(default = "default_cpu_mhz")]
    pub cpu_mhz: u32,
    /// CPU cycles excluded from IPC and latency statistics.
    #[serde(default = "default_warmup")]
    pub warmup_cycles: u64,
    /// Instructions each benign core must retire.
    #[serde(default = "default_instructions")]
    pub instructions: u64,
    /// Abort the run after this many CPU cycles.
    #[serde(default = "default_max_cycles")]
    pub max_cycles: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            cpu_mhz: default_cpu_mhz(),
            warmup_cycles: default_warmup(),
            instructions: default_instructions(),
            max_cycles: default_max_cycles(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreadSpec {
    pub trace: PathBuf,
    #[serde(default)]
    pub attacker: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Write the command log as gzip-compressed lines.
    #[serde(default)]
    pub event_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Bundled preset name or path to a preset file.
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub llc: LlcConfig,
    #[serde(default)]
    pub core: CoreConfig,
    #[serde(default)]
    pub mitigation: MitigationConfig,
    #[serde(default)]
    pub breakhammer: BreakHammerConfig,
    #[serde(default)]
    pub threads: Vec<ThreadSpec>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: String::new(),
            preset: default_preset(),
            seed: 0,
            system: SystemConfig::default(),
            controller: ControllerConfig::default(),
            llc: LlcConfig::default(),
            core: CoreConfig::default(),
            mitigation: MitigationConfig::default(),
            breakhammer: BreakHammerConfig::default(),
            threads: Vec::new(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| SimError::Parse {
            path: origin.to_string(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            msg: e.message().to_string(),
        })
    }

    /// Loads a config file; relative trace and output paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        for t in &mut cfg.threads {
            if t.trace.is_relative() {
                t.trace = base.join(&t.trace);
            }
        }
        if let Some(dir) = cfg.output.dir.as_mut() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn preset(&self) -> Result<Preset> {
        Preset::resolve(&self.preset)
    }

    /// Checks everything except the existence of trace files.
    pub fn validate_values(&self) -> Result<()> {
        if self.system.cpu_mhz == 0 {
            return Err(SimError::config("system.cpu_mhz", "must be positive"));
        }
        if self.system.instructions == 0 {
            return Err(SimError::config("system.instructions", "must be positive"));
        }
        self.controller.validate()?;
        self.llc.validate()?;
        self.core.validate()?;
        self.breakhammer.validate()?;
        if self.mitigation.nrh == 0 {
            return Err(SimError::config("mitigation.nrh", "must be positive"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_values()?;
        if self.threads.is_empty() {
            return Err(SimError::config("threads", "at least one thread is required"));
        }
        for (i, t) in self.threads.iter().enumerate() {
            if !t.trace.is_file() {
                return Err(SimError::config(
                    format!("threads[{i}].trace"),
                    format!("{} does not exist", t.trace.display()),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitigation::Mechanism;

    const SAMPLE: &str = r#"
name = "hhha"
seed = 7

[mitigation]
mechanism = "graphene"
nrh = 1024

[breakhammer]
enabled = true

[[threads]]
trace = "a.trace"

[[threads]]
trace = "atk.trace"
attacker = true
"#;

    #[test]
    fn parses_sample_with_defaults() {
        let c = ExperimentConfig::parse(SAMPLE, "s.toml").unwrap();
        assert_eq!(c.mitigation.mechanism, Mechanism::Graphene);
        assert_eq!(c.breakhammer.window_ms, 64.0);
        assert_eq!(c.controller.cap, 4);
        assert_eq!(c.llc.total_mshrs, 64);
        assert!(c.threads[1].attacker);
        c.validate_values().unwrap();
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let text = SAMPLE.replace("nrh = 1024", "nrh = 1024\nnhr = 5");
        let e = ExperimentConfig::parse(&text, "s.toml").unwrap_err();
        assert!(matches!(e, SimError::Parse { line: 8, .. }), "{e}");
    }

    #[test]
    fn canonical_round_trip() {
        let c = ExperimentConfig::parse(SAMPLE, "s.toml").unwrap();
        let text = c.to_toml();
        let again = ExperimentConfig::parse(&text, "x").unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_toml(), text);
    }

    #[test]
    fn missing_trace_is_a_field_error() {
        let c = ExperimentConfig::parse(SAMPLE, "s.toml").unwrap();
        let e = c.validate().unwrap_err();
        assert!(e.to_string().contains("threads[0].trace"), "{e}");
    }

    #[test]
    fn relative_paths_resolve_against_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, SAMPLE).unwrap();
        let c = ExperimentConfig::load(&p).unwrap();
        assert_eq!(c.threads[0].trace, dir.path().join("a.trace"));
    }
}
