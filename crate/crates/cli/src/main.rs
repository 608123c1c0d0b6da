use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bhsim::config::ExperimentConfig;
use bhsim::harness::{self, MixSpec};
use bhsim::metrics::StatsReport;
use bhsim::mitigation::Mechanism;
use bhsim::security;
use bhsim::sim::Workload;
use bhsim::tracegen::{parse_manifest, Mix};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bhsim", version, about = "DRAM subsystem simulator with RowHammer mitigations and BreakHammer")]
struct Cli {
    /// Worker threads for solo baselines and sweeps (default: all cores).
    #[arg(long, short = 'j', global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment: solo baselines, then the shared run.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        /// Output directory; overrides the config file.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print the flat key-value report instead of a summary.
        #[arg(long)]
        full: bool,
    },
    /// Run every mechanism x threshold x BreakHammer combination.
    Sweep {
        /// Template config; its threads are ignored.
        #[arg(long, short)]
        config: PathBuf,
        /// Mix manifest written by `gen-traces`.
        #[arg(long, conflicts_with = "mix")]
        manifest: Option<PathBuf>,
        /// Synthesize mixes instead, e.g. `HHHA,LLLL`.
        #[arg(long, value_delimiter = ',')]
        mix: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "graphene")]
        mechanisms: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "4096,2048,1024,512,256,128,64")]
        nrh: Vec<u32>,
        #[arg(long, value_enum, default_value_t = BhSetting::Both)]
        breakhammer: BhSetting,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination (default: stdout).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Synthesize calibrated traces for workload mixes and a manifest.
    GenTraces {
        #[arg(long, value_delimiter = ',', required = true)]
        mix: Vec<String>,
        #[arg(long, short)]
        out: PathBuf,
        /// Instructions each benign core must retire.
        #[arg(long, default_value_t = 1_000_000)]
        instructions: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Config whose system, cache and memory settings drive calibration.
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Keep all aggressors of the attacker in a single bank.
        #[arg(long)]
        same_bank: bool,
        #[arg(long, default_value_t = 2)]
        aggressor_rows: usize,
    },
    /// Evaluate the multi-attacker marking bound.
    AnalyzeSecurity {
        /// Fraction of attack threads; omit to emit the full curve set.
        #[arg(long, short)]
        f: Option<f64>,
        #[arg(long, short, value_delimiter = ',', default_value = "0.05,0.15,0.35,0.65,1.0")]
        t: Vec<f64>,
        /// Grid points over f in [0, 1) when sweeping.
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print saved reports as key-value text or one CSV line each.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = ReportFormat::Kv)]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BhSetting {
    On,
    Off,
    Both,
}

impl BhSetting {
    fn values(self) -> Vec<bool> {
        match self {
            BhSetting::On => vec![true],
            BhSetting::Off => vec![false],
            BhSetting::Both => vec![false, true],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Kv,
    Json,
    Csv,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.mitigation.seed = s;
    }
    Ok(cfg)
}

fn summary(report: &StatsReport) -> String {
    let mut s = format!("name = {}\nmechanism = {}\n", report.name, report.config.mitigation.mechanism.name());
    for t in &report.threads {
        s.push_str(&format!(
            "thread {}{}: ipc {:.4} alone {} rbmpki {:.2} suspect {}\n",
            t.thread,
            if t.attacker { " (attacker)" } else { "" },
            t.ipc_shared,
            t.ipc_alone.map_or("-".into(), |v| format!("{v:.4}")),
            t.rbmpki,
            t.marked_suspect
        ));
    }
    if let Some(ws) = report.weighted_speedup {
        s.push_str(&format!("weighted_speedup = {ws:.4}\n"));
    }
    if let Some(ms) = report.max_slowdown {
        s.push_str(&format!("max_slowdown = {ms}\n"));
    }
    s.push_str(&format!("preventive_actions = {}\n", report.preventive_actions));
    s.push_str(&format!("energy_j = {:.6}\n", report.energy_j));
    for c in &report.invariants {
        s.push_str(&format!("check {} {}: {}\n", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail));
    }
    s
}

fn run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, full: bool) -> Result<bool> {
    let cfg = load_config(config, seed)?;
    let result = harness::run(&cfg)?;
    if let Some(dir) = out.or_else(|| cfg.output.dir.clone()) {
        for p in harness::write_outputs(&dir, &result, cfg.output.event_log)? {
            eprintln!("wrote {}", p.display());
        }
    }
    if full {
        print!("{}", result.report.to_kv());
    } else {
        print!("{}", summary(&result.report));
    }
    Ok(result.report.passed())
}

fn parse_mechanisms(names: &[String]) -> Result<Vec<Mechanism>> {
    names
        .iter()
        .map(|n| Mechanism::parse(n).with_context(|| format!("unknown mechanism `{n}`")))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    config: &Path,
    manifest: Option<PathBuf>,
    mixes: &[String],
    mechanisms: &[String],
    nrh: &[u32],
    bh: BhSetting,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<bool> {
    let template = load_config(config, seed)?;
    template.validate_values()?;
    let preset = template.preset()?;
    let mechanisms = parse_mechanisms(mechanisms)?;
    let workloads: Vec<(String, Workload)> = if let Some(m) = manifest {
        let text = std::fs::read_to_string(&m).with_context(|| format!("reading {}", m.display()))?;
        let base = m.parent().unwrap_or(Path::new("."));
        parse_manifest(&text, base)?
            .iter()
            .enumerate()
            .map(|(i, run)| {
                let cfg = harness::config_for_run(&template, run);
                Ok((format!("run{i}"), harness::load_workload(&cfg)?))
            })
            .collect::<Result<_>>()?
    } else if !mixes.is_empty() {
        let spec = MixSpec::new(template.system.instructions, template.seed);
        mixes
            .iter()
            .map(|m| {
                let mix = Mix::parse(m)?;
                let built = harness::build_mix(&template, &preset, &mix, &spec)?;
                Ok((mix.to_string(), built.workload))
            })
            .collect::<Result<_>>()?
    } else {
        bail!("sweep needs --manifest or --mix");
    };
    let rows = harness::sweep(&template, &preset, &workloads, &mechanisms, nrh, &bh.values());
    emit(out.as_deref(), &harness::sweep_csv(&rows))?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        eprintln!("{failed} of {} sweep rows failed", rows.len());
    }
    Ok(failed == 0)
}

#[allow(clippy::too_many_arguments)]
fn gen_traces(
    mixes: &[String],
    out: &Path,
    instructions: u64,
    seed: u64,
    config: Option<PathBuf>,
    same_bank: bool,
    aggressor_rows: usize,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(&p)?,
        None => ExperimentConfig::default(),
    };
    cfg.system.instructions = instructions;
    cfg.validate_values()?;
    let preset = cfg.preset()?;
    let mut spec = MixSpec::new(instructions, seed);
    spec.attacker.same_bank = same_bank;
    spec.attacker.num_aggressor_rows = aggressor_rows;
    let built = mixes
        .iter()
        .map(|m| {
            let mix = Mix::parse(m)?;
            let b = harness::build_mix(&cfg, &preset, &mix, &spec)?;
            Ok((mix, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = harness::write_mixes(out, &built)?;
    let runs = parse_manifest(&std::fs::read_to_string(&manifest)?, out)?;
    for (i, run) in runs.iter().enumerate() {
        let mut c = harness::config_for_run(&cfg, run);
        c.name = format!("run{i}-{}", built[i].0);
        for t in &mut c.threads {
            t.trace = t.trace.strip_prefix(out).map(Path::to_path_buf).unwrap_or(t.trace.clone());
        }
        let path = out.join(format!("run{i}.toml"));
        std::fs::write(&path, c.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", manifest.display());
    Ok(())
}

fn analyze_security(f: Option<f64>, t: &[f64], points: usize, out: Option<PathBuf>) -> Result<()> {
    let rows = match f {
        Some(f) => security::sweep(t, &[f])?,
        None => security::sweep(t, &security::grid(points, 1.0))?,
    };
    if f.is_some() && out.is_none() {
        for r in &rows {
            println!("f_atk = {} th_outlier = {} ratio = {}", r.f_atk, r.th_outlier, r.ratio);
        }
        return Ok(());
    }
    emit(out.as_deref(), &security::to_csv(&rows))
}

fn report(paths: &[PathBuf], format: ReportFormat) -> Result<bool> {
    let mut ok = true;
    let mut csv = String::from("name,mechanism,nrh,breakhammer,weighted_speedup,max_slowdown,preventive_actions,energy_j,passed\n");
    for p in paths {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r = StatsReport::from_json(&text)?;
        ok &= r.passed();
        match format {
            ReportFormat::Kv => print!("{}", r.to_kv()),
            ReportFormat::Json => print!("{}", r.to_json()),
            ReportFormat::Csv => csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.name,
                r.config.mitigation.mechanism.name(),
                r.config.mitigation.nrh,
                r.config.breakhammer.enabled,
                r.weighted_speedup.map_or(String::new(), |v| v.to_string()),
                r.max_slowdown.map_or(String::new(), |v| v.to_string()),
                r.preventive_actions,
                r.energy_j,
                r.passed()
            )),
        }
    }
    if matches!(format, ReportFormat::Csv) {
        print!("{csv}");
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match cli.command {
        Command::Run { config, out, seed, full } => run(&config, out, seed, full),
        Command::Sweep {
            config,
            manifest,
            mix,
            mechanisms,
            nrh,
            breakhammer,
            seed,
            out,
        } => sweep(&config, manifest, &mix, &mechanisms, &nrh, breakhammer, seed, out),
        Command::GenTraces {
            mix,
            out,
            instructions,
            seed,
            config,
            same_bank,
            aggressor_rows,
        } => gen_traces(&mix, &out, instructions, seed, config, same_bank, aggressor_rows).map(|_| true),
        Command::AnalyzeSecurity { f, t, points, out } => analyze_security(f, &t, points, out).map(|_| true),
        Command::Report { reports, format } => report(&reports, format),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("invariant checks failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
