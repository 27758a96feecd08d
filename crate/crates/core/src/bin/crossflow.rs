//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, unreadable or
//! invalid input files), 2 on runtime failures (malformed checkpoints,
//! simulation faults). The only environment variable consulted is
//! `CROSSFLOW_OUT`, a fallback for `--out`; all numeric behavior comes from
//! files and flags.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crossflow_core::config::FileConfig;
use crossflow_core::eval::{
    run_campaign, run_episode, summarize, EpisodeConfig, PlannerKind, RlPolicy,
};
use crossflow_core::noise::{estimate_log, NoiseModel};
use crossflow_core::td3::Td3Trainer;
use crossflow_core::{Error, Result};

#[derive(Parser)]
#[command(name = "crossflow", version, about = "Mixed-traffic intersection simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the graph policy and write checkpoint + training log.
    Train {
        /// Configuration file ([scenario], [reward], [td3] sections).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (fallback: $CROSSFLOW_OUT, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed for every random stream in the run.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an evaluation campaign and write episodes + reports.
    Evaluate {
        /// Campaign file ([campaign] section plus shared defaults).
        #[arg(long)]
        campaign: PathBuf,
        /// Trained policy checkpoint (required with --planner rl).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate only this planner instead of the campaign's list.
        #[arg(long)]
        planner: Option<PlannerKind>,
        /// Override the campaign's observation-noise setting.
        #[arg(long)]
        noise: Option<OnOff>,
        /// Output directory (fallback: $CROSSFLOW_OUT, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the campaign's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 1 is the determinism reference (any value
        /// produces identical output).
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Fit AR(1) noise parameters from a ground-truth/perception drive log.
    EstimateNoise {
        /// CSV drive log with gt and perc rows.
        #[arg(long)]
        log: PathBuf,
        /// Parameter file to write (TOML).
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render reports from saved raw episode records.
    Report {
        /// Directory holding episodes.jsonl from a previous evaluate run.
        #[arg(long = "in")]
        in_dir: PathBuf,
        /// csv for the per-configuration table, summary for plot-ready
        /// series (metric over automation level, one series per scenario).
        #[arg(long, default_value = "summary")]
        format: ReportFormat,
    },
    /// Run one episode and export a step-by-step record.
    Simulate {
        /// Scenario file ([scenario], [driver] sections).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "efifo")]
        planner: PlannerKind,
        /// Trained policy checkpoint (required with --planner rl).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Record file to write (JSON lines).
        #[arg(long)]
        record: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OnOff {
    On,
    Off,
}

impl std::str::FromStr for OnOff {
    type Err = Error;

    fn from_str(s: &str) -> Result<OnOff> {
        match s {
            "on" => Ok(OnOff::On),
            "off" => Ok(OnOff::Off),
            other => Err(Error::input(format!("expected on or off, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ReportFormat {
    Csv,
    Summary,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<ReportFormat> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "summary" => Ok(ReportFormat::Summary),
            other => Err(Error::input(format!("expected csv or summary, got {other:?}"))),
        }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn resolve_out(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("CROSSFLOW_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Provenance of an artifact-producing run; rerunning with the recorded
/// config and seed reproduces the outputs bit-exactly. Deliberately has no
/// timestamps.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    subcommand: String,
    code_version: String,
    seed: u64,
    out: PathBuf,
    checkpoints: Vec<PathBuf>,
    config: FileConfig,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// A named checkpoint must exist; the skip-and-report path is reserved for
/// campaign files that list the rl planner without any flag given.
fn require_exists(checkpoint: &Path) -> Result<()> {
    if checkpoint.exists() {
        Ok(())
    } else {
        Err(Error::input(format!("checkpoint not found: {}", checkpoint.display())))
    }
}

fn cmd_train(config: &Path, out: PathBuf, seed: u64) -> Result<()> {
    let cfg = FileConfig::load(config)?;
    let scenario = cfg.scenario.build()?;
    let mut trainer = Td3Trainer::new(cfg.td3.clone(), cfg.reward, seed)?;
    let report = trainer.train(&scenario, &out)?;
    let manifest = RunManifest {
        subcommand: "train".into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        out: out.clone(),
        checkpoints: vec![report.checkpoint.clone()],
        config: cfg,
    };
    write_file(
        &out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    println!(
        "trained {} env steps over {} episodes ({} gradient steps); mean return of last 10 episodes {:.3}",
        report.env_steps, report.episodes, report.gradient_steps, report.mean_return_last_10
    );
    println!("checkpoint: {}", report.checkpoint.display());
    println!("log:        {}", report.log.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    campaign: &Path,
    checkpoint: Option<PathBuf>,
    planner: Option<PlannerKind>,
    noise: Option<OnOff>,
    out: PathBuf,
    seed: Option<u64>,
    jobs: usize,
) -> Result<()> {
    let mut cfg = FileConfig::load(campaign)?;
    if let Some(p) = planner {
        if p == PlannerKind::Rl && checkpoint.is_none() {
            return Err(Error::input("--planner rl needs --checkpoint"));
        }
        cfg.campaign.planners = vec![p];
    }
    if let Some(n) = noise {
        cfg.campaign.noise = n == OnOff::On;
    }
    if let Some(s) = seed {
        cfg.campaign.seed = s;
    }
    if let Some(c) = &checkpoint {
        require_exists(c)?;
    }

    let (report, records) = run_campaign(&cfg.campaign, checkpoint.as_deref(), jobs)?;

    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let episodes_path = out.join("episodes.jsonl");
    let mut episodes = String::new();
    for r in &records {
        episodes.push_str(&serde_json::to_string(r).expect("record serializes"));
        episodes.push('\n');
    }
    write_file(&episodes_path, &episodes)?;
    write_file(&out.join("report.csv"), &report.to_csv())?;
    write_file(
        &out.join("summary.json"),
        &serde_json::to_string_pretty(&summarize(&report)).expect("summary serializes"),
    )?;
    let manifest = RunManifest {
        subcommand: "evaluate".into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.campaign.seed,
        out: out.clone(),
        checkpoints: checkpoint.into_iter().collect(),
        config: cfg,
    };
    write_file(
        &out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;

    let skipped = report.rows.iter().filter(|r| r.skipped.is_some()).count();
    println!(
        "{} configurations ({} skipped), {} episodes -> {}",
        report.rows.len(),
        skipped,
        records.len(),
        out.display()
    );
    Ok(())
}

fn cmd_estimate_noise(log: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(log).map_err(|e| Error::io(log, e))?;
    let report = estimate_log(&text, log)?;

    println!("fitted from {} aligned sample pairs", report.pairs);
    println!("channel  phi      sigma2     stationary_var");
    for (name, params, degenerate) in [
        ("x", report.model.x, report.degenerate[0]),
        ("y", report.model.y, report.degenerate[1]),
        ("v", report.model.v, report.degenerate[2]),
        ("psi", report.model.psi, report.degenerate[3]),
    ] {
        println!(
            "{name:<8} {:<8.4} {:<10.6} {:<14.6}{}",
            params.phi,
            params.sigma2,
            params.stationary_variance(),
            if degenerate { "  (degenerate: no signal)" } else { "" }
        );
    }

    #[derive(Serialize)]
    struct ParamsManifest<'a> {
        manifest: ManifestTable<'a>,
    }
    #[derive(Serialize)]
    struct ManifestTable<'a> {
        subcommand: &'a str,
        code_version: &'a str,
        log: &'a Path,
        pairs: usize,
    }
    let params = toml::to_string(&report.model).expect("params serialize");
    let manifest = toml::to_string(&ParamsManifest {
        manifest: ManifestTable {
            subcommand: "estimate-noise",
            code_version: env!("CARGO_PKG_VERSION"),
            log,
            pairs: report.pairs,
        },
    })
    .expect("manifest serializes");
    write_file(out, &format!("{params}\n{manifest}"))?;
    println!("params written to {}", out.display());
    Ok(())
}

fn cmd_report(in_dir: &Path, format: ReportFormat) -> Result<()> {
    let path = in_dir.join("episodes.jsonl");
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let records = crossflow_core::eval::read_records(std::io::BufReader::new(file), &path)?;
    let report = crossflow_core::eval::report_from_records(&records);
    match format {
        ReportFormat::Csv => print!("{}", report.to_csv()),
        ReportFormat::Summary => {
            println!("{}", serde_json::to_string_pretty(&summarize(&report)).unwrap())
        }
    }
    Ok(())
}

fn cmd_simulate(
    scenario: &Path,
    planner: PlannerKind,
    checkpoint: Option<PathBuf>,
    record: &Path,
    seed: u64,
) -> Result<()> {
    let cfg = FileConfig::load(scenario)?;
    let policy = match (planner, &checkpoint) {
        (PlannerKind::Rl, None) => {
            return Err(Error::input("--planner rl needs --checkpoint"));
        }
        (PlannerKind::Rl, Some(c)) => {
            require_exists(c)?;
            Some(RlPolicy::load(c)?)
        }
        _ => None,
    };

    let episode = EpisodeConfig {
        scenario_id: cfg.scenario.level,
        scenario: cfg.scenario.build()?,
        planner,
        noise: cfg.campaign.noise.then(NoiseModel::measured),
        drivers: cfg.driver,
        duration: cfg.campaign.episode_seconds,
        warmup: cfg.campaign.warmup_seconds,
        dt: cfg.campaign.dt,
    };

    let file = fs::File::create(record).map_err(|e| Error::io(record, e))?;
    let mut w = BufWriter::new(file);
    let manifest = RunManifest {
        subcommand: "simulate".into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed,
        out: record.to_path_buf(),
        checkpoints: checkpoint.into_iter().collect(),
        config: cfg,
    };
    writeln!(
        w,
        "{}",
        serde_json::json!({ "manifest": manifest })
    )
    .map_err(|e| Error::io(record, e))?;

    let rec = run_episode(&episode, policy.as_ref(), seed, Some(&mut w))?;

    writeln!(w, "{}", serde_json::json!({ "episode": rec })).map_err(|e| Error::io(record, e))?;
    w.flush().map_err(|e| Error::io(record, e))?;
    println!(
        "episode done: {} completions, {} collision events, {} vehicles spawned -> {}",
        rec.completions,
        rec.collision_events,
        rec.spawned,
        record.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train { config, out, seed } => cmd_train(&config, resolve_out(out), seed),
        Cmd::Evaluate { campaign, checkpoint, planner, noise, out, seed, jobs } => {
            cmd_evaluate(&campaign, checkpoint, planner, noise, resolve_out(out), seed, jobs)
        }
        Cmd::EstimateNoise { log, out } => cmd_estimate_noise(&log, &out),
        Cmd::Report { in_dir, format } => cmd_report(&in_dir, format),
        Cmd::Simulate { scenario, planner, checkpoint, record, seed } => {
            cmd_simulate(&scenario, planner, checkpoint, &record, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version through the error path; those are
            // successful runs, everything else is a usage error.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Io { .. } | Error::Parse { .. } | Error::Input(_) => 1,
                Error::Checkpoint(_) | Error::Sim(_) => 2,
            };
            ExitCode::from(code)
        }
    }
}
