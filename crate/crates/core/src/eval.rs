//! Evaluation campaigns and their metrics.
//!
//! Episodes run the intersection under one of three planners — the learned
//! policy, the reservation baseline, or none — with stochastic (EIDM) manual
//! drivers and optional AR(1) observation noise on the planner's input.
//! Every episode produces a self-contained [`EpisodeRecord`]; all metrics
//! are pure functions of those records, so a report can be recomputed
//! bit-exactly from the saved raw episodes.
//!
//! A campaign is the cross product scenarios × automation levels × planners,
//! each configuration repeated `runs` times with derived per-run seeds.
//! Configurations are independent and may execute on a thread pool; the
//! reduction into the report is position-based and therefore deterministic
//! regardless of scheduling.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path as FsPath;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::driver::{DriverMode, DriverSettings};
use crate::efifo::EfifoPlanner;
use crate::graph::build_graph;
use crate::noise::{observe, NoiseBank, NoiseModel};
use crate::nn::ActorNetwork;
use crate::reward::{self, RewardWeights};
use crate::rng::stream;
use crate::td3::denormalize_accel;
use crate::world::{Approach, Layout, Path, ScenarioConfig, VehicleId, VehicleKind, World};
use crate::{Error, Result};

/// Evaluation episode length in seconds.
pub const EPISODE_SECONDS: f64 = 300.0;
/// Leading portion excluded from all metrics while traffic builds up.
pub const WARMUP_SECONDS: f64 = 30.0;

/// Which central planner commands the automated vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    /// Learned graph policy from a trained checkpoint.
    Rl,
    /// Enhanced-FIFO reservation baseline.
    Efifo,
    /// No central planner: AVs fall back to the same driver model as MVs.
    None,
}

impl PlannerKind {
    pub fn label(self) -> &'static str {
        match self {
            PlannerKind::Rl => "rl",
            PlannerKind::Efifo => "efifo",
            PlannerKind::None => "none",
        }
    }
}

impl std::fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<PlannerKind> {
        match s {
            "rl" => Ok(PlannerKind::Rl),
            "efifo" => Ok(PlannerKind::Efifo),
            "none" => Ok(PlannerKind::None),
            other => Err(Error::input(format!(
                "unknown planner {other:?}; expected rl, efifo or none"
            ))),
        }
    }
}

/// A trained actor loaded for inference.
#[derive(Debug, Clone)]
pub struct RlPolicy {
    actor: ActorNetwork,
}

impl RlPolicy {
    pub fn load(path: &FsPath) -> Result<RlPolicy> {
        let blocks = crate::nn::load_blocks(path)?;
        Ok(RlPolicy { actor: ActorNetwork::from_blocks("actor.", &blocks)? })
    }

    pub fn from_actor(actor: ActorNetwork) -> RlPolicy {
        RlPolicy { actor }
    }

    /// Acceleration commands for every AV in the observed scene.
    pub fn commands(
        &self,
        observed: &[crate::world::Vehicle],
        layout: &Layout,
    ) -> BTreeMap<VehicleId, f64> {
        let graph = build_graph(observed, layout);
        let mut cmds = BTreeMap::new();
        if graph.av_index.is_empty() {
            return cmds;
        }
        let actions = self.actor.act(&graph);
        for (k, &vi) in graph.av_index.iter().enumerate() {
            cmds.insert(observed[vi].id, denormalize_accel(actions[k]));
        }
        cmds
    }
}

/// Everything one evaluation episode needs.
#[derive(Debug, Clone)]
pub struct EpisodeConfig {
    /// Demand preset (1..=5) this scenario was built from.
    pub scenario_id: usize,
    pub scenario: ScenarioConfig,
    pub planner: PlannerKind,
    /// Observation noise on the planner's input; `None` disables it.
    pub noise: Option<NoiseModel>,
    pub drivers: DriverSettings,
    pub duration: f64,
    pub warmup: f64,
    pub dt: f64,
}

impl EpisodeConfig {
    /// The standard evaluation setting: EIDM manual drivers, 300 s episode,
    /// 30 s warm-up.
    pub fn evaluation(
        scenario_id: usize,
        automation: f64,
        planner: PlannerKind,
        noise: Option<NoiseModel>,
    ) -> EpisodeConfig {
        let mut drivers = DriverSettings::default();
        drivers.mode = DriverMode::Eidm;
        EpisodeConfig {
            scenario_id,
            scenario: ScenarioConfig::demand_level(scenario_id).with_automation(automation),
            planner,
            noise,
            drivers,
            duration: EPISODE_SECONDS,
            warmup: WARMUP_SECONDS,
            dt: 0.1,
        }
    }
}

/// Per-vehicle tallies over the measured (post-warm-up) window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub id: u64,
    pub kind: VehicleKind,
    pub approach: Approach,
    /// Measured steps this vehicle was present.
    pub steps: u64,
    /// Accumulated delay, Σ (1 − v/v_lim), in steps.
    pub delay: f64,
    /// Sum of per-step speeds (m/s); mean speed is `speed_sum / steps`.
    pub speed_sum: f64,
    pub completed: bool,
    pub collided: bool,
}

/// Self-contained result of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario: usize,
    pub automation: f64,
    pub planner: PlannerKind,
    pub noise: bool,
    pub seed: u64,
    pub dt: f64,
    pub duration: f64,
    pub warmup: f64,
    /// Crossings completed inside the measured window.
    pub completions: u64,
    /// Collision events (vehicle pairs) inside the measured window.
    pub collision_events: u64,
    /// Vehicles removed by those collisions.
    pub collided_vehicles: u64,
    /// Reservation-overlap violations observed (eFIFO only; must stay 0).
    pub occupancy_overlaps: u64,
    /// Whole-episode spawn counters, warm-up included.
    pub spawned: u64,
    pub suppressed: u64,
    pub vehicles: Vec<VehicleSummary>,
}

impl EpisodeRecord {
    /// Length of the measured window in seconds.
    pub fn measured_seconds(&self) -> f64 {
        self.duration - self.warmup
    }
}

/// One row of a per-step debug trace (the `simulate --record` output).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub reward: reward::RewardBreakdown,
    pub vehicles: Vec<TraceVehicle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceVehicle {
    pub id: u64,
    pub kind: VehicleKind,
    pub path: crate::world::PathId,
    pub s: f64,
    pub v: f64,
    pub accel: f64,
    pub command: Option<f64>,
}

/// Runs one episode and returns its record. `policy` must be given when the
/// config selects the learned planner. `trace` receives one JSON line per
/// step when present.
pub fn run_episode(
    cfg: &EpisodeConfig,
    policy: Option<&RlPolicy>,
    seed: u64,
    mut trace: Option<&mut dyn Write>,
) -> Result<EpisodeRecord> {
    cfg.scenario.validate()?;
    if cfg.planner == PlannerKind::Rl && policy.is_none() {
        return Err(Error::input("rl planner selected but no policy loaded"));
    }
    let layout = Layout::four_way();
    let mut world = World::new();
    let mut efifo = EfifoPlanner::new();
    let mut bank = NoiseBank::new();
    let mut world_rng = stream(seed, "eval-world", 0);
    let mut obs_rng = stream(seed, "eval-noise", 0);
    let weights = RewardWeights::default();

    let steps = (cfg.duration / cfg.dt).round() as usize;
    let mut acc: BTreeMap<VehicleId, VehicleSummary> = BTreeMap::new();
    let mut completions = 0u64;
    let mut collision_events = 0u64;
    let mut collided_vehicles = 0u64;
    let mut occupancy_overlaps = 0u64;

    for _ in 0..steps {
        let observed = observe(world.vehicles(), &layout, cfg.noise.as_ref(), &mut bank, &mut obs_rng);
        let commands = match cfg.planner {
            PlannerKind::Rl => policy.unwrap().commands(&observed, &layout),
            PlannerKind::Efifo => efifo.plan(&observed, &layout, &cfg.drivers),
            PlannerKind::None => BTreeMap::new(),
        };
        let actions: Vec<f64> = commands.values().copied().collect();
        let outcome = world.step(&layout, &commands, &cfg.drivers, &mut world_rng, cfg.dt)?;
        let measured = world.time > cfg.warmup + 1e-9;

        // Nothing on the road leaves nothing worth a trace row, so a
        // zero-demand episode produces an empty record.
        if let Some(w) = trace.as_deref_mut().filter(|_| !world.vehicles().is_empty()) {
            let breakdown = reward::total(
                world.vehicles(),
                &layout,
                &actions,
                !outcome.collisions.is_empty(),
                &weights,
            );
            let row = TraceRow {
                t: world.time,
                reward: breakdown,
                vehicles: world
                    .vehicles()
                    .iter()
                    .map(|v| TraceVehicle {
                        id: v.id.0,
                        kind: v.kind,
                        path: v.path,
                        s: v.s,
                        v: v.v,
                        accel: v.accel,
                        command: commands.get(&v.id).copied(),
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut *w, &row)
                .map_err(|e| Error::Sim(format!("trace serialization: {e}")))?;
            writeln!(w).map_err(|e| Error::Sim(format!("trace write: {e}")))?;
        }

        if measured {
            for v in world.vehicles() {
                let path = layout.path(v.path);
                let e = acc.entry(v.id).or_insert_with(|| VehicleSummary {
                    id: v.id.0,
                    kind: v.kind,
                    approach: v.path.approach,
                    steps: 0,
                    delay: 0.0,
                    speed_sum: 0.0,
                    completed: false,
                    collided: false,
                });
                e.steps += 1;
                e.delay += 1.0 - v.v / path.v_lim(v.s);
                e.speed_sum += v.v;
            }
            for done in &outcome.completions {
                completions += 1;
                if let Some(e) = acc.get_mut(&done.id) {
                    e.completed = true;
                }
            }
            for (a, b) in &outcome.collisions {
                collision_events += 1;
                for id in [a, b] {
                    collided_vehicles += 1;
                    if let Some(e) = acc.get_mut(id) {
                        e.collided = true;
                    }
                }
            }
            if cfg.planner == PlannerKind::Efifo {
                occupancy_overlaps += efifo.state.conflicting_overlaps().len() as u64;
            }
        }

        world.spawn(&layout, &cfg.scenario, &mut world_rng, cfg.dt);
    }

    Ok(EpisodeRecord {
        scenario: cfg.scenario_id,
        automation: cfg.scenario.automation_level,
        planner: cfg.planner,
        noise: cfg.noise.is_some(),
        seed,
        dt: cfg.dt,
        duration: cfg.duration,
        warmup: cfg.warmup,
        completions,
        collision_events,
        collided_vehicles,
        occupancy_overlaps,
        spawned: world.counters.spawned,
        suppressed: world.counters.suppressed,
        vehicles: acc.into_values().collect(),
    })
}

/// Delay of one vehicle trace of `(v, s)` samples: Σ (1 − v/v_lim(s)),
/// in steps. Zero exactly when the vehicle tracked the limit throughout.
pub fn delay_of_trace(trace: &[(f64, f64)], path: &Path) -> f64 {
    trace.iter().map(|&(v, s)| 1.0 - v / path.v_lim(s)).sum()
}

/// Completed crossings per hour over the measured window.
pub fn flow_rate(record: &EpisodeRecord) -> f64 {
    record.completions as f64 * 3600.0 / record.measured_seconds()
}

/// Aggregated metrics of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMetrics {
    pub runs: usize,
    pub flow_mean: f64,
    pub flow_std: f64,
    /// Mean accumulated delay per vehicle (steps), by vehicle kind.
    pub delay_av_mean: f64,
    pub delay_mv_mean: f64,
    /// Mean per-step speed by originating road.
    pub v_major_mean: f64,
    pub v_minor_mean: f64,
    /// Share of episodes with at least one collision, in percent.
    pub collision_rate_episode_pct: f64,
    /// Collided vehicles per vehicle-crossing, in percent.
    pub collision_rate_crossing_pct: f64,
    pub occupancy_overlaps: u64,
}

impl ConfigMetrics {
    fn empty() -> ConfigMetrics {
        ConfigMetrics {
            runs: 0,
            flow_mean: 0.0,
            flow_std: 0.0,
            delay_av_mean: 0.0,
            delay_mv_mean: 0.0,
            v_major_mean: 0.0,
            v_minor_mean: 0.0,
            collision_rate_episode_pct: 0.0,
            collision_rate_crossing_pct: 0.0,
            occupancy_overlaps: 0,
        }
    }
}

fn is_major(a: Approach) -> bool {
    matches!(a, Approach::East | Approach::West)
}

fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (mean, var.sqrt())
}

/// Pure aggregation of one configuration's episode records.
pub fn aggregate(records: &[EpisodeRecord]) -> ConfigMetrics {
    if records.is_empty() {
        return ConfigMetrics::empty();
    }
    let flows: Vec<f64> = records.iter().map(flow_rate).collect();
    let (flow_mean, flow_std) = mean_and_std(&flows);

    let mut delay = BTreeMap::from([(VehicleKind::Av, (0.0, 0u64)), (VehicleKind::Mv, (0.0, 0u64))]);
    let mut speed = [(0.0f64, 0u64); 2]; // [major, minor]
    for v in records.iter().flat_map(|r| &r.vehicles) {
        if v.steps == 0 {
            continue;
        }
        let d = delay.get_mut(&v.kind).unwrap();
        d.0 += v.delay;
        d.1 += 1;
        let lane = if is_major(v.approach) { 0 } else { 1 };
        speed[lane].0 += v.speed_sum;
        speed[lane].1 += v.steps;
    }
    let kind_mean = |k: VehicleKind| {
        let (sum, n) = delay[&k];
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };
    let road_mean =
        |l: usize| if speed[l].1 == 0 { 0.0 } else { speed[l].0 / speed[l].1 as f64 };

    let episodes_hit = records.iter().filter(|r| r.collision_events > 0).count();
    let collided: u64 = records.iter().map(|r| r.collided_vehicles).sum();
    let crossings: u64 = records.iter().map(|r| r.completions).sum::<u64>() + collided;

    ConfigMetrics {
        runs: records.len(),
        flow_mean,
        flow_std,
        delay_av_mean: kind_mean(VehicleKind::Av),
        delay_mv_mean: kind_mean(VehicleKind::Mv),
        v_major_mean: road_mean(0),
        v_minor_mean: road_mean(1),
        collision_rate_episode_pct: 100.0 * episodes_hit as f64 / records.len() as f64,
        collision_rate_crossing_pct: if crossings == 0 {
            0.0
        } else {
            100.0 * collided as f64 / crossings as f64
        },
        occupancy_overlaps: records.iter().map(|r| r.occupancy_overlaps).sum(),
    }
}

/// Campaign definition: the evaluation grid and its base seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignSpec {
    /// Demand presets to evaluate (1..=5).
    pub scenarios: Vec<usize>,
    pub automation_levels: Vec<f64>,
    pub planners: Vec<PlannerKind>,
    /// Episodes per configuration.
    pub runs: usize,
    /// Observation noise on planner inputs.
    pub noise: bool,
    /// Noise parameters; the measured defaults when omitted.
    pub noise_model: Option<NoiseModel>,
    pub seed: u64,
    pub episode_seconds: f64,
    pub warmup_seconds: f64,
    pub dt: f64,
}

impl Default for CampaignSpec {
    fn default() -> CampaignSpec {
        CampaignSpec {
            scenarios: vec![1],
            automation_levels: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            planners: vec![PlannerKind::Efifo, PlannerKind::None],
            runs: 10,
            noise: true,
            noise_model: None,
            seed: 0,
            episode_seconds: EPISODE_SECONDS,
            warmup_seconds: WARMUP_SECONDS,
            dt: 0.1,
        }
    }
}

impl CampaignSpec {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::input("campaign needs runs >= 1"));
        }
        if self.scenarios.is_empty() || self.automation_levels.is_empty() || self.planners.is_empty()
        {
            return Err(Error::input("campaign grid must not be empty"));
        }
        for &s in &self.scenarios {
            if !(1..=5).contains(&s) {
                return Err(Error::input(format!("scenario id {s} outside 1..=5")));
            }
        }
        for &l in &self.automation_levels {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::input(format!("automation level {l} outside [0, 1]")));
            }
        }
        if !(self.dt > 0.0) {
            return Err(Error::input("dt must be positive"));
        }
        if !(self.episode_seconds > self.warmup_seconds && self.warmup_seconds >= 0.0) {
            return Err(Error::input("episode must be longer than the warm-up"));
        }
        if let Some(m) = &self.noise_model {
            m.validate()?;
        }
        Ok(())
    }

    fn noise_model(&self) -> Option<NoiseModel> {
        self.noise.then(|| self.noise_model.unwrap_or_else(NoiseModel::measured))
    }

    /// The configuration grid in report order.
    pub fn grid(&self) -> Vec<(usize, f64, PlannerKind)> {
        let mut out = Vec::new();
        for &s in &self.scenarios {
            for &a in &self.automation_levels {
                for &p in &self.planners {
                    out.push((s, a, p));
                }
            }
        }
        out
    }
}

/// One line of the campaign report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRow {
    pub scenario: usize,
    pub automation: f64,
    pub planner: PlannerKind,
    pub noise: bool,
    pub metrics: ConfigMetrics,
    /// Set when the configuration did not run (e.g. no checkpoint).
    pub skipped: Option<String>,
}

/// Aggregated campaign result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ConfigRow>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "scenario,automation,planner,noise,runs,flow_mean,\
         flow_std,delay_av,delay_mv,v_major,v_minor,collision_episode_pct,collision_crossing_pct,\
         occupancy_overlaps,skipped";

    /// Delimited-text rendering, one row per configuration.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let m = &r.metrics;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.scenario,
                r.automation,
                r.planner,
                if r.noise { "on" } else { "off" },
                m.runs,
                m.flow_mean,
                m.flow_std,
                m.delay_av_mean,
                m.delay_mv_mean,
                m.v_major_mean,
                m.v_minor_mean,
                m.collision_rate_episode_pct,
                m.collision_rate_crossing_pct,
                m.occupancy_overlaps,
                r.skipped.as_deref().unwrap_or(""),
            ));
        }
        out
    }
}

/// Runs the full campaign. Returns the report plus every raw episode record
/// in grid order (records of configuration `i` occupy `i*runs..(i+1)*runs`).
///
/// `checkpoint` is consulted only for `rl` rows: a missing path skips those
/// configurations with an explanatory report entry, while an unreadable
/// checkpoint is a hard error. `jobs` caps worker threads; any value yields
/// the same output.
pub fn run_campaign(
    spec: &CampaignSpec,
    checkpoint: Option<&FsPath>,
    jobs: usize,
) -> Result<(MetricsReport, Vec<EpisodeRecord>)> {
    spec.validate()?;
    let grid = spec.grid();

    let needs_rl = spec.planners.contains(&PlannerKind::Rl);
    let (policy, rl_skip): (Option<RlPolicy>, Option<String>) = if !needs_rl {
        (None, None)
    } else {
        match checkpoint {
            None => (None, Some("skipped: no checkpoint provided".into())),
            Some(p) if !p.exists() => {
                (None, Some(format!("skipped: checkpoint not found: {}", p.display())))
            }
            Some(p) => (Some(RlPolicy::load(p)?), None),
        }
    };

    // Pre-derived seeds make the outcome independent of scheduling.
    let noise = spec.noise_model();
    let mut tasks = Vec::new();
    for (ci, &(scenario, automation, planner)) in grid.iter().enumerate() {
        for run in 0..spec.runs {
            let skip = planner == PlannerKind::Rl && rl_skip.is_some();
            let seed = stream(spec.seed, "eval-run", (ci * 10_000 + run) as u64).gen::<u64>();
            tasks.push((ci, run, scenario, automation, planner, seed, skip));
        }
    }

    let slots: Mutex<Vec<Option<EpisodeRecord>>> = Mutex::new(vec![None; tasks.len()]);
    let cursor = AtomicUsize::new(0);
    let workers = jobs.max(1).min(tasks.len().max(1));
    let run_one = |task_idx: usize| -> Result<()> {
        let (_, _, scenario, automation, planner, seed, skip) = tasks[task_idx];
        if skip {
            return Ok(());
        }
        let mut cfg = EpisodeConfig::evaluation(scenario, automation, planner, noise);
        cfg.duration = spec.episode_seconds;
        cfg.warmup = spec.warmup_seconds;
        cfg.dt = spec.dt;
        let record = run_episode(&cfg, policy.as_ref(), seed, None)?;
        slots.lock().unwrap()[task_idx] = Some(record);
        Ok(())
    };

    if workers <= 1 {
        for i in 0..tasks.len() {
            run_one(i)?;
        }
    } else {
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = cursor.fetch_add(1, Ordering::Relaxed);
                    if i >= tasks.len() || failure.lock().unwrap().is_some() {
                        break;
                    }
                    if let Err(e) = run_one(i) {
                        *failure.lock().unwrap() = Some(e);
                        break;
                    }
                });
            }
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
    }

    let slots = slots.into_inner().unwrap();
    let mut rows = Vec::with_capacity(grid.len());
    let mut records = Vec::new();
    for (ci, &(scenario, automation, planner)) in grid.iter().enumerate() {
        let mine: Vec<EpisodeRecord> =
            slots[ci * spec.runs..(ci + 1) * spec.runs].iter().flatten().cloned().collect();
        let skipped =
            if planner == PlannerKind::Rl && rl_skip.is_some() { rl_skip.clone() } else { None };
        rows.push(ConfigRow {
            scenario,
            automation,
            planner,
            noise: spec.noise,
            metrics: aggregate(&mine),
            skipped,
        });
        records.extend(mine);
    }
    Ok((MetricsReport { rows }, records))
}

/// Reads episode records back from a JSONL reader.
pub fn read_records(reader: impl std::io::BufRead, origin: &FsPath) -> Result<Vec<EpisodeRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EpisodeRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(origin, format!("episode record on line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// One plot-ready line: a metric over automation level at fixed scenario,
/// planner and noise setting. Plotting every series of one metric gives
/// the scenario-family charts directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummarySeries {
    pub metric: String,
    pub scenario: usize,
    pub planner: PlannerKind,
    pub noise: bool,
    pub automation: Vec<f64>,
    pub values: Vec<f64>,
    /// Sample spread per point; present for metrics averaged over runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stds: Option<Vec<f64>>,
}

/// The structured summary file: every metric as plot-ready series plus the
/// configurations that did not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub series: Vec<SummarySeries>,
    pub skipped: Vec<String>,
}

const SERIES_METRICS: [&str; 7] = [
    "flow_veh_per_h",
    "delay_av_steps",
    "delay_mv_steps",
    "v_major_mps",
    "v_minor_mps",
    "collision_episode_pct",
    "collision_crossing_pct",
];

fn metric_value(m: &ConfigMetrics, name: &str) -> f64 {
    match name {
        "flow_veh_per_h" => m.flow_mean,
        "delay_av_steps" => m.delay_av_mean,
        "delay_mv_steps" => m.delay_mv_mean,
        "v_major_mps" => m.v_major_mean,
        "v_minor_mps" => m.v_minor_mean,
        "collision_episode_pct" => m.collision_rate_episode_pct,
        _ => m.collision_rate_crossing_pct,
    }
}

/// Renders a report into plot-ready series, one per metric × scenario ×
/// planner, points ordered by automation level.
pub fn summarize(report: &MetricsReport) -> Summary {
    let mut keys: Vec<(usize, PlannerKind, bool)> = Vec::new();
    let mut skipped = Vec::new();
    for r in &report.rows {
        if let Some(reason) = &r.skipped {
            skipped.push(format!(
                "scenario {} automation {} planner {}: {reason}",
                r.scenario, r.automation, r.planner
            ));
            continue;
        }
        let key = (r.scenario, r.planner, r.noise);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }

    let mut series = Vec::new();
    for metric in SERIES_METRICS {
        for &(scenario, planner, noise) in &keys {
            let mut points: Vec<(f64, f64, f64)> = report
                .rows
                .iter()
                .filter(|r| {
                    r.skipped.is_none()
                        && (r.scenario, r.planner, r.noise) == (scenario, planner, noise)
                })
                .map(|r| (r.automation, metric_value(&r.metrics, metric), r.metrics.flow_std))
                .collect();
            points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            series.push(SummarySeries {
                metric: metric.to_string(),
                scenario,
                planner,
                noise,
                automation: points.iter().map(|p| p.0).collect(),
                values: points.iter().map(|p| p.1).collect(),
                stds: (metric == "flow_veh_per_h")
                    .then(|| points.iter().map(|p| p.2).collect()),
            });
        }
    }
    Summary { series, skipped }
}

/// Rebuilds a report from raw episode records (the same pure aggregation
/// used by [`run_campaign`]); rows come out in first-appearance order.
pub fn report_from_records(records: &[EpisodeRecord]) -> MetricsReport {
    let mut order: Vec<(usize, u64, PlannerKind, bool)> = Vec::new();
    let mut groups: BTreeMap<(usize, u64, PlannerKind, bool), Vec<EpisodeRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.scenario, r.automation.to_bits(), r.planner, r.noise);
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(r.clone());
    }
    let rows = order
        .into_iter()
        .map(|key| {
            let recs = &groups[&key];
            ConfigRow {
                scenario: key.0,
                automation: f64::from_bits(key.1),
                planner: key.2,
                noise: key.3,
                metrics: aggregate(recs),
                skipped: None,
            }
        })
        .collect();
    MetricsReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::world::{PathId, Turn, V_LIM_APPROACH};

    fn record_with(completions: u64, measured: f64) -> EpisodeRecord {
        EpisodeRecord {
            scenario: 1,
            automation: 0.5,
            planner: PlannerKind::None,
            noise: false,
            seed: 0,
            dt: 0.1,
            duration: measured,
            warmup: 0.0,
            completions,
            collision_events: 0,
            collided_vehicles: 0,
            occupancy_overlaps: 0,
            spawned: completions,
            suppressed: 0,
            vehicles: Vec::new(),
        }
    }

    #[test]
    fn delay_closed_forms() {
        let layout = Layout::four_way();
        let path = layout.path(PathId { approach: Approach::West, turn: Turn::Straight });
        // Tracking the limit exactly: zero delay.
        let at_limit: Vec<(f64, f64)> = (0..50).map(|k| (path.v_lim(k as f64), k as f64)).collect();
        assert_abs_diff_eq!(delay_of_trace(&at_limit, path), 0.0, epsilon = 1e-12);
        // Standing still: one full step of delay per step.
        let standing: Vec<(f64, f64)> = (0..37).map(|_| (0.0, 20.0)).collect();
        assert_abs_diff_eq!(delay_of_trace(&standing, path), 37.0, epsilon = 1e-12);
        // Half the limit over 100 steps: exactly 50.
        let half: Vec<(f64, f64)> = (0..100).map(|_| (0.5 * V_LIM_APPROACH, 20.0)).collect();
        assert_abs_diff_eq!(delay_of_trace(&half, path), 50.0, epsilon = 1e-12);
    }

    #[test]
    fn flow_rate_unit_conversion() {
        assert_abs_diff_eq!(flow_rate(&record_with(10, 600.0)), 60.0, epsilon = 1e-12);
        assert_abs_diff_eq!(flow_rate(&record_with(0, 600.0)), 0.0);
        // Rate additivity: two equal halves give the same rate as their sum.
        let half = flow_rate(&record_with(7, 300.0));
        let full = flow_rate(&record_with(14, 600.0));
        assert_abs_diff_eq!(half, full, epsilon = 1e-9);
    }

    #[test]
    fn aggregation_partitions_vehicles_by_road_exactly() {
        let mut rec = record_with(3, 100.0);
        for (i, approach) in Approach::ALL.iter().enumerate() {
            rec.vehicles.push(VehicleSummary {
                id: i as u64,
                kind: if i % 2 == 0 { VehicleKind::Av } else { VehicleKind::Mv },
                approach: *approach,
                steps: 10,
                delay: 2.5,
                speed_sum: 80.0,
                completed: true,
                collided: false,
            });
        }
        let m = aggregate(std::slice::from_ref(&rec));
        // Every vehicle lands in exactly one road bucket; with symmetric
        // inputs both means equal the per-step speed of 8 m/s.
        assert_abs_diff_eq!(m.v_major_mean, 8.0);
        assert_abs_diff_eq!(m.v_minor_mean, 8.0);
        assert_abs_diff_eq!(m.delay_av_mean, 2.5);
        assert_abs_diff_eq!(m.delay_mv_mean, 2.5);
        assert_abs_diff_eq!(m.collision_rate_episode_pct, 0.0);
    }

    #[test]
    fn collision_rates_count_episodes_and_crossings() {
        let mut a = record_with(9, 100.0);
        a.collision_events = 1;
        a.collided_vehicles = 2;
        let b = record_with(9, 100.0);
        let m = aggregate(&[a, b]);
        assert_abs_diff_eq!(m.collision_rate_episode_pct, 50.0);
        // 2 collided vehicles out of 18 + 2 crossings.
        assert_abs_diff_eq!(m.collision_rate_crossing_pct, 10.0);
    }

    #[test]
    fn metrics_are_pure_functions_of_saved_records() {
        let cfg = mini_cfg(PlannerKind::Efifo, 0.6);
        let rec = run_episode(&cfg, None, 7, None).unwrap();
        let live = aggregate(std::slice::from_ref(&rec));
        let json = serde_json::to_string(&rec).unwrap();
        let back: EpisodeRecord = serde_json::from_str(&json).unwrap();
        let replayed = aggregate(std::slice::from_ref(&back));
        assert_eq!(live, replayed);
        assert!(rec.completions > 0, "measured window should see crossings");
    }

    fn mini_cfg(planner: PlannerKind, automation: f64) -> EpisodeConfig {
        let mut cfg =
            EpisodeConfig::evaluation(3, automation, planner, Some(NoiseModel::measured()));
        cfg.duration = 60.0;
        cfg.warmup = 10.0;
        cfg
    }

    #[test]
    fn planners_are_inert_without_avs() {
        // At automation 0 there is nothing to command: every planner yields
        // the identical record under the same seed, noise on.
        let a = run_episode(&mini_cfg(PlannerKind::Efifo, 0.0), None, 3, None).unwrap();
        let mut b = run_episode(&mini_cfg(PlannerKind::None, 0.0), None, 3, None).unwrap();
        assert_ne!(a.planner, b.planner);
        b.planner = a.planner;
        assert_eq!(a, b);
    }

    #[test]
    fn episodes_are_deterministic_per_seed() {
        let a = run_episode(&mini_cfg(PlannerKind::Efifo, 0.7), None, 41, None).unwrap();
        let b = run_episode(&mini_cfg(PlannerKind::Efifo, 0.7), None, 41, None).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = run_episode(&mini_cfg(PlannerKind::Efifo, 0.7), None, 42, None).unwrap();
        assert_ne!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&c).unwrap(),
            "different seeds should differ"
        );
    }

    #[test]
    fn campaign_is_deterministic_and_parallel_invariant() {
        let spec = CampaignSpec {
            scenarios: vec![1],
            automation_levels: vec![0.0, 1.0],
            planners: vec![PlannerKind::Efifo],
            runs: 2,
            noise: true,
            noise_model: None,
            seed: 5,
            episode_seconds: 30.0,
            warmup_seconds: 5.0,
            dt: 0.1,
        };
        let (r1, e1) = run_campaign(&spec, None, 1).unwrap();
        let (r4, e4) = run_campaign(&spec, None, 4).unwrap();
        assert_eq!(r1, r4);
        assert_eq!(e1, e4);
        assert_eq!(e1.len(), 4);
        assert_eq!(r1.rows.len(), 2);
        assert!(r1.to_csv().lines().count() == 3);
    }

    #[test]
    fn summary_orders_points_by_automation_and_lists_skips() {
        let spec = CampaignSpec {
            scenarios: vec![2],
            automation_levels: vec![1.0, 0.0],
            planners: vec![PlannerKind::Rl, PlannerKind::Efifo],
            runs: 1,
            noise: false,
            noise_model: None,
            seed: 9,
            episode_seconds: 20.0,
            warmup_seconds: 0.0,
            dt: 0.1,
        };
        let (report, _) = run_campaign(&spec, None, 2).unwrap();
        let summary = summarize(&report);
        // 7 metrics × 1 surviving (scenario, planner, noise) combination.
        assert_eq!(summary.series.len(), 7);
        assert_eq!(summary.skipped.len(), 2);
        assert!(summary.skipped[0].contains("planner rl"));
        for s in &summary.series {
            assert_eq!(s.planner, PlannerKind::Efifo);
            assert_eq!(s.automation, vec![0.0, 1.0], "points sorted by level");
            assert_eq!(s.values.len(), 2);
            assert_eq!(s.stds.is_some(), s.metric == "flow_veh_per_h");
        }
    }

    #[test]
    fn rl_rows_are_skipped_without_a_checkpoint() {
        let spec = CampaignSpec {
            scenarios: vec![1],
            automation_levels: vec![0.5],
            planners: vec![PlannerKind::Rl, PlannerKind::None],
            runs: 1,
            noise: false,
            noise_model: None,
            seed: 1,
            episode_seconds: 20.0,
            warmup_seconds: 0.0,
            dt: 0.1,
        };
        let (report, records) = run_campaign(&spec, None, 1).unwrap();
        assert_eq!(report.rows.len(), 2);
        let rl = &report.rows[0];
        assert_eq!(rl.planner, PlannerKind::Rl);
        assert!(rl.skipped.as_deref().unwrap().contains("no checkpoint"));
        assert_eq!(rl.metrics.runs, 0);
        assert_eq!(report.rows[1].metrics.runs, 1);
        assert_eq!(records.len(), 1);
        // The report round-trips from the raw records it references.
        let rebuilt = report_from_records(&records);
        assert_eq!(rebuilt.rows.len(), 1);
        assert_eq!(rebuilt.rows[0].metrics, report.rows[1].metrics);
    }
}
