//! World state and transition dynamics.
//!
//! The world owns every active vehicle and advances them synchronously at a
//! fixed step. Automated vehicles take commanded accelerations from a
//! planner; every other vehicle is driven by the models in [`crate::driver`].
//! Laterally, vehicles track their assigned path with a kinematic bicycle
//! model steered by pure pursuit, then snap to the path at the projected arc
//! length, so `(x, y, psi)` always agree with `(path, s)` and `s` never
//! decreases.

mod layout;
mod scenario;

pub use layout::*;
pub use scenario::*;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::driver::{self, DriverSettings};
use crate::geom::{wrap_angle, Obb, Vec2};
use crate::{Error, Result};

pub const VEHICLE_LEN: f64 = 4.5;
pub const VEHICLE_WID: f64 = 1.8;
pub const WHEELBASE: f64 = 2.7;
pub const ACCEL_MIN: f64 = -4.0;
pub const ACCEL_MAX: f64 = 3.0;
/// Pure-pursuit lookahead distance.
pub const LOOKAHEAD: f64 = 5.0;
/// Steering angle limit (rad).
pub const MAX_STEER: f64 = 0.7;
/// Below this speed a vehicle counts as standing.
pub const STAND_SPEED: f64 = 0.1;
/// Minimum free distance at the approach start for a spawn to succeed.
const SPAWN_MIN_LEAD: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleKind {
    Av,
    Mv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u64);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub path: PathId,
    /// Arc length along the path (m), monotonically non-decreasing.
    pub s: f64,
    /// Longitudinal speed (m/s), never negative.
    pub v: f64,
    /// Acceleration applied on the last step (m/s^2).
    pub accel: f64,
    pub pos: Vec2,
    pub psi: f64,
    /// Whether observers can see the turn intention. Always true for AVs;
    /// true for MVs once 25% of their in-region path is behind them.
    pub intention_observable: bool,
    /// Continuous time spent standing (s).
    pub stopped_time: f64,
    pub spawn_time: f64,
    /// Personal critical-gap margin (s), used by stochastic drivers.
    pub gap_margin: f64,
}

impl Vehicle {
    /// A vehicle placed on `path` at arc length `s`, pose snapped to the
    /// path. Intended for tests and external embedding; simulation spawns
    /// go through [`World::spawn`].
    pub fn on_path(layout: &Layout, id: VehicleId, kind: VehicleKind, path: PathId, s: f64, v: f64) -> Vehicle {
        let p = layout.path(path);
        Vehicle {
            id,
            kind,
            path,
            s,
            v,
            accel: 0.0,
            pos: p.line.point_at(s),
            psi: p.line.tangent_at(s).heading(),
            intention_observable: kind == VehicleKind::Av,
            stopped_time: 0.0,
            spawn_time: 0.0,
            gap_margin: 3.0,
        }
    }

    pub fn is_av(&self) -> bool {
        self.kind == VehicleKind::Av
    }

    pub fn obb(&self) -> Obb {
        Obb {
            center: self.pos,
            heading: self.psi,
            half_len: VEHICLE_LEN / 2.0,
            half_wid: VEHICLE_WID / 2.0,
        }
    }

    /// Signed distance to the stop line (negative once past it).
    pub fn dist_to_stop(&self, layout: &Layout) -> f64 {
        layout.path(self.path).stop_s - self.s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Counters {
    pub spawned: u64,
    pub completed: u64,
    /// Vehicles removed after a collision.
    pub collided: u64,
    /// Collision events (each involves one vehicle pair).
    pub collision_events: u64,
    /// Arrivals dropped because the approach start was occupied.
    pub suppressed: u64,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub path: PathId,
    pub spawn_time: f64,
    pub finish_time: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StepOutcome {
    /// Vehicle pairs that collided this step (already removed from the
    /// world, both counted in `Counters::collided`).
    pub collisions: Vec<(VehicleId, VehicleId)>,
    pub completions: Vec<Completion>,
}

#[derive(Debug, Clone, Default)]
pub struct World {
    pub time: f64,
    vehicles: Vec<Vehicle>,
    next_id: u64,
    pub counters: Counters,
}

impl World {
    pub fn new() -> Self {
        World::default()
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn avs(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.iter().filter(|v| v.is_av())
    }

    /// Active + completed + collision-removed must equal spawned.
    pub fn conserves_vehicles(&self) -> bool {
        self.vehicles.len() as u64 + self.counters.completed + self.counters.collided
            == self.counters.spawned
    }

    /// Advances every vehicle by `dt`.
    ///
    /// `commands` maps AV ids to accelerations; ids that do not refer to an
    /// active AV are rejected. AVs without a command and all MVs are driven
    /// by the driver models (which consume `rng` in `Eidm` mode).
    pub fn step(
        &mut self,
        layout: &Layout,
        commands: &BTreeMap<VehicleId, f64>,
        drivers: &DriverSettings,
        rng: &mut ChaCha8Rng,
        dt: f64,
    ) -> Result<StepOutcome> {
        for (&id, _) in commands {
            match self.vehicle(id) {
                Some(v) if v.is_av() => {}
                Some(_) => {
                    return Err(Error::input(format!("command addressed to manual vehicle {id}")))
                }
                None => return Err(Error::input(format!("command addressed to unknown vehicle {id}"))),
            }
        }

        // All accelerations are decided from the pre-step state.
        let accels: Vec<f64> = (0..self.vehicles.len())
            .map(|i| {
                let veh = &self.vehicles[i];
                match commands.get(&veh.id) {
                    Some(&a) => a.clamp(ACCEL_MIN, ACCEL_MAX),
                    None => driver::plan_accel(&self.vehicles, i, layout, drivers, rng),
                }
            })
            .collect();

        for (veh, &a) in self.vehicles.iter_mut().zip(&accels) {
            integrate(veh, layout.path(veh.path), a, dt);
        }
        self.time += dt;

        let mut outcome = StepOutcome::default();

        // Completions.
        let time = self.time;
        let mut done: Vec<usize> = Vec::new();
        for (i, v) in self.vehicles.iter().enumerate() {
            if v.s >= layout.path(v.path).length() - 1e-6 {
                done.push(i);
            }
        }
        for &i in done.iter().rev() {
            let v = self.vehicles.remove(i);
            outcome.completions.push(Completion {
                id: v.id,
                kind: v.kind,
                path: v.path,
                spawn_time: v.spawn_time,
                finish_time: time,
            });
            self.counters.completed += 1;
        }
        outcome.completions.reverse();

        // Collisions: check every pair, remove every vehicle involved.
        let mut hit = vec![false; self.vehicles.len()];
        for i in 0..self.vehicles.len() {
            for j in i + 1..self.vehicles.len() {
                if self.vehicles[i].obb().overlaps(&self.vehicles[j].obb()) {
                    outcome.collisions.push((self.vehicles[i].id, self.vehicles[j].id));
                    hit[i] = true;
                    hit[j] = true;
                }
            }
        }
        if !outcome.collisions.is_empty() {
            let removed = hit.iter().filter(|&&h| h).count() as u64;
            self.counters.collided += removed;
            self.counters.collision_events += outcome.collisions.len() as u64;
            let mut keep = hit.iter().map(|h| !h);
            self.vehicles.retain(|_| keep.next().unwrap());
        }

        Ok(outcome)
    }

    /// Samples Poisson arrivals for one step and inserts the newcomers at
    /// the approach start. Arrivals facing an occupied entry are dropped and
    /// counted as suppressed.
    pub fn spawn(
        &mut self,
        layout: &Layout,
        scenario: &ScenarioConfig,
        rng: &mut ChaCha8Rng,
        dt: f64,
    ) -> Vec<VehicleId> {
        let mut spawned = Vec::new();
        for approach in Approach::ALL {
            let rate = scenario.demand.get(approach);
            let p_arrival = 1.0 - (-rate * dt).exp();
            if rng.gen::<f64>() >= p_arrival {
                continue;
            }
            let turn = scenario.turns.get(approach).sample(rng);
            let is_av = rng.gen::<f64>() < scenario.automation_level;
            let margin: f64 = Normal::new(3.0, 0.5).unwrap().sample(rng);
            let margin = margin.clamp(2.0, 4.5);

            let path_id = PathId { approach, turn };
            let path = layout.path(path_id);

            // Entry occupancy: nearest vehicle on this approach.
            let lead = self
                .vehicles
                .iter()
                .filter(|v| v.path.approach == approach)
                .min_by(|a, b| a.s.partial_cmp(&b.s).unwrap());
            let (lead_s, lead_v) = lead.map_or((f64::INFINITY, 0.0), |v| (v.s, v.v));
            if lead_s < SPAWN_MIN_LEAD {
                self.counters.suppressed += 1;
                continue;
            }
            let v_lim = path.v_lim(0.0);
            let v_init = if lead_s.is_finite() {
                // Entry speed must allow a comfortable stop behind the
                // leader even if the leader brakes to a standstill
                // (Krauss-style safe speed), with a spacing headway on top
                // so newcomers do not enter tailgating.
                let gap = (lead_s - VEHICLE_LEN - 2.0).max(0.0);
                let v_safe = (lead_v * lead_v + 2.0 * 3.0 * gap).sqrt();
                (gap / 1.5).min(v_safe).clamp(0.0, v_lim)
            } else {
                v_lim
            };

            let id = VehicleId(self.next_id);
            self.next_id += 1;
            self.counters.spawned += 1;
            let kind = if is_av { VehicleKind::Av } else { VehicleKind::Mv };
            self.vehicles.push(Vehicle {
                id,
                kind,
                path: path_id,
                s: 0.0,
                v: v_init,
                accel: 0.0,
                pos: path.line.point_at(0.0),
                psi: path.line.tangent_at(0.0).heading(),
                intention_observable: is_av,
                stopped_time: 0.0,
                spawn_time: self.time,
                gap_margin: margin,
            });
            spawned.push(id);
        }
        spawned
    }
}

/// One bicycle-model step with pure-pursuit steering, then a snap back onto
/// the path at the projected arc length. The snap keeps pose and arc length
/// exactly consistent; curvature still shows up as slightly reduced progress
/// through turns.
fn integrate(veh: &mut Vehicle, path: &Path, accel: f64, dt: f64) {
    let a = accel.clamp(ACCEL_MIN, ACCEL_MAX);
    if veh.v > 1e-9 {
        let target = path.line.point_at(veh.s + LOOKAHEAD);
        let to_target = target.sub(veh.pos);
        let ld = to_target.norm().max(1e-6);
        let alpha = wrap_angle(to_target.heading() - veh.psi);
        let delta = (2.0 * WHEELBASE * alpha.sin() / ld).atan().clamp(-MAX_STEER, MAX_STEER);
        veh.pos = veh.pos.add(Vec2::new(veh.psi.cos(), veh.psi.sin()).scale(veh.v * dt));
        veh.psi = wrap_angle(veh.psi + veh.v / WHEELBASE * delta.tan() * dt);
    }
    veh.v = (veh.v + a * dt).max(0.0);

    let (s_proj, _) = path.line.project(veh.pos);
    veh.s = s_proj.max(veh.s);
    veh.v = veh.v.min(path.v_lim(veh.s));
    veh.pos = path.line.point_at(veh.s);
    veh.psi = path.line.tangent_at(veh.s).heading();
    veh.accel = a;
    veh.stopped_time = if veh.v < STAND_SPEED { veh.stopped_time + dt } else { 0.0 };
    if veh.kind == VehicleKind::Mv && !veh.intention_observable {
        let traversed = veh.s - path.stop_s;
        if traversed > 0.25 * path.region_len() {
            veh.intention_observable = true;
        }
    }
}
