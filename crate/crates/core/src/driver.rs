//! Longitudinal driver models.
//!
//! Manual vehicles (and automated ones that no planner is commanding) are
//! driven by the Intelligent Driver Model for car following, combined with a
//! gap-acceptance rule at the stop line: a vehicle approaching the region
//! yields while any higher-ranked crossing vehicle would reach a shared
//! conflict point before the ego could clear it plus a safety margin.
//!
//! Two modes exist. `Idm` is fully deterministic and is what the policy is
//! trained against. `Eidm` layers human-like stochasticity on top for
//! evaluation: white acceleration noise, misperceived leader gaps, and a
//! per-driver critical-gap margin drawn at spawn time.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::world::{
    ConflictPoint, Layout, Path, PathRelation, Vehicle, VehicleKind, ACCEL_MAX, ACCEL_MIN,
    VEHICLE_LEN,
};

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IdmParams {
    /// Desired time headway (s).
    pub t_headway: f64,
    /// Maximum acceleration (m/s^2).
    pub a_max: f64,
    /// Comfortable deceleration (m/s^2).
    pub b_comf: f64,
    /// Standstill jam distance (m).
    pub s0: f64,
    /// Free-flow exponent.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams { t_headway: 1.5, a_max: 3.0, b_comf: 3.0, s0: 2.0, delta: 4.0 }
    }
}

/// Stochastic extension used for evaluation traffic.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct EidmParams {
    /// Std-dev of white acceleration noise (m/s^2).
    pub accel_noise_std: f64,
    /// Std-dev of leader-gap misperception (m).
    pub gap_noise_std: f64,
    /// Std-dev of the per-driver critical-gap margin around `yield_margin`.
    pub margin_std: f64,
}

impl Default for EidmParams {
    fn default() -> Self {
        EidmParams { accel_noise_std: 0.3, gap_noise_std: 1.0, margin_std: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverMode {
    Idm,
    Eidm,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DriverSettings {
    pub mode: DriverMode,
    pub idm: IdmParams,
    pub eidm: EidmParams,
    /// Gap-acceptance safety margin (s) between a prioritised vehicle's
    /// arrival and the ego clearing the conflict point.
    pub yield_margin: f64,
}

impl Default for DriverSettings {
    fn default() -> Self {
        DriverSettings {
            mode: DriverMode::Idm,
            idm: IdmParams::default(),
            eidm: EidmParams::default(),
            yield_margin: 3.0,
        }
    }
}

/// IDM acceleration. `gap` is the bumper-to-bumper distance to the leader
/// and `dv` the closing speed (ego minus leader). A non-positive gap returns
/// maximal braking.
pub fn idm_accel(v: f64, v0: f64, gap: f64, dv: f64, p: &IdmParams) -> f64 {
    if v0 <= 0.0 {
        return ACCEL_MIN;
    }
    if gap <= 0.0 {
        return ACCEL_MIN;
    }
    let free = 1.0 - (v / v0).powf(p.delta);
    let s_star = p.s0 + (v * p.t_headway + v * dv / (2.0 * (p.a_max * p.b_comf).sqrt())).max(0.0);
    (p.a_max * (free - (s_star / gap).powi(2))).clamp(ACCEL_MIN, ACCEL_MAX)
}

/// Free-road IDM (no leader).
pub fn idm_free(v: f64, v0: f64, p: &IdmParams) -> f64 {
    if v0 <= 0.0 {
        return ACCEL_MIN;
    }
    (p.a_max * (1.0 - (v / v0).powf(p.delta))).clamp(ACCEL_MIN, ACCEL_MAX)
}

/// Time for a vehicle at speed `v` to cover `dist` when it accelerates at
/// `a` up to `v_max` and holds. Zero for non-positive distances.
pub fn time_to_cover(dist: f64, v: f64, a: f64, v_max: f64) -> f64 {
    if dist <= 0.0 {
        return 0.0;
    }
    let v = v.min(v_max);
    if a <= 1e-9 {
        return dist / v.max(0.1);
    }
    let t_ramp = (v_max - v) / a;
    let d_ramp = v * t_ramp + 0.5 * a * t_ramp * t_ramp;
    if d_ramp >= dist {
        // Solve v t + a t^2 / 2 = dist.
        let disc = (v * v + 2.0 * a * dist).sqrt();
        (disc - v) / a
    } else {
        t_ramp + (dist - d_ramp) / v_max
    }
}

/// Longitudinal bumper gap from `ego` to `other` if the two interact as
/// leader/follower, together with the leader speed.
///
/// Covers three cases: identical path, shared entry lane (before the paths
/// diverge at the region), and shared exit lane (merging), where distances
/// are compared in remaining-length coordinates.
pub fn longitudinal_gap(ego: &Vehicle, other: &Vehicle, layout: &Layout) -> Option<(f64, f64)> {
    const DIVERGE_GRACE: f64 = 3.0;
    const MERGE_HORIZON: f64 = 30.0;

    let ep = layout.path(ego.path);
    let op = layout.path(other.path);
    let centre_gap = if ego.path == other.path {
        (other.s > ego.s).then_some(other.s - ego.s)
    } else if ego.path.approach == other.path.approach {
        // Shared entry lane until the other vehicle commits to its turn.
        (other.s > ego.s && other.s <= op.stop_s + DIVERGE_GRACE && ego.s <= ep.stop_s)
            .then_some(other.s - ego.s)
    } else if ep.exit_side == op.exit_side {
        // Merging paths converge at the region exit, so the interaction
        // must start once the leader has entered the region — not only on
        // the shared exit lane itself.
        let rem_e = ep.length() - ego.s;
        let rem_o = op.length() - other.s;
        let other_merging = other.s >= op.stop_s - 0.5;
        let ego_near = rem_e - (ep.length() - ep.stop_s) <= MERGE_HORIZON;
        (other_merging && ego_near && rem_o < rem_e).then_some(rem_e - rem_o)
    } else {
        None
    };
    centre_gap.map(|g| (g - VEHICLE_LEN, other.v))
}

/// Whether the (pre-stop-line) ego must yield to prioritised crossing
/// traffic. `margin` is the critical gap in seconds.
pub fn must_yield(vehicles: &[Vehicle], ego_idx: usize, layout: &Layout, margin: f64, p: &IdmParams) -> bool {
    // How far before its stop line a standing vehicle counts as poised to
    // launch: covers the queue head, not the second vehicle in line.
    const LAUNCH_ZONE: f64 = 5.0;

    let ego = &vehicles[ego_idx];
    let ep = layout.path(ego.path);
    debug_assert!(ego.s < ep.stop_s);

    for (j, other) in vehicles.iter().enumerate() {
        if j == ego_idx {
            continue;
        }
        let op = layout.path(other.path);
        // Crossing paths conflict at their intersection points; merging
        // paths (shared exit lane, different approach) conflict at the
        // junction. Both arbitrate by rank before entry.
        let merge_cp;
        let cps: &[ConflictPoint] = match layout.relation(ego.path, other.path) {
            PathRelation::Crossing => layout.conflicts(ego.path, other.path),
            PathRelation::SameLane => match layout.merge_point(ego.path, other.path) {
                Some(cp) => {
                    merge_cp = [cp];
                    &merge_cp
                }
                None => continue,
            },
            PathRelation::Disjoint => continue,
        };
        if op.rank < ep.rank {
            continue;
        }
        if other.s >= op.region_exit_s {
            continue;
        }
        for cp in cps {
            let other_dist = cp.s_b - other.s;
            if other_dist < -VEHICLE_LEN {
                continue; // already past this point
            }
            // Physical occupancy of the conflict point always blocks.
            if other_dist.abs() <= VEHICLE_LEN && cp.s_a > ego.s {
                return true;
            }
            // A strictly higher-priority vehicle standing poised at its
            // stop line is about to launch; constant-speed extrapolation
            // cannot predict that, so it blocks on position alone. (Equal
            // rank keeps first-come-first-served below, which releases
            // exactly one side, so standing opponents never deadlock.)
            if op.rank > ep.rank && other.v < 0.5 && other.s >= op.stop_s - LAUNCH_ZONE {
                return true;
            }
            // Equal-priority crossings (opposing left turns) arbitrate
            // first-come-first-served: only the later arrival yields, with
            // ties broken by approach index so exactly one side gives way.
            if op.rank == ep.rank {
                let ego_dist = cp.s_a - ego.s;
                let t_self = (ego_dist - VEHICLE_LEN / 2.0).max(0.0) / ego.v.max(0.1);
                let t_other = (other_dist - VEHICLE_LEN / 2.0).max(0.0) / other.v.max(0.1);
                let other_first = t_other < t_self
                    || (t_other == t_self
                        && other.path.approach.index() < ego.path.approach.index());
                if !other_first {
                    continue;
                }
            }
            // Time for the ego to clear the point at full acceleration.
            let v_max = ep.v_lim(ego.s).min(ep.v_lim(cp.s_a));
            let clear_dist = cp.s_a - ego.s + VEHICLE_LEN / 2.0 + 1.0;
            let t_clear = time_to_cover(clear_dist, ego.v, p.a_max, v_max);
            // The prioritised vehicle keeps its current speed; standing
            // traffic does not assert precedence.
            if other.v < 0.5 {
                continue;
            }
            // Constant-speed arrival, except in the other's launch zone
            // where it may floor it: use the earlier of the constant-speed
            // and full-acceleration arrivals there. Cruising traffic is
            // already at the limit, so this only bites for vehicles
            // pulling away from the line.
            let d = (other_dist - VEHICLE_LEN / 2.0).max(0.0);
            let mut t_arrive = d / other.v;
            if other.s >= op.stop_s - LAUNCH_ZONE {
                let v_lim_o = op.v_lim(other.s).min(op.v_lim(cp.s_b));
                t_arrive = t_arrive.min(time_to_cover(d, other.v, p.a_max, v_lim_o));
            }
            if t_arrive < t_clear + margin {
                return true;
            }
        }
    }
    false
}

/// IDM braking toward the stop line: a virtual standing point obstacle
/// placed so the equilibrium puts the front bumper on the line.
pub fn stop_line_accel(ego: &Vehicle, path: &Path, p: &IdmParams) -> f64 {
    let gap = path.stop_s + p.s0 - ego.s - VEHICLE_LEN / 2.0;
    idm_accel(ego.v, path.v_lim(ego.s), gap.max(1e-3), ego.v, p)
}

/// Acceleration for an uncontrolled vehicle (any MV, or an AV without a
/// planner command), from true world state.
///
/// In `Eidm` mode exactly two normal draws are consumed per manual vehicle
/// per step regardless of the traffic situation, so RNG streams stay aligned
/// across scenarios.
pub fn plan_accel(
    vehicles: &[Vehicle],
    ego_idx: usize,
    layout: &Layout,
    settings: &DriverSettings,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let ego = &vehicles[ego_idx];
    let p = &settings.idm;
    let stochastic = settings.mode == DriverMode::Eidm && ego.kind == VehicleKind::Mv;
    let (eps_accel, eps_gap) = if stochastic {
        let na = Normal::new(0.0, settings.eidm.accel_noise_std).unwrap();
        let ng = Normal::new(0.0, settings.eidm.gap_noise_std).unwrap();
        (na.sample(rng), ng.sample(rng))
    } else {
        (0.0, 0.0)
    };

    let path = layout.path(ego.path);
    let v0 = path.target_speed(ego.s, p.b_comf);

    // Nearest leader across the follow/merge frames.
    let mut leader: Option<(f64, f64)> = None;
    for (j, other) in vehicles.iter().enumerate() {
        if j == ego_idx {
            continue;
        }
        if let Some((gap, v_lead)) = longitudinal_gap(ego, other, layout) {
            if leader.map_or(true, |(g, _)| gap < g) {
                leader = Some((gap, v_lead));
            }
        }
    }

    let mut a = match leader {
        Some((gap, v_lead)) => {
            // Distance misperception follows Weber's law: the configured
            // std applies from 10 m gaps upward and tapers linearly to
            // zero at contact. Without the taper, standing queues ratchet
            // into the leader's bumper (forward lurches move the car,
            // braking at v = 0 does not).
            let eps = eps_gap * (gap / 10.0).clamp(0.0, 1.0);
            let gap = (gap + eps).max(0.01);
            idm_accel(ego.v, v0, gap, ego.v - v_lead, p)
        }
        None => idm_free(ego.v, v0, p),
    };

    if ego.s < path.stop_s {
        let margin = if stochastic { ego.gap_margin } else { settings.yield_margin };
        if must_yield(vehicles, ego_idx, layout, margin, p) {
            a = a.min(stop_line_accel(ego, path, p));
        }
    }

    (a + eps_accel).clamp(ACCEL_MIN, ACCEL_MAX)
}
