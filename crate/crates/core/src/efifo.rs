//! Enhanced first-in-first-out reservation planner.
//!
//! A rule-based central planner for mixed traffic: AVs are ranked by
//! distance to the intersection and granted clearance when the conflict
//! points of their path are free of reservations from already-granted AVs
//! and no manual vehicle with precedence is predicted to occupy them
//! within a safety margin. MVs with hidden turn intention are treated
//! under their worst-case candidate path. Conflict-free paths proceed
//! simultaneously; everything is replanned every step, but clearance
//! becomes irrevocable once a vehicle can no longer comfortably stop
//! before the line.

use std::collections::{BTreeMap, BTreeSet};

use crate::driver::{idm_accel, idm_free, stop_line_accel, time_to_cover, DriverSettings, IdmParams};
use crate::geom::Vec2;
use crate::world::{
    Layout, Path, PathId, PathRelation, Vehicle, VehicleId, ACCEL_MAX, VEHICLE_LEN,
    V_LIM_APPROACH, V_LIM_TURN,
};

/// Minimum separation (s) between reserved occupancy intervals of two AVs
/// at a shared conflict point.
pub const MARGIN_AV: f64 = 1.0;
/// Critical-gap margin (s) kept between a prioritised MV's predicted
/// arrival and the AV's occupancy window, matching the driver model.
pub const MARGIN_MV: f64 = 3.0;
/// Extra travel (m) past a conflict point before it counts as cleared.
const CLEAR_PAD: f64 = 1.0;
/// MVs slower than this do not assert precedence (mirrors the drivers).
const STAND_V: f64 = 0.5;
/// Distance before a stop line within which a standing vehicle counts as
/// poised to launch (covers the queue head, not the second in line).
const LAUNCH_ZONE: f64 = 5.0;

/// Reserved occupancy of one conflict point by one granted AV. Times are
/// seconds from the planning instant; `t_in` assumes the fastest possible
/// approach, `t_out` a deliberately slow clearing profile, so the real
/// occupancy lies inside the reserved window.
#[derive(Debug, Clone, Copy)]
pub struct CpReservation {
    pub vehicle: VehicleId,
    pub path: PathId,
    pub other_path: PathId,
    pub pos: Vec2,
    pub t_in: f64,
    pub t_out: f64,
}

/// Planner decision state for one step, kept for inspection and safety
/// checking.
#[derive(Debug, Clone, Default)]
pub struct ClearanceState {
    /// AVs ordered by ascending distance to the intersection.
    pub queue: Vec<VehicleId>,
    pub granted: BTreeSet<VehicleId>,
    pub reservations: Vec<CpReservation>,
}

impl ClearanceState {
    /// Pairs of granted AVs whose reserved windows overlap at the same
    /// physical conflict point or merge junction. Empty output is the
    /// planner's core safety guarantee.
    pub fn conflicting_overlaps(&self) -> Vec<(VehicleId, VehicleId)> {
        let mut out = Vec::new();
        for (i, a) in self.reservations.iter().enumerate() {
            for b in &self.reservations[i + 1..] {
                if a.vehicle == b.vehicle
                    || a.path != b.other_path
                    || b.path != a.other_path
                    || a.pos.dist(b.pos) > 1e-6
                {
                    continue;
                }
                let sep_ab = b.t_in - a.t_out;
                let sep_ba = a.t_in - b.t_out;
                if sep_ab < 0.0 && sep_ba < 0.0 {
                    out.push((a.vehicle, b.vehicle));
                }
            }
        }
        out
    }
}

/// Occupancy window of the conflict point at arc length `s_cp` for a
/// vehicle at (`s`, `v`): earliest front-bumper arrival against latest
/// rear-bumper clearing. `None` once the point is behind the vehicle.
fn occupancy(s: f64, v: f64, s_cp: f64, p: &IdmParams) -> Option<(f64, f64)> {
    let d_in = s_cp - s - VEHICLE_LEN / 2.0;
    let d_out = s_cp - s + VEHICLE_LEN / 2.0 + CLEAR_PAD;
    if d_out < 0.0 {
        return None;
    }
    let t_in = time_to_cover(d_in.max(0.0), v, ACCEL_MAX, V_LIM_APPROACH);
    let t_out = time_to_cover(d_out.max(0.0), v, 0.5 * p.a_max, V_LIM_TURN);
    Some((t_in, t_out))
}

/// The points where two distinct paths can physically conflict: crossing
/// intersections, or the junction of a merging pair.
fn pair_conflicts(layout: &Layout, a: PathId, b: PathId) -> Vec<crate::world::ConflictPoint> {
    match layout.relation(a, b) {
        PathRelation::Crossing => layout.conflicts(a, b).to_vec(),
        PathRelation::SameLane => layout.merge_point(a, b).into_iter().collect(),
        PathRelation::Disjoint => Vec::new(),
    }
}

/// Car-following command toward the local target speed, ignoring stop
/// lines and precedence: the control for a vehicle holding clearance.
pub fn follow_accel(vehicles: &[Vehicle], ego_idx: usize, layout: &Layout, p: &IdmParams) -> f64 {
    let ego = &vehicles[ego_idx];
    let v0 = layout.path(ego.path).target_speed(ego.s, p.b_comf);
    let mut leader: Option<(f64, f64)> = None;
    for (j, other) in vehicles.iter().enumerate() {
        if j == ego_idx {
            continue;
        }
        if let Some((gap, v_lead)) = crate::driver::longitudinal_gap(ego, other, layout) {
            if leader.map_or(true, |(g, _)| gap < g) {
                leader = Some((gap, v_lead));
            }
        }
    }
    match leader {
        Some((gap, v_lead)) => idm_accel(ego.v, v0, gap.max(0.01), ego.v - v_lead, p),
        None => idm_free(ego.v, v0, p),
    }
}

/// Whether the vehicle can still comfortably stop with its front bumper
/// before the stop line.
fn can_stop(v: &Vehicle, path: &Path, p: &IdmParams) -> bool {
    let braking = v.v * v.v / (2.0 * p.b_comf);
    v.s + VEHICLE_LEN / 2.0 + braking < path.stop_s
}

#[derive(Debug, Default)]
pub struct EfifoPlanner {
    pub state: ClearanceState,
}

impl EfifoPlanner {
    pub fn new() -> EfifoPlanner {
        EfifoPlanner::default()
    }

    /// Plans one step: returns acceleration commands for every AV.
    pub fn plan(
        &mut self,
        vehicles: &[Vehicle],
        layout: &Layout,
        settings: &DriverSettings,
    ) -> BTreeMap<VehicleId, f64> {
        let p = &settings.idm;

        // Queue AVs by current distance to the intersection (FIFO-by-
        // distance), ties broken by id for determinism.
        let mut avs: Vec<usize> = (0..vehicles.len()).filter(|&i| vehicles[i].is_av()).collect();
        avs.sort_by(|&a, &b| {
            let da = vehicles[a].dist_to_stop(layout);
            let db = vehicles[b].dist_to_stop(layout);
            da.partial_cmp(&db).unwrap().then(vehicles[a].id.cmp(&vehicles[b].id))
        });

        let prev_granted = std::mem::take(&mut self.state.granted);
        self.state = ClearanceState {
            queue: avs.iter().map(|&i| vehicles[i].id).collect(),
            ..Default::default()
        };
        let mut commands = BTreeMap::new();
        // Granted vehicles so far, as indices into `vehicles`.
        let mut granted: Vec<usize> = Vec::new();

        // A grant is irrevocable while its holder cannot comfortably stop
        // before the line anymore (it is entering or inside the region);
        // revoking it there could only force an emergency stop mid-
        // crossing. Commitment is a physical state, not a latch: a granted
        // vehicle that slows back below the point of no return becomes
        // revocable again. Committed grants reserve first so that every
        // candidate is checked against them regardless of queue position.
        let committed = |ego: &Vehicle| {
            prev_granted.contains(&ego.id) && !can_stop(ego, layout.path(ego.path), p)
        };

        for &i in &avs {
            let ego = &vehicles[i];
            // Past the conflict region: nothing left to reserve.
            if ego.s >= layout.path(ego.path).region_exit_s {
                commands.insert(ego.id, follow_accel(vehicles, i, layout, p));
            } else if committed(ego) {
                granted.push(i);
                self.state.granted.insert(ego.id);
                self.reserve(ego, layout, p);
                commands.insert(ego.id, follow_accel(vehicles, i, layout, p));
            }
        }

        for &i in &avs {
            let ego = &vehicles[i];
            if commands.contains_key(&ego.id) {
                continue;
            }
            let clear = self.av_conflicts_clear(ego, &granted, vehicles, layout, p)
                && self.mv_precedence_clear(ego, vehicles, layout, p);
            if clear {
                granted.push(i);
                self.state.granted.insert(ego.id);
                self.reserve(ego, layout, p);
                commands.insert(ego.id, follow_accel(vehicles, i, layout, p));
            } else {
                let hold = stop_line_accel(ego, layout.path(ego.path), p);
                commands.insert(ego.id, follow_accel(vehicles, i, layout, p).min(hold));
            }
        }
        commands
    }

    /// Records the ego's occupancy windows at every conflict point of its
    /// path against all crossing paths, and at merge junctions.
    fn reserve(&mut self, ego: &Vehicle, layout: &Layout, p: &IdmParams) {
        for other in PathId::all() {
            for cp in pair_conflicts(layout, ego.path, other) {
                if let Some((t_in, t_out)) = occupancy(ego.s, ego.v, cp.s_a, p) {
                    self.state.reservations.push(CpReservation {
                        vehicle: ego.id,
                        path: ego.path,
                        other_path: other,
                        pos: cp.pos,
                        t_in,
                        t_out,
                    });
                }
            }
        }
    }

    /// True when the ego's occupancy windows are separated from every
    /// already-granted AV's windows at all shared conflict points and
    /// merge junctions.
    fn av_conflicts_clear(
        &self,
        ego: &Vehicle,
        granted: &[usize],
        vehicles: &[Vehicle],
        layout: &Layout,
        p: &IdmParams,
    ) -> bool {
        for &gi in granted {
            let g = &vehicles[gi];
            if ego.path.approach == g.path.approach {
                continue; // shared entry lane: plain car-following
            }
            for cp in pair_conflicts(layout, ego.path, g.path) {
                let Some((e_in, e_out)) = occupancy(ego.s, ego.v, cp.s_a, p) else {
                    continue;
                };
                let Some((g_in, g_out)) = occupancy(g.s, g.v, cp.s_b, p) else {
                    continue;
                };
                let ego_after = e_in >= g_out + MARGIN_AV;
                let ego_before = e_out + MARGIN_AV <= g_in;
                if !ego_after && !ego_before {
                    return false;
                }
            }
        }
        true
    }

    /// True when no MV with precedence is predicted to reach a shared
    /// conflict point within the ego's occupancy window plus the critical
    /// margin. Hidden turn intentions are expanded to all candidate paths
    /// of the MV's approach.
    fn mv_precedence_clear(
        &self,
        ego: &Vehicle,
        vehicles: &[Vehicle],
        layout: &Layout,
        p: &IdmParams,
    ) -> bool {
        let ep = layout.path(ego.path);
        for mv in vehicles.iter().filter(|v| !v.is_av()) {
            if mv.s >= layout.path(mv.path).region_exit_s {
                continue;
            }
            if mv.path.approach == ego.path.approach {
                continue; // shared entry lane: plain car-following
            }
            let candidates: Vec<PathId> = if mv.intention_observable {
                vec![mv.path]
            } else {
                layout.candidates(mv.path.approach).map(|q| q.id).to_vec()
            };
            for q in candidates {
                if layout.path(q).rank < ep.rank {
                    continue;
                }
                for cp in &pair_conflicts(layout, ego.path, q) {
                    let mv_dist = cp.s_b - mv.s;
                    if mv_dist < -VEHICLE_LEN {
                        continue;
                    }
                    // A vehicle physically on the point always blocks.
                    if mv_dist.abs() <= VEHICLE_LEN && cp.s_a > ego.s {
                        return false;
                    }
                    // A strictly higher-priority MV standing poised at its
                    // stop line will launch as soon as its own gap opens;
                    // blocking on position avoids racing it into the same
                    // gap. Equal rank stays window-based so a standing
                    // opponent that yields to us cannot deadlock the grant.
                    let qp = layout.path(q);
                    if qp.rank > ep.rank && mv.v < STAND_V && mv.s >= qp.stop_s - LAUNCH_ZONE {
                        return false;
                    }
                    if mv.v < STAND_V {
                        continue;
                    }
                    let Some((e_in, e_out)) = occupancy(ego.s, ego.v, cp.s_a, p) else {
                        continue;
                    };
                    // Constant-speed arrival, except that an MV in its
                    // launch zone may floor it: take the earlier of the
                    // constant-speed and full-acceleration arrivals there.
                    // Cruising traffic is already at the limit, so this
                    // only bites for vehicles pulling away from the line.
                    let d = (mv_dist - VEHICLE_LEN / 2.0).max(0.0);
                    let mut t_mv = d / mv.v;
                    if mv.s >= qp.stop_s - LAUNCH_ZONE {
                        let v_lim = qp.v_lim(mv.s).min(qp.v_lim(cp.s_b));
                        t_mv = t_mv.min(time_to_cover(d, mv.v, p.a_max, v_lim));
                    }
                    if t_mv >= e_in - MARGIN_MV && t_mv <= e_out + MARGIN_MV {
                        return false;
                    }
                }
            }
        }
        true
    }
}
