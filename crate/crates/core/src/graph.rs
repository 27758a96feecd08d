//! Scene-graph observation.
//!
//! The planners see the intersection as a directed graph: one vertex per
//! vehicle, and an edge for every ordered vehicle pair that interacts,
//! except pairs of two manual vehicles. Edges are typed by the relation
//! (same lane or crossing) and the automation pairing (AV/AV, AV/MV, MV/AV),
//! six types in total.
//!
//! A manual vehicle whose turn intention is not yet observable is treated
//! pessimistically: it connects to an AV if *any* of its three candidate
//! maneuvers interacts with the AV's path, carrying the highest-priority
//! (worst-case) rank of those maneuvers. Once the intention becomes
//! observable the extra edges disappear.

use serde::{Deserialize, Serialize};

use crate::geom::wrap_angle;
use crate::world::{Approach, Layout, PathId, PathRelation, Vehicle, VehicleId, VehicleKind};

/// Distance floor before inversion, so 1/d stays bounded.
pub const D_MIN: f64 = 1.0;
/// Feature normalisation constants (divisors) for s, v, a and chi.
pub const NORM_S: f64 = 100.0;
pub const NORM_V: f64 = 15.0;
pub const NORM_A: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRelation {
    SameLane,
    Crossing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeAut {
    AvAv,
    AvMv,
    MvAv,
}

/// Number of distinct edge types.
pub const N_EDGE_TYPES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneVertex {
    pub id: VehicleId,
    /// Normalised [s, v, a, c]: signed arc length to the stop line / 100,
    /// speed / 15, measured acceleration / 4, controllability flag.
    pub feats: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneEdge {
    pub src: usize,
    pub dst: usize,
    pub rel: EdgeRelation,
    pub aut: EdgeAut,
    /// [1/d, chi/pi, pr]: inverse centre distance (d floored at 1 m),
    /// bearing of dst in src's heading frame over pi, clamped rank
    /// difference src - dst.
    pub feats: [f64; 3],
}

impl SceneEdge {
    /// Dense type index: relation-major, automation-minor.
    pub fn type_index(&self) -> usize {
        let r = match self.rel {
            EdgeRelation::SameLane => 0,
            EdgeRelation::Crossing => 1,
        };
        let a = match self.aut {
            EdgeAut::AvAv => 0,
            EdgeAut::AvMv => 1,
            EdgeAut::MvAv => 2,
        };
        r * 3 + a
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub vertices: Vec<SceneVertex>,
    pub edges: Vec<SceneEdge>,
    /// Vertex positions of the AVs, in vertex order; fixes the joint-action
    /// ordering of the policy output.
    pub av_index: Vec<usize>,
}

impl SceneGraph {
    pub fn n_avs(&self) -> usize {
        self.av_index.len()
    }

    /// Deterministic textual form for debugging and golden-file tests.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.vertices.iter().enumerate() {
            out.push_str(&format!(
                "vertex {k} id={} s={:.6} v={:.6} a={:.6} c={}\n",
                v.id.0, v.feats[0], v.feats[1], v.feats[2], v.feats[3] as i64
            ));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "edge {}->{} rel={} aut={} inv_d={:.6} chi={:.6} pr={:.0}\n",
                e.src,
                e.dst,
                match e.rel {
                    EdgeRelation::SameLane => "same_lane",
                    EdgeRelation::Crossing => "crossing",
                },
                match e.aut {
                    EdgeAut::AvAv => "av_av",
                    EdgeAut::AvMv => "av_mv",
                    EdgeAut::MvAv => "mv_av",
                },
                e.feats[0],
                e.feats[1],
                e.feats[2]
            ));
        }
        out.push_str(&format!(
            "av_index {}\n",
            self.av_index.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
        ));
        out
    }
}

/// Precedence rank of a path; higher ranks go first.
pub fn priority_value(path: PathId, layout: &Layout) -> i8 {
    layout.path(path).rank
}

/// Clamped rank difference per the edge feature definition.
pub fn priority_relation(pr_i: i8, pr_j: i8) -> f64 {
    f64::from(pr_i - pr_j).clamp(-1.0, 1.0)
}

/// Worst-case maneuver assumption for an intention-hidden MV interacting
/// with `av_path`: the highest rank among its candidate maneuvers that
/// relate to the AV's path, together with the collapsed relation (crossing
/// dominates merging). `None` when no maneuver interacts, in which case no
/// edge is built.
pub fn worst_case_priority(
    mv_approach: Approach,
    av_path: PathId,
    layout: &Layout,
) -> Option<(EdgeRelation, i8)> {
    let mut best_rank: Option<i8> = None;
    let mut any_crossing = false;
    for cand in layout.candidates(mv_approach) {
        let rel = layout.relation(cand.id, av_path);
        if rel == PathRelation::Disjoint {
            continue;
        }
        any_crossing |= rel == PathRelation::Crossing;
        best_rank = Some(best_rank.map_or(cand.rank, |r| r.max(cand.rank)));
    }
    best_rank.map(|rank| {
        let rel = if any_crossing { EdgeRelation::Crossing } else { EdgeRelation::SameLane };
        (rel, rank)
    })
}

/// Relation and effective ranks for an ordered vehicle pair, or `None` when
/// the pair does not interact.
fn pair_relation(a: &Vehicle, b: &Vehicle, layout: &Layout) -> Option<(EdgeRelation, i8, i8)> {
    match (a.intention_observable, b.intention_observable) {
        (true, true) => {
            let rel = match layout.relation(a.path, b.path) {
                PathRelation::Disjoint => return None,
                PathRelation::SameLane => EdgeRelation::SameLane,
                PathRelation::Crossing => EdgeRelation::Crossing,
            };
            Some((rel, layout.path(a.path).rank, layout.path(b.path).rank))
        }
        (false, true) => worst_case_priority(a.path.approach, b.path, layout)
            .map(|(rel, rank)| (rel, rank, layout.path(b.path).rank)),
        (true, false) => worst_case_priority(b.path.approach, a.path, layout)
            .map(|(rel, rank)| (rel, layout.path(a.path).rank, rank)),
        // Two intention-hidden vehicles are two MVs; no edge regardless.
        (false, false) => None,
    }
}

/// Builds the graph observation from an observed vehicle list. Pure in its
/// inputs; vertex order equals observation order.
pub fn build_graph(observation: &[Vehicle], layout: &Layout) -> SceneGraph {
    let mut g = SceneGraph::default();
    for (k, veh) in observation.iter().enumerate() {
        let stop = layout.path(veh.path).stop_s;
        g.vertices.push(SceneVertex {
            id: veh.id,
            feats: [
                (veh.s - stop) / NORM_S,
                veh.v / NORM_V,
                veh.accel / NORM_A,
                if veh.is_av() { 1.0 } else { 0.0 },
            ],
        });
        if veh.is_av() {
            g.av_index.push(k);
        }
    }

    for (i, src) in observation.iter().enumerate() {
        for (j, dst) in observation.iter().enumerate() {
            if i == j || (!src.is_av() && !dst.is_av()) {
                continue;
            }
            let Some((rel, rank_src, rank_dst)) = pair_relation(src, dst, layout) else {
                continue;
            };
            let d = src.pos.dist(dst.pos).max(D_MIN);
            let chi = wrap_angle(dst.pos.sub(src.pos).heading() - src.psi);
            let aut = match (src.kind, dst.kind) {
                (VehicleKind::Av, VehicleKind::Av) => EdgeAut::AvAv,
                (VehicleKind::Av, VehicleKind::Mv) => EdgeAut::AvMv,
                (VehicleKind::Mv, VehicleKind::Av) => EdgeAut::MvAv,
                (VehicleKind::Mv, VehicleKind::Mv) => unreachable!("filtered above"),
            };
            g.edges.push(SceneEdge {
                src: i,
                dst: j,
                rel,
                aut,
                feats: [1.0 / d, chi / std::f64::consts::PI, priority_relation(rank_src, rank_dst)],
            });
        }
    }
    g
}
