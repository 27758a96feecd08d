//! Static intersection geometry.
//!
//! A four-way junction of a major east-west road and a minor north-south
//! road, one lane per direction under right-hand traffic. Each of the four
//! approaches offers a left, straight and right movement, giving twelve
//! lane-accurate paths: a 150 m entry lane, an in-region segment (straight
//! chord or circular arc), and a 150 m exit lane. Conflict points between
//! crossing paths are discovered once, by polyline intersection, when the
//! layout is built.

use std::collections::BTreeMap;

use crate::geom::{sample_arc, segment_intersection, Polyline, Vec2};

/// Length of the entry and exit lanes outside the conflict region.
pub const APPROACH_LEN: f64 = 150.0;
/// Half-extent of the square conflict region around the junction centre.
pub const REGION_HALF: f64 = 5.0;
/// Lateral offset of a lane centreline from the road axis.
pub const LANE_OFFSET: f64 = 1.75;
/// Speed limit on entry/exit lanes (50 km/h).
pub const V_LIM_APPROACH: f64 = 13.89;
/// Speed limit on in-region turn arcs (30 km/h).
pub const V_LIM_TURN: f64 = 8.33;
/// Sampling step for turn arcs.
const ARC_STEP: f64 = 0.2;

/// The four entry roads, named by the compass side vehicles come from.
/// North/South form the minor road, East/West the major road.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Approach {
    North,
    East,
    South,
    West,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::North, Approach::East, Approach::South, Approach::West];

    pub fn index(self) -> usize {
        match self {
            Approach::North => 0,
            Approach::East => 1,
            Approach::South => 2,
            Approach::West => 3,
        }
    }

    /// Direction of travel for vehicles entering from this side.
    pub fn dir(self) -> Vec2 {
        match self {
            Approach::North => Vec2::new(0.0, -1.0),
            Approach::East => Vec2::new(-1.0, 0.0),
            Approach::South => Vec2::new(0.0, 1.0),
            Approach::West => Vec2::new(1.0, 0.0),
        }
    }

    pub fn is_major(self) -> bool {
        matches!(self, Approach::East | Approach::West)
    }

    /// The approach whose traffic comes from this one's right-hand side.
    pub fn on_right(self) -> Approach {
        match self {
            Approach::North => Approach::West,
            Approach::West => Approach::South,
            Approach::South => Approach::East,
            Approach::East => Approach::North,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Approach::North => "north",
            Approach::East => "east",
            Approach::South => "south",
            Approach::West => "west",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Turn {
    Left,
    Straight,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Straight, Turn::Right];

    pub fn index(self) -> usize {
        match self {
            Turn::Left => 0,
            Turn::Straight => 1,
            Turn::Right => 2,
        }
    }
}

/// Identifies one of the twelve paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct PathId {
    pub approach: Approach,
    pub turn: Turn,
}

impl PathId {
    pub fn index(self) -> usize {
        self.approach.index() * 3 + self.turn.index()
    }

    pub fn all() -> impl Iterator<Item = PathId> {
        Approach::ALL
            .into_iter()
            .flat_map(|a| Turn::ALL.into_iter().map(move |t| PathId { approach: a, turn: t }))
    }
}

/// How two paths interact. Exactly one class applies to every ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathRelation {
    /// Shared entry lane (same approach) or shared exit lane (merge).
    SameLane,
    /// The paths intersect at one or more conflict points.
    Crossing,
    /// No longitudinal or crossing interaction.
    Disjoint,
}

/// A point where two crossing paths intersect, with the arc length at which
/// each path reaches it.
#[derive(Debug, Clone, Copy)]
pub struct ConflictPoint {
    pub pos: Vec2,
    pub s_a: f64,
    pub s_b: f64,
}

#[derive(Debug, Clone)]
pub struct Path {
    pub id: PathId,
    pub line: Polyline,
    /// Arc length of the stop line at the region entry.
    pub stop_s: f64,
    /// Arc length where the path leaves the conflict region.
    pub region_exit_s: f64,
    /// Arc-length range of the turn arc, if this path turns.
    pub arc_span: Option<(f64, f64)>,
    /// Outbound compass direction; paths with equal values merge into the
    /// same exit lane.
    pub exit_side: Approach,
    /// Precedence rank; higher goes first. Major straight/right 3, major
    /// left 2, minor straight/right 1, minor left 0.
    pub rank: i8,
}

impl Path {
    pub fn length(&self) -> f64 {
        self.line.length()
    }

    /// In-region path length between stop line and region exit.
    pub fn region_len(&self) -> f64 {
        self.region_exit_s - self.stop_s
    }

    /// Local speed limit at arc length `s`.
    pub fn v_lim(&self, s: f64) -> f64 {
        match self.arc_span {
            Some((a, b)) if s >= a && s <= b => V_LIM_TURN,
            _ => V_LIM_APPROACH,
        }
    }

    /// Speed target that brakes comfortably (at `decel`) ahead of a lower
    /// limit, so drivers do not hit the arc at approach speed.
    pub fn target_speed(&self, s: f64, decel: f64) -> f64 {
        let mut v = self.v_lim(s);
        if let Some((a, b)) = self.arc_span {
            if s < a {
                let reachable = (V_LIM_TURN * V_LIM_TURN + 2.0 * decel * (a - s)).sqrt();
                v = v.min(reachable.max(V_LIM_TURN));
            } else if s <= b {
                v = V_LIM_TURN;
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    paths: Vec<Path>,
    /// Conflict points for ordered crossing pairs, keyed by path indices.
    conflicts: BTreeMap<(usize, usize), Vec<ConflictPoint>>,
    /// Junction points of ordered merging pairs (shared exit lane,
    /// different approaches), keyed by path indices.
    merges: BTreeMap<(usize, usize), ConflictPoint>,
    relations: [[PathRelation; 12]; 12],
}

impl Default for Layout {
    fn default() -> Self {
        Layout::four_way()
    }
}

impl Layout {
    /// Builds the standard four-way junction.
    pub fn four_way() -> Layout {
        let paths: Vec<Path> = PathId::all().map(build_path).collect();

        let mut relations = [[PathRelation::Disjoint; 12]; 12];
        let mut conflicts = BTreeMap::new();
        let mut merges = BTreeMap::new();
        for a in &paths {
            for b in &paths {
                let (i, j) = (a.id.index(), b.id.index());
                // Includes the diagonal: a path trivially shares its own lane.
                if a.id.approach == b.id.approach || a.exit_side == b.exit_side {
                    relations[i][j] = PathRelation::SameLane;
                    // Distinct approaches funnelling into one exit lane
                    // meet at the region exit; that junction arbitrates
                    // precedence like a conflict point.
                    if a.id.approach != b.id.approach {
                        merges.insert(
                            (i, j),
                            ConflictPoint {
                                pos: a.line.point_at(a.region_exit_s),
                                s_a: a.region_exit_s,
                                s_b: b.region_exit_s,
                            },
                        );
                    }
                    continue;
                }
                let pts = crossing_points(a, b);
                if !pts.is_empty() {
                    relations[i][j] = PathRelation::Crossing;
                    conflicts.insert((i, j), pts);
                }
            }
        }
        Layout { paths, conflicts, merges, relations }
    }

    pub fn paths(&self) -> &[Path] {
        &self.paths
    }

    pub fn path(&self, id: PathId) -> &Path {
        &self.paths[id.index()]
    }

    pub fn relation(&self, a: PathId, b: PathId) -> PathRelation {
        self.relations[a.index()][b.index()]
    }

    /// Conflict points between two crossing paths; `s_a` refers to `a`,
    /// `s_b` to `b`. Empty for non-crossing pairs.
    pub fn conflicts(&self, a: PathId, b: PathId) -> &[ConflictPoint] {
        self.conflicts.get(&(a.index(), b.index())).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The junction point where two merging paths (shared exit lane,
    /// different approaches) meet; `s_a` refers to `a`, `s_b` to `b`.
    pub fn merge_point(&self, a: PathId, b: PathId) -> Option<ConflictPoint> {
        self.merges.get(&(a.index(), b.index())).copied()
    }

    /// The three candidate paths from one approach (a vehicle whose turn
    /// intention is not yet observable may be on any of them).
    pub fn candidates(&self, approach: Approach) -> [&Path; 3] {
        [
            self.path(PathId { approach, turn: Turn::Left }),
            self.path(PathId { approach, turn: Turn::Straight }),
            self.path(PathId { approach, turn: Turn::Right }),
        ]
    }
}

fn rank_of(id: PathId) -> i8 {
    match (id.approach.is_major(), id.turn) {
        (true, Turn::Straight | Turn::Right) => 3,
        (true, Turn::Left) => 2,
        (false, Turn::Straight | Turn::Right) => 1,
        (false, Turn::Left) => 0,
    }
}

fn compass_of(dir: Vec2) -> Approach {
    // The compass point a direction of travel heads toward.
    if dir.x > 0.5 {
        Approach::East
    } else if dir.x < -0.5 {
        Approach::West
    } else if dir.y > 0.5 {
        Approach::North
    } else {
        Approach::South
    }
}

fn build_path(id: PathId) -> Path {
    let dir = id.approach.dir();
    let right = dir.right();
    let entry_point = dir.scale(-REGION_HALF).add(right.scale(LANE_OFFSET));
    let start = dir.scale(-(REGION_HALF + APPROACH_LEN)).add(right.scale(LANE_OFFSET));

    let mut pts = vec![start, entry_point];
    let (exit_point, exit_dir, arc_len) = match id.turn {
        Turn::Straight => {
            let exit = dir.scale(REGION_HALF).add(right.scale(LANE_OFFSET));
            pts.push(exit);
            (exit, dir, 0.0)
        }
        Turn::Right => {
            let radius = REGION_HALF - LANE_OFFSET;
            let center = entry_point.add(right.scale(radius));
            let start_angle = entry_point.sub(center).heading();
            let arc = sample_arc(center, radius, start_angle, -std::f64::consts::FRAC_PI_2, ARC_STEP);
            pts.extend(arc.into_iter().skip(1));
            let exit = *pts.last().unwrap();
            (exit, right, radius * std::f64::consts::FRAC_PI_2)
        }
        Turn::Left => {
            let radius = REGION_HALF + LANE_OFFSET;
            let center = entry_point.sub(right.scale(radius));
            let start_angle = entry_point.sub(center).heading();
            let arc = sample_arc(center, radius, start_angle, std::f64::consts::FRAC_PI_2, ARC_STEP);
            pts.extend(arc.into_iter().skip(1));
            let exit = *pts.last().unwrap();
            (exit, right.scale(-1.0), radius * std::f64::consts::FRAC_PI_2)
        }
    };
    pts.push(exit_point.add(exit_dir.scale(APPROACH_LEN)));

    let line = Polyline::new(pts);
    let stop_s = APPROACH_LEN;
    let region_len = if id.turn == Turn::Straight { 2.0 * REGION_HALF } else { arc_len };
    let arc_span = (id.turn != Turn::Straight).then_some((stop_s, stop_s + arc_len));
    Path {
        id,
        stop_s,
        // The polyline arc is sampled, so use its true cumulative length.
        region_exit_s: stop_s + if id.turn == Turn::Straight { region_len } else { measured_arc(&line, stop_s) },
        arc_span,
        exit_side: compass_of(exit_dir),
        rank: rank_of(id),
        line,
    }
}

/// The sampled arc is marginally shorter than the analytic arc; measure the
/// polyline between the stop line and the start of the exit lane.
fn measured_arc(line: &Polyline, stop_s: f64) -> f64 {
    line.length() - stop_s - APPROACH_LEN
}

/// Intersections between the in-region portions of two paths.
/// Two in-region centerlines closer than this conflict even without a
/// strict crossing: vehicle bodies are 1.8 m wide, so paths passing within
/// a body width sweep overlapping areas (e.g., opposing left turns).
const CONFLICT_CLEARANCE: f64 = 2.0;

fn crossing_points(a: &Path, b: &Path) -> Vec<ConflictPoint> {
    let mut found: Vec<ConflictPoint> = Vec::new();
    let (a_pts, a_cum) = region_segments(a);
    let (b_pts, b_cum) = region_segments(b);
    for i in 0..a_pts.len() - 1 {
        for j in 0..b_pts.len() - 1 {
            if let Some(p) = segment_intersection(a_pts[i], a_pts[i + 1], b_pts[j], b_pts[j + 1]) {
                let s_a = a_cum[i] + p.dist(a_pts[i]);
                let s_b = b_cum[j] + p.dist(b_pts[j]);
                // Merge hits within half a vehicle width into one point.
                if let Some(existing) = found.iter_mut().find(|c| c.pos.dist(p) < 0.5) {
                    existing.s_a = existing.s_a.min(s_a);
                    existing.s_b = existing.s_b.min(s_b);
                } else {
                    found.push(ConflictPoint { pos: p, s_a, s_b });
                }
            }
        }
    }
    // No strict crossing: the paths still conflict if they pass within a
    // vehicle's width of each other anywhere in the region.
    if found.is_empty() {
        let mut best: Option<(Vec2, f64, f64, f64)> = None;
        for i in 0..a_pts.len() - 1 {
            for j in 0..b_pts.len() - 1 {
                let (pa, pb, d) = crate::geom::segment_closest_points(
                    a_pts[i],
                    a_pts[i + 1],
                    b_pts[j],
                    b_pts[j + 1],
                );
                if best.as_ref().map_or(true, |&(_, _, _, bd)| d < bd) {
                    let mid = Vec2::new((pa.x + pb.x) / 2.0, (pa.y + pb.y) / 2.0);
                    let s_a = a_cum[i] + pa.dist(a_pts[i]);
                    let s_b = b_cum[j] + pb.dist(b_pts[j]);
                    best = Some((mid, s_a, s_b, d));
                }
            }
        }
        if let Some((pos, s_a, s_b, d)) = best {
            if d < CONFLICT_CLEARANCE {
                found.push(ConflictPoint { pos, s_a, s_b });
            }
        }
    }
    found.sort_by(|p, q| p.s_a.partial_cmp(&q.s_a).unwrap());
    found
}

/// Path vertices restricted to the conflict region, with their arc lengths.
fn region_segments(p: &Path) -> (Vec<Vec2>, Vec<f64>) {
    let lo = p.stop_s - 0.1;
    let hi = p.region_exit_s + 0.1;
    let mut pts = Vec::new();
    let mut cum = Vec::new();
    // Walk the polyline at its own vertices, clamped to [lo, hi].
    let line = &p.line;
    let mut s_prev = lo;
    pts.push(line.point_at(lo));
    cum.push(lo);
    for (i, q) in line.points().iter().enumerate() {
        let s = if i == 0 { 0.0 } else { cum_at(line, i) };
        if s <= lo || s >= hi {
            continue;
        }
        if s > s_prev {
            pts.push(*q);
            cum.push(s);
            s_prev = s;
        }
    }
    pts.push(line.point_at(hi));
    cum.push(hi);
    (pts, cum)
}

fn cum_at(line: &Polyline, idx: usize) -> f64 {
    // Re-derive cumulative arc length at a vertex.
    let pts = line.points();
    let mut s = 0.0;
    for i in 0..idx {
        s += pts[i + 1].dist(pts[i]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn id(approach: Approach, turn: Turn) -> PathId {
        PathId { approach, turn }
    }

    #[test]
    fn twelve_paths_with_expected_lengths() {
        let layout = Layout::four_way();
        assert_eq!(layout.paths().len(), 12);
        for p in layout.paths() {
            assert_abs_diff_eq!(p.stop_s, 150.0);
            let expected_region = match p.id.turn {
                Turn::Straight => 10.0,
                Turn::Right => 3.25 * std::f64::consts::FRAC_PI_2,
                Turn::Left => 6.75 * std::f64::consts::FRAC_PI_2,
            };
            assert_abs_diff_eq!(p.region_len(), expected_region, epsilon = 5e-3);
            assert_abs_diff_eq!(p.length(), p.region_exit_s + 150.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn entry_and_exit_points_sit_on_the_region_boundary() {
        let layout = Layout::four_way();
        for p in layout.paths() {
            let entry = p.line.point_at(p.stop_s);
            let exit = p.line.point_at(p.region_exit_s);
            for q in [entry, exit] {
                let m = q.x.abs().max(q.y.abs());
                assert_abs_diff_eq!(m, REGION_HALF, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn relation_classes_partition_all_pairs() {
        let layout = Layout::four_way();
        let mut same_lane = 0;
        let mut crossing = 0;
        let mut disjoint = 0;
        for a in PathId::all() {
            for b in PathId::all() {
                if a == b {
                    continue;
                }
                let r = layout.relation(a, b);
                // Symmetric classification.
                assert_eq!(r, layout.relation(b, a));
                match r {
                    PathRelation::SameLane => same_lane += 1,
                    PathRelation::Crossing => {
                        crossing += 1;
                        assert!(!layout.conflicts(a, b).is_empty());
                    }
                    PathRelation::Disjoint => {
                        disjoint += 1;
                        assert!(layout.conflicts(a, b).is_empty());
                    }
                }
            }
        }
        // 12 same-approach pairs + 12 shared-exit pairs, counted twice as
        // ordered pairs.
        assert_eq!(same_lane, 48);
        assert_eq!(same_lane + crossing + disjoint, 12 * 11);
        assert!(crossing > 0);
    }

    #[test]
    fn perpendicular_straights_cross_exactly_once() {
        let layout = Layout::four_way();
        let ns = id(Approach::North, Turn::Straight);
        let es = id(Approach::East, Turn::Straight);
        assert_eq!(layout.relation(ns, es), PathRelation::Crossing);
        let pts = layout.conflicts(ns, es);
        assert_eq!(pts.len(), 1);
        // Southbound lane x = -1.75 meets westbound lane y = 1.75.
        assert_abs_diff_eq!(pts[0].pos.x, -1.75, epsilon = 1e-9);
        assert_abs_diff_eq!(pts[0].pos.y, 1.75, epsilon = 1e-9);
        // Mirrored key stores the same point with swapped arc lengths.
        let rev = layout.conflicts(es, ns);
        assert_abs_diff_eq!(rev[0].s_a, pts[0].s_b, epsilon = 1e-9);
    }

    #[test]
    fn opposing_straights_and_rights_are_disjoint() {
        let layout = Layout::four_way();
        for (a, b) in [
            (id(Approach::East, Turn::Straight), id(Approach::West, Turn::Straight)),
            (id(Approach::East, Turn::Right), id(Approach::West, Turn::Right)),
            (id(Approach::North, Turn::Straight), id(Approach::South, Turn::Straight)),
        ] {
            assert_eq!(layout.relation(a, b), PathRelation::Disjoint);
        }
    }

    #[test]
    fn opposing_left_turns_conflict_within_a_body_width() {
        // The opposing left arcs never intersect, but they pass within a
        // vehicle width of each other at the region centre, so the bodies
        // sweep overlapping areas and the pair must count as crossing.
        let layout = Layout::four_way();
        for (a, b) in [
            (id(Approach::East, Turn::Left), id(Approach::West, Turn::Left)),
            (id(Approach::North, Turn::Left), id(Approach::South, Turn::Left)),
        ] {
            assert_eq!(layout.relation(a, b), PathRelation::Crossing);
            let cps = layout.conflicts(a, b);
            assert_eq!(cps.len(), 1);
            assert!(cps[0].pos.norm() < 1.0, "conflict near the centre: {:?}", cps[0].pos);
            // Symmetric geometry: both reach the pinch point at the same
            // arc length.
            assert_abs_diff_eq!(cps[0].s_a, cps[0].s_b, epsilon = 1e-9);
        }
    }

    #[test]
    fn left_turn_crosses_opposing_straight_inside_region() {
        let layout = Layout::four_way();
        let wl = id(Approach::West, Turn::Left);
        let es = id(Approach::East, Turn::Straight);
        assert_eq!(layout.relation(wl, es), PathRelation::Crossing);
        let pts = layout.conflicts(wl, es);
        assert_eq!(pts.len(), 1);
        let p = pts[0].pos;
        assert!(p.x.abs() <= REGION_HALF && p.y.abs() <= REGION_HALF);
        assert_abs_diff_eq!(p.y, 1.75, epsilon = 1e-3);
    }

    #[test]
    fn merging_paths_share_an_exit_lane() {
        let layout = Layout::four_way();
        // Eastbound right turn and westbound left turn both exit southbound.
        let wr = id(Approach::West, Turn::Right);
        let el = id(Approach::East, Turn::Left);
        assert_eq!(layout.path(wr).exit_side, Approach::South);
        assert_eq!(layout.path(el).exit_side, Approach::South);
        assert_eq!(layout.relation(wr, el), PathRelation::SameLane);
        // And the straight movement using the same exit also merges.
        let ns = id(Approach::North, Turn::Straight);
        assert_eq!(layout.path(ns).exit_side, Approach::South);
        assert_eq!(layout.relation(wr, ns), PathRelation::SameLane);

        // Every merging pair carries a junction point where both paths
        // leave the region onto the shared lane; same-approach pairs (which
        // diverge, not merge) carry none.
        for (a, b) in [(wr, el), (wr, ns), (el, ns)] {
            let cp = layout.merge_point(a, b).unwrap();
            assert_abs_diff_eq!(cp.s_a, layout.path(a).region_exit_s);
            assert_abs_diff_eq!(cp.s_b, layout.path(b).region_exit_s);
            let exit_a = layout.path(a).line.point_at(layout.path(a).region_exit_s);
            let exit_b = layout.path(b).line.point_at(layout.path(b).region_exit_s);
            assert_abs_diff_eq!(cp.pos.x, exit_a.x, epsilon = 1e-9);
            assert_abs_diff_eq!(exit_a.x, exit_b.x, epsilon = 1e-9);
            assert_abs_diff_eq!(exit_a.y, exit_b.y, epsilon = 1e-9);
            // Symmetric lookup swaps the leg coordinates.
            let rev = layout.merge_point(b, a).unwrap();
            assert_abs_diff_eq!(rev.s_a, cp.s_b);
            assert_abs_diff_eq!(rev.s_b, cp.s_a);
        }
        let nl = id(Approach::North, Turn::Left);
        assert_eq!(layout.relation(ns, nl), PathRelation::SameLane);
        assert!(layout.merge_point(ns, nl).is_none());
    }

    #[test]
    fn ranks_follow_the_priority_table() {
        let layout = Layout::four_way();
        assert_eq!(layout.path(id(Approach::West, Turn::Straight)).rank, 3);
        assert_eq!(layout.path(id(Approach::West, Turn::Right)).rank, 3);
        assert_eq!(layout.path(id(Approach::West, Turn::Left)).rank, 2);
        assert_eq!(layout.path(id(Approach::North, Turn::Straight)).rank, 1);
        assert_eq!(layout.path(id(Approach::North, Turn::Right)).rank, 1);
        assert_eq!(layout.path(id(Approach::North, Turn::Left)).rank, 0);
    }

    #[test]
    fn equal_rank_crossings_are_exactly_the_opposing_lefts() {
        // Rank decides precedence everywhere except between opposing left
        // turns, whose symmetric conflict needs the drivers' first-come-
        // first-served arbitration.
        let layout = Layout::four_way();
        for a in PathId::all() {
            for b in PathId::all() {
                if a == b || layout.relation(a, b) != PathRelation::Crossing {
                    continue;
                }
                let equal = layout.path(a).rank == layout.path(b).rank;
                let opposing_lefts = a.turn == Turn::Left
                    && b.turn == Turn::Left
                    && a.approach != b.approach
                    && a.approach.dir().dot(b.approach.dir()) < -0.99;
                assert_eq!(equal, opposing_lefts, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn speed_limit_profile_on_a_turn_path() {
        let layout = Layout::four_way();
        let p = layout.path(id(Approach::West, Turn::Left));
        assert_abs_diff_eq!(p.v_lim(100.0), V_LIM_APPROACH);
        assert_abs_diff_eq!(p.v_lim(152.0), V_LIM_TURN);
        assert_abs_diff_eq!(p.v_lim(p.length() - 1.0), V_LIM_APPROACH);
        // Anticipatory target decays toward the arc limit.
        let far = p.target_speed(0.0, 2.0);
        assert_abs_diff_eq!(far, V_LIM_APPROACH);
        let near = p.target_speed(148.0, 2.0);
        assert!(near < 10.0 && near >= V_LIM_TURN);
        // Straight paths never slow down.
        let s = layout.path(id(Approach::West, Turn::Straight));
        assert_abs_diff_eq!(s.target_speed(149.0, 2.0), V_LIM_APPROACH);
    }

    #[test]
    fn right_hand_rule_cycle() {
        assert_eq!(Approach::North.on_right(), Approach::West);
        assert_eq!(Approach::West.on_right(), Approach::South);
        assert_eq!(Approach::South.on_right(), Approach::East);
        assert_eq!(Approach::East.on_right(), Approach::North);
    }
}
