//! Plane geometry used by the intersection layout: polyline paths with
//! arc-length parameterisation, nearest-point projection, segment
//! intersection for conflict-point discovery, and oriented-rectangle overlap
//! for collision checks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dist(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }

    /// Clockwise perpendicular: the right-hand side of a heading.
    pub fn right(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }

    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn heading(self) -> f64 {
        self.y.atan2(self.x)
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    } else if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

/// A polyline with cached cumulative arc length. Paths are built once per
/// layout and never mutated afterwards.
#[derive(Debug, Clone)]
pub struct Polyline {
    points: Vec<Vec2>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Self {
        assert!(points.len() >= 2, "polyline needs at least two points");
        let mut cum = Vec::with_capacity(points.len());
        let mut s = 0.0;
        cum.push(0.0);
        for w in points.windows(2) {
            s += w[1].dist(w[0]);
            cum.push(s);
        }
        Polyline { points, cum }
    }

    pub fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    fn segment_index(&self, s: f64) -> usize {
        // Largest i with cum[i] <= s, capped to the last segment.
        match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        }
    }

    /// Point at arc length `s`, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_index(s);
        let seg_len = self.cum[i + 1] - self.cum[i];
        if seg_len <= 0.0 {
            return self.points[i];
        }
        let t = (s - self.cum[i]) / seg_len;
        self.points[i].add(self.points[i + 1].sub(self.points[i]).scale(t))
    }

    /// Unit tangent at arc length `s`.
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.length());
        let i = self.segment_index(s);
        let d = self.points[i + 1].sub(self.points[i]);
        let n = d.norm();
        d.scale(1.0 / n)
    }

    /// Projects `p` onto the polyline; returns `(s, distance)` of the nearest
    /// point. A linear scan is fine: paths have a few hundred vertices and
    /// projection is not on the per-step hot path for every pair.
    pub fn project(&self, p: Vec2) -> (f64, f64) {
        let mut best_s = 0.0;
        let mut best_d2 = f64::INFINITY;
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = b.sub(a);
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 { (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = a.add(ab.scale(t));
            let d2 = p.sub(q).dot(p.sub(q));
            if d2 < best_d2 {
                best_d2 = d2;
                best_s = self.cum[i] + t * len2.sqrt();
            }
        }
        (best_s, best_d2.sqrt())
    }
}

/// Samples a circular arc from `start_angle` sweeping `sweep` radians around
/// `center` (positive sweep is counter-clockwise), at roughly `max_step`
/// spacing. Includes both endpoints.
pub fn sample_arc(center: Vec2, radius: f64, start_angle: f64, sweep: f64, max_step: f64) -> Vec<Vec2> {
    let arc_len = radius * sweep.abs();
    let n = (arc_len / max_step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let a = start_angle + sweep * (k as f64 / n as f64);
            center.add(Vec2::new(a.cos(), a.sin()).scale(radius))
        })
        .collect()
}

/// Proper intersection of segments `a0a1` and `b0b1`, if any. Collinear
/// overlap returns `None`; lane-sharing pairs are classified upstream and
/// never reach this query.
pub fn segment_intersection(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> Option<Vec2> {
    let r = a1.sub(a0);
    let s = b1.sub(b0);
    let denom = r.cross(s);
    if denom.abs() < 1e-12 {
        return None;
    }
    let qp = b0.sub(a0);
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some(a0.add(r.scale(t)))
    } else {
        None
    }
}

/// Closest pair of points between segments `a0a1` and `b0b1`, with their
/// distance. Intersecting segments return the crossing point twice at
/// distance zero (up to solver precision).
pub fn segment_closest_points(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> (Vec2, Vec2, f64) {
    if let Some(p) = segment_intersection(a0, a1, b0, b1) {
        return (p, p, 0.0);
    }
    // Non-crossing segments attain the minimum at an endpoint of one of
    // them; project each endpoint onto the other segment.
    let project = |p: Vec2, a: Vec2, b: Vec2| -> Vec2 {
        let ab = b.sub(a);
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 { (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        a.add(ab.scale(t))
    };
    let mut best = (a0, b0, f64::INFINITY);
    for (p, on_a) in [(a0, true), (a1, true), (b0, false), (b1, false)] {
        let (qa, qb) = if on_a {
            (p, project(p, b0, b1))
        } else {
            (project(p, a0, a1), p)
        };
        let d = qa.dist(qb);
        if d < best.2 {
            best = (qa, qb, d);
        }
    }
    best
}

/// An oriented rectangle (vehicle footprint).
#[derive(Debug, Clone, Copy)]
pub struct Obb {
    pub center: Vec2,
    pub heading: f64,
    pub half_len: f64,
    pub half_wid: f64,
}

impl Obb {
    fn corners(&self) -> [Vec2; 4] {
        let fwd = Vec2::new(self.heading.cos(), self.heading.sin());
        let side = fwd.right();
        let l = fwd.scale(self.half_len);
        let w = side.scale(self.half_wid);
        [
            self.center.add(l).add(w),
            self.center.add(l).sub(w),
            self.center.sub(l).sub(w),
            self.center.sub(l).add(w),
        ]
    }

    /// Separating-axis overlap test. Touching boundaries count as overlap.
    pub fn overlaps(&self, other: &Obb) -> bool {
        // Cheap reject: bounding circles.
        let r = self.half_len.hypot(self.half_wid) + other.half_len.hypot(other.half_wid);
        if self.center.dist(other.center) > r {
            return false;
        }
        let ca = self.corners();
        let cb = other.corners();
        let axes = [
            Vec2::new(self.heading.cos(), self.heading.sin()),
            Vec2::new(self.heading.cos(), self.heading.sin()).right(),
            Vec2::new(other.heading.cos(), other.heading.sin()),
            Vec2::new(other.heading.cos(), other.heading.sin()).right(),
        ];
        for axis in axes {
            let pa = project_corners(&ca, axis);
            let pb = project_corners(&cb, axis);
            if pa.1 < pb.0 || pb.1 < pa.0 {
                return false;
            }
        }
        true
    }
}

fn project_corners(corners: &[Vec2; 4], axis: Vec2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let v = c.dot(axis);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}
