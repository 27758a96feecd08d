//! Training reward: a weighted sum of velocity, action, idling, proximity,
//! collision, and stop-reluctance components evaluated on the post-step
//! world.

use serde::{Deserialize, Serialize};

use crate::driver::longitudinal_gap;
use crate::world::{Layout, Vehicle};

/// Continuous standstill time after which an AV counts as idling (s).
pub const IDLE_WINDOW: f64 = 5.0;
/// Same-lane gap below which the proximity ramp engages (m).
pub const G_SAFE: f64 = 6.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_velocity: f64,
    pub w_action: f64,
    pub w_idle: f64,
    pub w_proximity: f64,
    pub w_collision: f64,
    /// Weight of the stop-reluctance distance penalty.
    pub w_reluctance: f64,
    /// Speed below which a vehicle counts as stopped for the reluctance
    /// term (m/s).
    pub v_stop: f64,
}

impl Default for RewardWeights {
    fn default() -> RewardWeights {
        RewardWeights {
            w_velocity: 1.0,
            w_action: 0.1,
            w_idle: 0.5,
            w_proximity: 0.5,
            w_collision: 10.0,
            w_reluctance: 0.01,
            v_stop: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [
            self.w_velocity,
            self.w_action,
            self.w_idle,
            self.w_proximity,
            self.w_collision,
            self.w_reluctance,
            self.v_stop,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(crate::Error::input("reward weights must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Unweighted component values plus the weighted total.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub velocity: f64,
    pub action: f64,
    pub idling: f64,
    pub proximity: f64,
    pub collision: f64,
    pub reluctance: f64,
    pub total: f64,
}

/// Mean over all vehicles — manual and automated in equal weighting — of
/// speed over the local limit, clamped to [0, 1]. Empty world scores 0.
pub fn velocity_reward(vehicles: &[Vehicle], layout: &Layout) -> f64 {
    if vehicles.is_empty() {
        return 0.0;
    }
    let sum: f64 = vehicles
        .iter()
        .map(|v| (v.v / layout.path(v.path).v_lim(v.s)).clamp(0.0, 1.0))
        .sum();
    sum / vehicles.len() as f64
}

/// Negative mean absolute normalized acceleration of the joint action.
pub fn action_penalty(action: &[f64]) -> f64 {
    if action.is_empty() {
        return 0.0;
    }
    -action.iter().map(|a| a.abs()).sum::<f64>() / action.len() as f64
}

/// Fraction of AVs that have stood still longer than [`IDLE_WINDOW`],
/// negated.
pub fn idle_penalty(vehicles: &[Vehicle]) -> f64 {
    let avs: Vec<&Vehicle> = vehicles.iter().filter(|v| v.is_av()).collect();
    if avs.is_empty() {
        return 0.0;
    }
    let idle = avs.iter().filter(|v| v.stopped_time > IDLE_WINDOW).count();
    -(idle as f64) / avs.len() as f64
}

/// Mean over same-lane AV pairs of a linear ramp that hits −1 at zero gap:
/// max(0, 1 − gap/g_safe). Overlapping pairs are capped at the zero-gap
/// value; actual contact is the collision term's job.
pub fn proximity_penalty(vehicles: &[Vehicle], layout: &Layout) -> f64 {
    let avs: Vec<&Vehicle> = vehicles.iter().filter(|v| v.is_av()).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..avs.len() {
        for j in (i + 1)..avs.len() {
            let gap = longitudinal_gap(avs[i], avs[j], layout)
                .or_else(|| longitudinal_gap(avs[j], avs[i], layout))
                .map(|(g, _)| g);
            if let Some(gap) = gap {
                pairs += 1;
                sum += (1.0 - gap.max(0.0) / G_SAFE).max(0.0);
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        -sum / pairs as f64
    }
}

pub fn collision_penalty(collided: bool) -> f64 {
    if collided {
        -1.0
    } else {
        0.0
    }
}

/// Stop-reluctance: the largest distance to the stop point among AVs that
/// stand (v below `v_stop`) at the head of their entry lane, negated.
/// Penalises policies that park AVs far from the intersection entry.
pub fn reluctance_penalty(vehicles: &[Vehicle], layout: &Layout, v_stop: f64) -> f64 {
    let mut worst = 0.0f64;
    for ego in vehicles.iter().filter(|v| v.is_av()) {
        let stop_s = layout.path(ego.path).stop_s;
        if ego.s >= stop_s || ego.v >= v_stop {
            continue;
        }
        // Leader = nothing between the ego and the stop line on the shared
        // entry lane of its approach.
        let has_leader = vehicles.iter().any(|o| {
            o.id != ego.id
                && o.path.approach == ego.path.approach
                && o.s > ego.s
                && o.s < layout.path(o.path).stop_s
        });
        if !has_leader {
            worst = worst.max(stop_s - ego.s);
        }
    }
    -worst
}

/// Weighted sum of all components on the post-step world.
pub fn total(
    vehicles: &[Vehicle],
    layout: &Layout,
    action: &[f64],
    collided: bool,
    w: &RewardWeights,
) -> RewardBreakdown {
    let mut b = RewardBreakdown {
        velocity: velocity_reward(vehicles, layout),
        action: action_penalty(action),
        idling: idle_penalty(vehicles),
        proximity: proximity_penalty(vehicles, layout),
        collision: collision_penalty(collided),
        reluctance: reluctance_penalty(vehicles, layout, w.v_stop),
        ..Default::default()
    };
    b.total = w.w_velocity * b.velocity
        + w.w_action * b.action
        + w.w_idle * b.idling
        + w.w_proximity * b.proximity
        + w.w_collision * b.collision
        + w.w_reluctance * b.reluctance;
    b
}
