//! TD3 training of the graph policy.
//!
//! Standard twin-delayed DDPG adapted to variable-size graph observations:
//! replay entries keep whole scene graphs, minibatches are packed as
//! disjoint unions, and the joint action dimension follows each graph's AV
//! count. Training runs in idealized IDM traffic without measurement
//! noise; the manual-vehicle share follows a three-phase curriculum.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::driver::DriverSettings;
use crate::graph::{build_graph, SceneGraph};
use crate::nn::{save_blocks, ActorNetwork, Adam, CriticNetwork, GraphBatch, ParamSet, Real, Tape};
use crate::reward::{self, RewardWeights};
use crate::rng::stream;
use crate::world::{Layout, ScenarioConfig, World, ACCEL_MAX, ACCEL_MIN};
use crate::{Error, Result};

/// Affine map from the policy's normalized action in [-1, 1] to a world
/// acceleration command in [ACCEL_MIN, ACCEL_MAX].
pub fn denormalize_accel(a: f64) -> f64 {
    let a = a.clamp(-1.0, 1.0);
    ACCEL_MIN + (a + 1.0) / 2.0 * (ACCEL_MAX - ACCEL_MIN)
}

/// Three-phase manual-vehicle curriculum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct Curriculum {
    /// Fraction of training spent in fully automated traffic.
    pub phase1_frac: f64,
    /// Fraction spent ramping the MV share up linearly.
    pub phase2_frac: f64,
    /// MV share reached at the end of the ramp and held afterwards.
    pub mv_share_max: f64,
}

impl Default for Curriculum {
    fn default() -> Curriculum {
        Curriculum { phase1_frac: 1.0 / 3.0, phase2_frac: 1.0 / 3.0, mv_share_max: 0.5 }
    }
}

/// MV share at a given training progress in [0, 1]: zero through phase 1,
/// a linear ramp through phase 2, the maximum through phase 3.
pub fn mv_share_schedule(progress: f64, c: &Curriculum) -> f64 {
    assert!((0.0..=1.0).contains(&progress), "progress {progress} outside [0, 1]");
    if progress < c.phase1_frac {
        0.0
    } else if progress < c.phase1_frac + c.phase2_frac {
        (progress - c.phase1_frac) / c.phase2_frac * c.mv_share_max
    } else {
        c.mv_share_max
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    /// Actor (and target) update period in critic updates.
    pub policy_delay: usize,
    pub target_noise: f64,
    pub target_clip: f64,
    pub exploration_noise: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub learning_rate: f64,
    pub total_steps: usize,
    /// Uniform-random action steps before the policy takes over.
    pub start_steps: usize,
    pub hidden_width: usize,
    pub episode_seconds: f64,
    pub dt: f64,
    /// Periodic checkpoint interval in environment steps (0 = final only).
    pub checkpoint_every: usize,
    pub curriculum: Curriculum,
}

impl Default for Td3Config {
    fn default() -> Td3Config {
        Td3Config {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            target_clip: 0.5,
            exploration_noise: 0.1,
            batch_size: 64,
            buffer_capacity: 100_000,
            learning_rate: 3e-4,
            total_steps: 150_000,
            start_steps: 1_000,
            hidden_width: crate::nn::DEFAULT_WIDTH,
            episode_seconds: 60.0,
            dt: 0.1,
            checkpoint_every: 0,
            curriculum: Curriculum::default(),
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.gamma && self.gamma < 1.0) {
            return Err(Error::input("gamma must lie in (0, 1)"));
        }
        if self.policy_delay == 0 || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::input("policy_delay, batch_size and buffer_capacity must be positive"));
        }
        let c = &self.curriculum;
        if c.phase1_frac < 0.0 || c.phase2_frac <= 0.0 || c.phase1_frac + c.phase2_frac > 1.0 {
            return Err(Error::input("curriculum phase fractions must be positive and sum to at most 1"));
        }
        if !(0.0..=1.0).contains(&c.mv_share_max) {
            return Err(Error::input("mv_share_max must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One stored environment transition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    pub state: SceneGraph,
    /// Normalized joint action in the state's `av_index` order.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next: SceneGraph,
    /// True only for collision terminations (time limits bootstrap).
    pub done: bool,
}

/// FIFO replay memory over variable-size graphs.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        ReplayBuffer { capacity, entries: VecDeque::new() }
    }

    /// Inserts a transition; states without any AV carry no action and are
    /// excluded here rather than special-cased later. Returns whether the
    /// entry was kept.
    pub fn push(&mut self, t: Transition) -> bool {
        if t.state.n_avs() == 0 {
            return false;
        }
        debug_assert_eq!(t.state.n_avs(), t.action.len());
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.entries[idx]
    }

    pub fn sample_indices(&self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..batch).map(|_| rng.gen_range(0..self.entries.len())).collect()
    }
}

/// A minibatch packed for the networks.
pub struct PreparedBatch {
    pub states: GraphBatch,
    /// Concatenated normalized actions, aligned with `states.av_rows`.
    pub actions: Array2<Real>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub next: GraphBatch,
}

impl PreparedBatch {
    pub fn from_transitions(entries: &[&Transition]) -> PreparedBatch {
        let states: Vec<SceneGraph> = entries.iter().map(|t| t.state.clone()).collect();
        let next: Vec<SceneGraph> = entries.iter().map(|t| t.next.clone()).collect();
        let joint: Vec<Real> =
            entries.iter().flat_map(|t| t.action.iter().map(|&a| a as Real)).collect();
        PreparedBatch {
            states: GraphBatch::from_graphs(&states),
            actions: Array2::from_shape_vec((joint.len(), 1), joint).expect("action column"),
            rewards: entries.iter().map(|t| t.reward).collect(),
            dones: entries.iter().map(|t| t.done).collect(),
            next: GraphBatch::from_graphs(&next),
        }
    }
}

/// Snapshot row of the training log.
#[derive(Debug, Clone, Serialize)]
pub struct TrainLogRow {
    pub env_step: usize,
    pub episode: usize,
    pub mv_share: f64,
    pub episode_return: f64,
    pub velocity: f64,
    pub action: f64,
    pub idling: f64,
    pub proximity: f64,
    pub collision: f64,
    pub reluctance: f64,
    pub critic_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainReport {
    pub env_steps: usize,
    pub episodes: usize,
    pub gradient_steps: usize,
    pub actor_updates: usize,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub mean_return_last_10: f64,
}

pub struct Td3Trainer {
    pub cfg: Td3Config,
    pub weights: RewardWeights,
    pub actor: ActorNetwork,
    pub critic1: CriticNetwork,
    pub critic2: CriticNetwork,
    actor_t: ActorNetwork,
    critic1_t: CriticNetwork,
    critic2_t: CriticNetwork,
    opt_actor: Adam,
    opt_c1: Adam,
    opt_c2: Adam,
    pub buffer: ReplayBuffer,
    /// Critic updates performed.
    pub updates: usize,
    /// Actor/target updates performed (every `policy_delay` critic updates).
    pub actor_updates: usize,
    seed: u64,
    sample_rng: ChaCha8Rng,
    target_rng: ChaCha8Rng,
    expl_rng: ChaCha8Rng,
}

impl Td3Trainer {
    pub fn new(cfg: Td3Config, weights: RewardWeights, seed: u64) -> Result<Td3Trainer> {
        cfg.validate()?;
        weights.validate()?;
        let mut init = stream(seed, "td3-init", 0);
        let actor = ActorNetwork::new(cfg.hidden_width, &mut init);
        let critic1 = CriticNetwork::new(cfg.hidden_width, &mut init);
        let critic2 = CriticNetwork::new(cfg.hidden_width, &mut init);
        let (actor_t, critic1_t, critic2_t) = (actor.clone(), critic1.clone(), critic2.clone());
        let lr = cfg.learning_rate as Real;
        Ok(Td3Trainer {
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            opt_actor: Adam::new(lr),
            opt_c1: Adam::new(lr),
            opt_c2: Adam::new(lr),
            updates: 0,
            actor_updates: 0,
            seed,
            sample_rng: stream(seed, "td3-sample", 0),
            target_rng: stream(seed, "td3-target", 0),
            expl_rng: stream(seed, "td3-expl", 0),
            cfg,
            weights,
            actor,
            critic1,
            critic2,
            actor_t,
            critic1_t,
            critic2_t,
        })
    }

    /// Twin-critic regression target: y = r + γ(1−done)·min(Q₁′, Q₂′) at
    /// the target policy's smoothed next action.
    pub fn compute_targets(&mut self, batch: &PreparedBatch) -> Vec<f64> {
        // Target action: π′(s′) plus clipped smoothing noise, clamped to
        // the normalized action range.
        let mut t = Tape::new();
        let lease = self.actor_t.lease(&mut t);
        let a_next = self.actor_t.forward(&mut t, &lease, &batch.next);
        let noise = Normal::new(0.0, self.cfg.target_noise).expect("target noise");
        let smoothed: Vec<Real> = t
            .value(a_next)
            .iter()
            .map(|&a| {
                let eps: f64 =
                    noise.sample(&mut self.target_rng).clamp(-self.cfg.target_clip, self.cfg.target_clip);
                (a as f64 + eps).clamp(-1.0, 1.0) as Real
            })
            .collect();

        let q_min: Vec<f64> = {
            let a = Array2::from_shape_vec((smoothed.len(), 1), smoothed).expect("action column");
            let mut t = Tape::new();
            let l1 = self.critic1_t.lease(&mut t);
            let an = t.leaf(a.clone());
            let q1 = self.critic1_t.forward(&mut t, &l1, &batch.next, an);
            let l2 = self.critic2_t.lease(&mut t);
            let an2 = t.leaf(a);
            let q2 = self.critic2_t.forward(&mut t, &l2, &batch.next, an2);
            let (v1, v2) = (t.value(q1), t.value(q2));
            (0..v1.nrows()).map(|i| (v1[(i, 0)] as f64).min(v2[(i, 0)] as f64)).collect()
        };

        batch
            .rewards
            .iter()
            .zip(&batch.dones)
            .zip(q_min)
            .map(|((&r, &done), q)| r + if done { 0.0 } else { self.cfg.gamma * q })
            .collect()
    }

    /// One critic regression step on both critics; returns their losses.
    pub fn update_critics(&mut self, batch: &PreparedBatch) -> Result<(f64, f64)> {
        let targets = self.compute_targets(batch);
        let y = Array2::from_shape_vec(
            (targets.len(), 1),
            targets.iter().map(|&v| v as Real).collect(),
        )
        .expect("target column");

        let mut losses = [0.0f64; 2];
        for (k, (critic, opt)) in [
            (&mut self.critic1, &mut self.opt_c1),
            (&mut self.critic2, &mut self.opt_c2),
        ]
        .into_iter()
        .enumerate()
        {
            let mut t = Tape::new();
            let lease = critic.lease(&mut t);
            let a = t.leaf(batch.actions.clone());
            let q = critic.forward(&mut t, &lease, &batch.states, a);
            let yl = t.leaf(y.clone());
            let diff = t.sub(q, yl);
            let sq = t.mul(diff, diff);
            let loss = t.mean_all(sq);
            losses[k] = t.value(loss)[(0, 0)] as f64;
            t.backward(loss);
            critic.harvest(&t, &lease);
            opt.step(critic);
        }
        self.updates += 1;
        Ok((losses[0], losses[1]))
    }

    /// Every `policy_delay` critic updates: one deterministic policy
    /// gradient step through critic 1 plus soft target updates.
    pub fn maybe_update_actor_and_targets(&mut self, batch: &PreparedBatch) {
        if self.updates % self.cfg.policy_delay != 0 {
            return;
        }
        let mut t = Tape::new();
        let actor_lease = self.actor.lease(&mut t);
        let critic_lease = self.critic1.lease(&mut t);
        let a = self.actor.forward(&mut t, &actor_lease, &batch.states);
        let q = self.critic1.forward(&mut t, &critic_lease, &batch.states, a);
        let mean_q = t.mean_all(q);
        let neg = t.scale(mean_q, -1.0);
        t.backward(neg);
        // Only the actor's gradients are harvested; critic 1 merely
        // provides the value surface for this step.
        self.actor.harvest(&t, &actor_lease);
        self.opt_actor.step(&mut self.actor);

        let tau = self.cfg.tau as Real;
        self.actor_t.soft_update_from(&mut self.actor, tau);
        self.critic1_t.soft_update_from(&mut self.critic1, tau);
        self.critic2_t.soft_update_from(&mut self.critic2, tau);
        self.actor_updates += 1;
    }

    /// Samples a minibatch and runs one full TD3 gradient step.
    pub fn gradient_step(&mut self) -> Result<(f64, f64)> {
        let idx = self.buffer.sample_indices(self.cfg.batch_size, &mut self.sample_rng);
        let entries: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect();
        let batch = PreparedBatch::from_transitions(&entries);
        let (l1, l2) = self.update_critics(&batch)?;
        if !l1.is_finite() || !l2.is_finite() {
            return Err(Error::Sim(format!("non-finite critic loss ({l1}, {l2})")));
        }
        self.maybe_update_actor_and_targets(&batch);
        Ok((l1, l2))
    }

    /// Normalized policy action with exploration noise (uniform random
    /// during the warmup phase).
    fn explore(&mut self, graph: &SceneGraph, env_step: usize) -> Vec<f64> {
        if graph.n_avs() == 0 {
            return Vec::new();
        }
        if env_step < self.cfg.start_steps {
            return (0..graph.n_avs()).map(|_| self.expl_rng.gen_range(-1.0..1.0)).collect();
        }
        let noise = Normal::new(0.0, self.cfg.exploration_noise).expect("exploration noise");
        self.actor
            .act(graph)
            .into_iter()
            .map(|a| (a + noise.sample(&mut self.expl_rng)).clamp(-1.0, 1.0))
            .collect()
    }

    fn checkpoint_blocks(&mut self) -> Vec<(String, Array2<Real>)> {
        let mut blocks = self.actor.to_blocks("actor.");
        blocks.extend(self.critic1.to_blocks("critic1."));
        blocks.extend(self.critic2.to_blocks("critic2."));
        blocks.extend(self.actor_t.to_blocks("actor_t."));
        blocks.extend(self.critic1_t.to_blocks("critic1_t."));
        blocks.extend(self.critic2_t.to_blocks("critic2_t."));
        blocks
    }

    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        let blocks = self.checkpoint_blocks();
        save_blocks(path, &blocks)
    }

    /// Full training loop. Writes `policy.ckpt` and `training_log.csv`
    /// into `out_dir` and returns a summary.
    pub fn train(&mut self, scenario: &ScenarioConfig, out_dir: &Path) -> Result<TrainReport> {
        scenario.validate()?;
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let ckpt_path = out_dir.join("policy.ckpt");
        let log_path = out_dir.join("training_log.csv");
        let log_file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut log = std::io::BufWriter::new(log_file);
        writeln!(
            log,
            "env_step,episode,mv_share,episode_return,velocity,action,idling,proximity,collision,reluctance,critic_loss"
        )
        .map_err(|e| Error::io(&log_path, e))?;

        let layout = Layout::four_way();
        let drivers = DriverSettings::default();
        let episode_steps = (self.cfg.episode_seconds / self.cfg.dt).round() as usize;

        let mut env_step = 0usize;
        let mut episode = 0usize;
        let mut returns = VecDeque::with_capacity(10);
        let mut next_ckpt = if self.cfg.checkpoint_every == 0 {
            usize::MAX
        } else {
            self.cfg.checkpoint_every
        };

        while env_step < self.cfg.total_steps {
            let progress = env_step as f64 / self.cfg.total_steps as f64;
            let mv_share = mv_share_schedule(progress, &self.cfg.curriculum);
            let scen = scenario.clone().with_automation(1.0 - mv_share);
            let mut world = World::new();
            let mut ep_rng = stream(self.seed, "td3-episode", episode as u64);

            let mut ep_return = 0.0;
            let mut comp_sums = [0.0f64; 6];
            let mut loss_sum = 0.0;
            let mut loss_count = 0usize;
            let mut steps_in_ep = 0usize;

            for _ in 0..episode_steps {
                let graph = build_graph(world.vehicles(), &layout);
                let action = self.explore(&graph, env_step);
                let commands: BTreeMap<_, _> = graph
                    .av_index
                    .iter()
                    .zip(&action)
                    .map(|(&k, &a)| (graph.vertices[k].id, denormalize_accel(a)))
                    .collect();
                let outcome = world.step(&layout, &commands, &drivers, &mut ep_rng, self.cfg.dt)?;
                world.spawn(&layout, &scen, &mut ep_rng, self.cfg.dt);
                let collided = !outcome.collisions.is_empty();
                let rb =
                    reward::total(world.vehicles(), &layout, &action, collided, &self.weights);
                let next_graph = build_graph(world.vehicles(), &layout);
                self.buffer.push(Transition {
                    state: graph,
                    action,
                    reward: rb.total,
                    next: next_graph,
                    done: collided,
                });

                ep_return += rb.total;
                for (s, c) in comp_sums.iter_mut().zip([
                    rb.velocity,
                    rb.action,
                    rb.idling,
                    rb.proximity,
                    rb.collision,
                    rb.reluctance,
                ]) {
                    *s += c;
                }
                env_step += 1;
                steps_in_ep += 1;

                if env_step >= self.cfg.start_steps && self.buffer.len() >= self.cfg.batch_size {
                    match self.gradient_step() {
                        Ok((l1, l2)) => {
                            loss_sum += 0.5 * (l1 + l2);
                            loss_count += 1;
                        }
                        Err(e) => {
                            self.dump_diagnostics(out_dir);
                            return Err(e);
                        }
                    }
                }
                if env_step >= next_ckpt {
                    self.save_checkpoint(&ckpt_path)?;
                    next_ckpt += self.cfg.checkpoint_every;
                }
                if collided || env_step >= self.cfg.total_steps {
                    break;
                }
            }

            let n = steps_in_ep.max(1) as f64;
            let row = TrainLogRow {
                env_step,
                episode,
                mv_share,
                episode_return: ep_return,
                velocity: comp_sums[0] / n,
                action: comp_sums[1] / n,
                idling: comp_sums[2] / n,
                proximity: comp_sums[3] / n,
                collision: comp_sums[4] / n,
                reluctance: comp_sums[5] / n,
                critic_loss: if loss_count == 0 { 0.0 } else { loss_sum / loss_count as f64 },
            };
            writeln!(
                log,
                "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.6}",
                row.env_step,
                row.episode,
                row.mv_share,
                row.episode_return,
                row.velocity,
                row.action,
                row.idling,
                row.proximity,
                row.collision,
                row.reluctance,
                row.critic_loss
            )
            .map_err(|e| Error::io(&log_path, e))?;

            if returns.len() == 10 {
                returns.pop_front();
            }
            returns.push_back(ep_return);
            episode += 1;
        }

        log.flush().map_err(|e| Error::io(&log_path, e))?;
        self.save_checkpoint(&ckpt_path)?;
        Ok(TrainReport {
            env_steps: env_step,
            episodes: episode,
            gradient_steps: self.updates,
            actor_updates: self.actor_updates,
            checkpoint: ckpt_path,
            log: log_path,
            mean_return_last_10: if returns.is_empty() {
                0.0
            } else {
                returns.iter().sum::<f64>() / returns.len() as f64
            },
        })
    }

    /// Serializes the most recent buffer contents on abort so a non-finite
    /// loss can be reproduced offline.
    fn dump_diagnostics(&self, out_dir: &Path) {
        let tail: Vec<&Transition> = self
            .buffer
            .entries
            .iter()
            .rev()
            .take(self.cfg.batch_size)
            .collect();
        if let Ok(json) = serde_json::to_string_pretty(&tail) {
            let _ = std::fs::write(out_dir.join("nan_dump.json"), json);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Approach, PathId, Turn, Vehicle, VehicleId, VehicleKind};
    use approx::assert_abs_diff_eq;

    fn veh(layout: &Layout, id: u64, kind: VehicleKind, approach: Approach, s: f64) -> Vehicle {
        Vehicle::on_path(
            layout,
            VehicleId(id),
            kind,
            PathId { approach, turn: Turn::Straight },
            s,
            6.0,
        )
    }

    fn mini_cfg() -> Td3Config {
        Td3Config {
            hidden_width: 8,
            batch_size: 8,
            buffer_capacity: 64,
            start_steps: 4,
            total_steps: 64,
            episode_seconds: 3.0,
            ..Td3Config::default()
        }
    }

    fn sample_transition(layout: &Layout, k: u64, reward: f64) -> Transition {
        let state = build_graph(
            &[
                veh(layout, 2 * k, VehicleKind::Av, Approach::West, 100.0 + k as f64),
                veh(layout, 2 * k + 1, VehicleKind::Mv, Approach::North, 90.0),
            ],
            layout,
        );
        let next = build_graph(
            &[veh(layout, 2 * k, VehicleKind::Av, Approach::West, 101.0 + k as f64)],
            layout,
        );
        Transition { state, action: vec![0.1 * k as f64 - 0.3], reward, next, done: false }
    }

    #[test]
    fn schedule_follows_the_three_phases() {
        let c = Curriculum::default();
        assert_abs_diff_eq!(mv_share_schedule(0.0, &c), 0.0);
        assert_abs_diff_eq!(mv_share_schedule(0.2, &c), 0.0);
        assert_abs_diff_eq!(mv_share_schedule(0.5, &c), 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(mv_share_schedule(0.9, &c), 0.5);
        assert_abs_diff_eq!(mv_share_schedule(1.0, &c), 0.5);
        // Ramp endpoints are continuous.
        assert_abs_diff_eq!(mv_share_schedule(1.0 / 3.0, &c), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mv_share_schedule(2.0 / 3.0, &c), 0.5, epsilon = 1e-9);
    }

    #[test]
    #[should_panic(expected = "outside [0, 1]")]
    fn schedule_rejects_out_of_range_progress() {
        mv_share_schedule(1.2, &Curriculum::default());
    }

    #[test]
    fn action_denormalization_spans_the_accel_range() {
        assert_abs_diff_eq!(denormalize_accel(-1.0), ACCEL_MIN);
        assert_abs_diff_eq!(denormalize_accel(1.0), ACCEL_MAX);
        assert_abs_diff_eq!(denormalize_accel(0.0), (ACCEL_MIN + ACCEL_MAX) / 2.0);
        // Out-of-range raw values are clamped, not extrapolated.
        assert_abs_diff_eq!(denormalize_accel(5.0), ACCEL_MAX);
    }

    #[test]
    fn replay_buffer_evicts_fifo_and_rejects_av_less_states() {
        let layout = Layout::four_way();
        let mut buf = ReplayBuffer::new(3);
        for k in 0..5 {
            assert!(buf.push(sample_transition(&layout, k, k as f64)));
        }
        assert_eq!(buf.len(), 3);
        // Oldest two evicted: rewards 2, 3, 4 remain in order.
        let rewards: Vec<f64> = (0..3).map(|i| buf.get(i).reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);

        let mv_only = build_graph(
            &[veh(&layout, 99, VehicleKind::Mv, Approach::South, 80.0)],
            &layout,
        );
        let rejected = Transition {
            state: mv_only.clone(),
            action: vec![],
            reward: 0.0,
            next: mv_only,
            done: false,
        };
        assert!(!buf.push(rejected));
        assert_eq!(buf.len(), 3);
    }

    #[test]
    fn prepared_batch_preserves_graph_action_pairing() {
        let layout = Layout::four_way();
        let t0 = sample_transition(&layout, 0, 1.0);
        let t1 = sample_transition(&layout, 1, 2.0);
        let batch = PreparedBatch::from_transitions(&[&t0, &t1]);
        assert_eq!(batch.states.n_avs(), 2);
        assert_eq!(batch.actions.dim(), (2, 1));
        assert_eq!(batch.rewards, vec![1.0, 2.0]);
        assert_eq!(batch.states.n_graphs, 2);
        // Second graph's vertices are offset behind the first graph's.
        assert_eq!(batch.states.vertex_graph, vec![0, 0, 1, 1]);
    }

    #[test]
    fn targets_use_the_pessimistic_twin_minimum() {
        let layout = Layout::four_way();
        let mut trainer =
            Td3Trainer::new(mini_cfg(), RewardWeights::default(), 42).unwrap();
        // Constant critics: zero weights, distinct output biases.
        let set_const = |critic: &mut CriticNetwork, c: f64| {
            for (name, p) in critic.params_mut() {
                p.value.fill(0.0);
                if name == "dec2.b" {
                    p.value.fill(c as Real);
                }
            }
        };
        set_const(&mut trainer.critic1_t, 2.0);
        set_const(&mut trainer.critic2_t, 5.0);

        let t0 = sample_transition(&layout, 0, 1.0);
        let mut t1 = sample_transition(&layout, 1, -0.5);
        t1.done = true;
        let batch = PreparedBatch::from_transitions(&[&t0, &t1]);
        let y = trainer.compute_targets(&batch);
        // min(2, 5) = 2; terminal entries do not bootstrap.
        assert_abs_diff_eq!(y[0], 1.0 + trainer.cfg.gamma * 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(y[1], -0.5, epsilon = 1e-12);
    }

    #[test]
    fn soft_updates_follow_the_polyak_rule_exactly() {
        let mut trainer = Td3Trainer::new(mini_cfg(), RewardWeights::default(), 7).unwrap();
        let before: Vec<Array2<Real>> = trainer
            .actor_t
            .params_mut()
            .into_iter()
            .map(|(_, p)| p.value.clone())
            .collect();
        // Nudge the online actor away from the target.
        for (_, p) in trainer.actor.params_mut() {
            p.value += 0.25;
        }
        let online: Vec<Array2<Real>> = trainer
            .actor
            .params_mut()
            .into_iter()
            .map(|(_, p)| p.value.clone())
            .collect();
        let tau = trainer.cfg.tau as Real;
        trainer.actor_t.soft_update_from(&mut trainer.actor, tau);
        for ((after, b), o) in trainer
            .actor_t
            .params_mut()
            .into_iter()
            .map(|(_, p)| p.value.clone())
            .zip(&before)
            .zip(&online)
        {
            let expect = o * tau + b * (1.0 - tau);
            for (x, y) in after.iter().zip(expect.iter()) {
                assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn actor_updates_every_policy_delay_critic_updates() {
        let layout = Layout::four_way();
        let mut trainer = Td3Trainer::new(mini_cfg(), RewardWeights::default(), 13).unwrap();
        for k in 0..16 {
            trainer.buffer.push(sample_transition(&layout, k, 0.1));
        }
        for _ in 0..12 {
            trainer.gradient_step().unwrap();
        }
        assert_eq!(trainer.updates, 12);
        assert_eq!(trainer.actor_updates, 12 / trainer.cfg.policy_delay);
    }

    #[test]
    fn frozen_buffer_regression_loss_decreases_with_zero_gamma() {
        let layout = Layout::four_way();
        let mut cfg = mini_cfg();
        cfg.gamma = 1e-9; // effectively zero: target = reward
        cfg.learning_rate = 3e-3;
        let mut trainer = Td3Trainer::new(cfg, RewardWeights::default(), 21).unwrap();
        let transitions: Vec<Transition> =
            (0..8).map(|k| sample_transition(&layout, k, 0.5 - 0.1 * k as f64)).collect();
        let refs: Vec<&Transition> = transitions.iter().collect();
        let batch = PreparedBatch::from_transitions(&refs);

        let mut losses = Vec::new();
        for _ in 0..400 {
            let (l1, _) = trainer.update_critics(&batch).unwrap();
            losses.push(l1);
        }
        let first: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = losses[390..].iter().sum::<f64>() / 10.0;
        assert!(last < 0.1 * first, "regression did not converge: {first} -> {last}");
        // Near-monotone decrease: each loss at most 25% above the best so far.
        let mut best = f64::INFINITY;
        for (k, &l) in losses.iter().enumerate() {
            assert!(l <= best * 1.25 + 1e-6, "loss spiked at step {k}: {l} > {best}");
            best = best.min(l);
        }
    }

    #[test]
    fn two_thousand_step_smoke_run_keeps_losses_finite() {
        let scenario = ScenarioConfig::demand_level(1);
        let cfg = Td3Config {
            hidden_width: 8,
            batch_size: 16,
            buffer_capacity: 4_000,
            start_steps: 200,
            total_steps: 2_000,
            ..Td3Config::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let mut trainer = Td3Trainer::new(cfg, RewardWeights::default(), 97).unwrap();
        let report = trainer.train(&scenario, dir.path()).unwrap();
        assert_eq!(report.env_steps, 2_000);
        assert!(report.gradient_steps > 1_000);
        assert!(report.mean_return_last_10.is_finite());
    }

    #[test]
    fn short_training_run_completes_with_finite_losses_and_is_deterministic() {
        let scenario = ScenarioConfig::demand_level(1).with_automation(1.0);
        let run = |dir: &Path| {
            let mut trainer =
                Td3Trainer::new(mini_cfg(), RewardWeights::default(), 3111).unwrap();
            let report = trainer.train(&scenario, dir).unwrap();
            assert_eq!(report.env_steps, trainer.cfg.total_steps);
            assert!(report.gradient_steps > 0);
            report
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ra = run(dir_a.path());
        let rb = run(dir_b.path());
        assert_abs_diff_eq!(ra.mean_return_last_10, rb.mean_return_last_10, epsilon = 0.0);
        let bytes_a = std::fs::read(ra.checkpoint).unwrap();
        let bytes_b = std::fs::read(rb.checkpoint).unwrap();
        assert_eq!(bytes_a, bytes_b, "training must be bit-deterministic under a fixed seed");
        let log = std::fs::read_to_string(ra.log).unwrap();
        assert!(log.lines().count() > 1, "log should contain episode rows");
        for line in log.lines().skip(1) {
            let loss: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!(loss.is_finite());
        }
    }
}
