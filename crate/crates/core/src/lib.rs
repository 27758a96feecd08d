//! Crossflow simulates a single four-way intersection shared by automated
//! vehicles (AVs) and human-driven manual vehicles (MVs), and provides two
//! interchangeable central planners for the AVs: a graph-network policy
//! trained with off-policy actor-critic RL, and an enhanced-FIFO reservation
//! baseline.
//!
//! The crate is organised bottom-up:
//!
//! * [`geom`] - polylines, arcs, projections and oriented-box overlap.
//! * [`world`] - intersection layout, vehicle kinematics, spawning and
//!   collision bookkeeping.
//! * [`driver`] - the longitudinal driver models (IDM and its stochastic
//!   extension) plus gap-acceptance yielding for uncontrolled vehicles.
//! * [`noise`] - the AR(1) perception-error model, its estimator, and the
//!   defaults fitted from drive-log data.
//! * [`graph`] - the typed scene graph the planners observe.
//! * [`nn`] - a small reverse-mode tape, relational graph layers, and the
//!   actor/critic networks.
//! * [`reward`] - the shaped team reward.
//! * [`td3`] - replay buffer, graph batching and the TD3 training loop.
//! * [`efifo`] - the rule-based reservation planner.
//! * [`eval`] - episode runner, traffic metrics and evaluation campaigns.
//!
//! The `crossflow` binary exposes training, evaluation, noise estimation,
//! reporting and single-episode simulation as subcommands.

pub mod config;
pub mod driver;
pub mod efifo;
pub mod eval;
pub mod geom;
pub mod graph;
pub mod nn;
pub mod noise;
pub mod reward;
pub mod rng;
pub mod td3;
pub mod world;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
