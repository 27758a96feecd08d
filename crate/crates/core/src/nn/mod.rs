//! Small reverse-mode neural network core.
//!
//! Everything the planners need runs on dense 2-D arrays: a recording tape
//! with the dozen ops used by the graph networks, fully connected and graph
//! layers, the actor/critic assemblies, Adam, and a binary checkpoint
//! format. No GPU, no generic autodiff beyond what these networks use.

mod adam;
mod checkpoint;
mod layers;
mod net;
mod tape;

pub use adam::Adam;
pub use checkpoint::{load_blocks, save_blocks};
pub use layers::{Gat, Linear, Rgcn};
pub use net::{ActorNetwork, CriticNetwork, GraphBatch, DEFAULT_WIDTH};
pub use tape::{NodeId, Tape};

use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

/// Scalar type of the whole stack. Defaults to 64-bit; the `f32` feature
/// switches to single precision (finite-difference tests are gated off
/// there).
#[cfg(feature = "f32")]
pub type Real = f32;
#[cfg(not(feature = "f32"))]
pub type Real = f64;

/// A learnable tensor together with its accumulated gradient and Adam
/// moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Array2<Real>,
    pub grad: Array2<Real>,
    pub m: Array2<Real>,
    pub v: Array2<Real>,
}

impl Param {
    pub fn zeros(rows: usize, cols: usize) -> Param {
        Param {
            value: Array2::zeros((rows, cols)),
            grad: Array2::zeros((rows, cols)),
            m: Array2::zeros((rows, cols)),
            v: Array2::zeros((rows, cols)),
        }
    }

    /// Uniform fan-in initialisation in ±1/sqrt(rows); weights are stored
    /// (in × out) so the row count is the fan-in.
    pub fn fan_in(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Param {
        let bound = 1.0 / (rows as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut p = Param::zeros(rows, cols);
        p.value.mapv_inplace(|_| dist.sample(rng) as Real);
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Named mutable views over a network's parameters, used by the optimizer
/// and the checkpoint code. Names are stable across runs.
pub trait ParamSet {
    fn params_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn to_blocks(&mut self, prefix: &str) -> Vec<(String, Array2<Real>)> {
        self.params_mut()
            .into_iter()
            .map(|(name, p)| (format!("{prefix}{name}"), p.value.clone()))
            .collect()
    }

    fn load_from_blocks(
        &mut self,
        prefix: &str,
        blocks: &[(String, Array2<Real>)],
    ) -> crate::Result<()> {
        for (name, p) in self.params_mut() {
            let full = format!("{prefix}{name}");
            let block = blocks
                .iter()
                .find(|(n, _)| *n == full)
                .ok_or_else(|| crate::Error::Checkpoint(format!("missing block {full}")))?;
            if block.1.dim() != p.value.dim() {
                return Err(crate::Error::Checkpoint(format!(
                    "block {full} has shape {:?}, expected {:?}",
                    block.1.dim(),
                    p.value.dim()
                )));
            }
            p.value.assign(&block.1);
        }
        Ok(())
    }

    /// Copies `other`'s values into `self` (used for target networks).
    fn copy_values_from(&mut self, other: &mut Self) {
        let src: Vec<Array2<Real>> =
            other.params_mut().into_iter().map(|(_, p)| p.value.clone()).collect();
        for ((_, p), v) in self.params_mut().into_iter().zip(src) {
            p.value.assign(&v);
        }
    }

    /// Polyak averaging: self = tau * other + (1 - tau) * self.
    fn soft_update_from(&mut self, other: &mut Self, tau: Real) {
        let src: Vec<Array2<Real>> =
            other.params_mut().into_iter().map(|(_, p)| p.value.clone()).collect();
        for ((_, p), v) in self.params_mut().into_iter().zip(src) {
            p.value.zip_mut_with(&v, |a, b| *a = tau * *b + (1.0 - tau) * *a);
        }
    }
}
