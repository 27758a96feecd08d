//! Actor and critic assemblies.
//!
//! Both networks share the same spine: vertex and edge encoders, then a
//! three-layer graph stack (relational conv, attention, relational conv).
//! The actor decodes each AV vertex into one acceleration in [-1, 1]; the
//! critic appends the action to the AV vertex inputs, mean-pools the final
//! vertex features per graph and decodes a scalar value. Parameter counts
//! are independent of graph size, so one network serves any traffic volume.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::layers::{Gat, GatLease, LinLease, Linear, Rgcn, RgcnLease, Topology};
use super::tape::{NodeId, Tape};
use super::{Param, ParamSet, Real};
use crate::graph::SceneGraph;

/// Raw vertex feature width of the scene graph.
pub const VERTEX_FEATS: usize = 4;
/// Raw edge feature width.
pub const EDGE_FEATS: usize = 3;
/// Default hidden width of encoders and graph layers.
pub const DEFAULT_WIDTH: usize = 64;

/// One or more scene graphs packed into a disjoint union for the networks.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub x: Array2<Real>,
    pub e: Array2<Real>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub rel: Vec<usize>,
    /// Global row indices of AV vertices, grouped by graph, av_index order
    /// within each graph. Fixes the joint-action layout.
    pub av_rows: Vec<usize>,
    /// Graph membership per vertex row.
    pub vertex_graph: Vec<usize>,
    pub n_graphs: usize,
}

impl GraphBatch {
    pub fn from_graph(g: &SceneGraph) -> GraphBatch {
        GraphBatch::from_graphs(std::slice::from_ref(g))
    }

    pub fn from_graphs(graphs: &[SceneGraph]) -> GraphBatch {
        assert!(!graphs.is_empty(), "empty batch");
        let n: usize = graphs.iter().map(|g| g.vertices.len()).sum();
        let m: usize = graphs.iter().map(|g| g.edges.len()).sum();
        let mut b = GraphBatch {
            x: Array2::zeros((n, VERTEX_FEATS)),
            e: Array2::zeros((m, EDGE_FEATS)),
            src: Vec::with_capacity(m),
            dst: Vec::with_capacity(m),
            rel: Vec::with_capacity(m),
            av_rows: Vec::new(),
            vertex_graph: Vec::with_capacity(n),
            n_graphs: graphs.len(),
        };
        let (mut vo, mut eo) = (0usize, 0usize);
        for (gi, g) in graphs.iter().enumerate() {
            for (k, v) in g.vertices.iter().enumerate() {
                for (c, &f) in v.feats.iter().enumerate() {
                    b.x[(vo + k, c)] = f as Real;
                }
                b.vertex_graph.push(gi);
            }
            for (k, edge) in g.edges.iter().enumerate() {
                for (c, &f) in edge.feats.iter().enumerate() {
                    b.e[(eo + k, c)] = f as Real;
                }
                b.src.push(vo + edge.src);
                b.dst.push(vo + edge.dst);
                b.rel.push(edge.type_index());
            }
            b.av_rows.extend(g.av_index.iter().map(|&i| vo + i));
            vo += g.vertices.len();
            eo += g.edges.len();
        }
        b
    }

    pub fn topology(&self) -> Topology<'_> {
        Topology { src: &self.src, dst: &self.dst, rel: &self.rel, n_vertices: self.n_vertices() }
    }

    pub fn n_vertices(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_avs(&self) -> usize {
        self.av_rows.len()
    }
}

#[derive(Debug, Clone)]
struct Spine {
    v_enc: Linear,
    e_enc: Linear,
    conv1: Rgcn,
    conv2: Gat,
    conv3: Rgcn,
}

struct SpineLease {
    v_enc: LinLease,
    e_enc: LinLease,
    conv1: RgcnLease,
    conv2: GatLease,
    conv3: RgcnLease,
}

impl Spine {
    fn new(vertex_in: usize, width: usize, rng: &mut ChaCha8Rng) -> Spine {
        Spine {
            v_enc: Linear::new(vertex_in, width, rng),
            e_enc: Linear::new(EDGE_FEATS, width, rng),
            conv1: Rgcn::new(width, width, width, rng),
            conv2: Gat::new(width, width, width, rng),
            conv3: Rgcn::new(width, width, width, rng),
        }
    }

    fn lease(&self, t: &mut Tape, ids: &mut Vec<NodeId>) -> SpineLease {
        SpineLease {
            v_enc: self.v_enc.lease(t, ids),
            e_enc: self.e_enc.lease(t, ids),
            conv1: self.conv1.lease(t, ids),
            conv2: self.conv2.lease(t, ids),
            conv3: self.conv3.lease(t, ids),
        }
    }

    /// Runs encoders and the graph stack; `x` is the vertex input node.
    /// Returns the final latent vertex features.
    fn apply(t: &mut Tape, l: &SpineLease, x: NodeId, e: NodeId, topo: Topology) -> NodeId {
        let h = Linear::apply(t, l.v_enc, x);
        let h = t.relu(h);
        let g = Linear::apply(t, l.e_enc, e);
        let g = t.relu(g);
        // Edge features are encoded once and reused by every layer; the
        // graph stack only updates vertex features.
        let h = Rgcn::apply(t, &l.conv1, h, g, topo);
        let (h, _) = Gat::apply(t, l.conv2, h, g, topo);
        Rgcn::apply(t, &l.conv3, h, g, topo)
    }

    fn collect<'p>(&'p mut self, out: &mut Vec<(String, &'p mut Param)>) {
        self.v_enc.collect("v_enc", out);
        self.e_enc.collect("e_enc", out);
        self.conv1.collect("conv1", out);
        self.conv2.collect("conv2", out);
        self.conv3.collect("conv3", out);
    }
}

/// Ids of the leased parameters of one forward pass, in `params_mut` order.
pub struct Lease {
    ids: Vec<NodeId>,
    spine: SpineLease,
    dec1: LinLease,
    dec2: LinLease,
}

macro_rules! impl_common {
    ($net:ty) => {
        impl $net {
            pub fn lease(&self, t: &mut Tape) -> Lease {
                let mut ids = Vec::new();
                let spine = self.spine.lease(t, &mut ids);
                let dec1 = self.dec1.lease(t, &mut ids);
                let dec2 = self.dec2.lease(t, &mut ids);
                Lease { ids, spine, dec1, dec2 }
            }

            /// Adds the tape gradients of a leased pass into the parameter
            /// gradient buffers.
            pub fn harvest(&mut self, t: &Tape, lease: &Lease) {
                let params = self.params_mut();
                assert_eq!(params.len(), lease.ids.len());
                for ((_, p), &id) in params.into_iter().zip(&lease.ids) {
                    p.grad += t.grad(id);
                }
            }
        }

        impl ParamSet for $net {
            fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
                let mut out = Vec::new();
                self.spine.collect(&mut out);
                self.dec1.collect("dec1", &mut out);
                self.dec2.collect("dec2", &mut out);
                out
            }
        }
    };
}

/// Policy network: scene graph in, one acceleration per AV out, bounded by
/// tanh to [-1, 1].
#[derive(Debug, Clone)]
pub struct ActorNetwork {
    pub width: usize,
    spine: Spine,
    dec1: Linear,
    dec2: Linear,
}

impl_common!(ActorNetwork);

impl ActorNetwork {
    pub fn new(width: usize, rng: &mut ChaCha8Rng) -> ActorNetwork {
        ActorNetwork {
            width,
            spine: Spine::new(VERTEX_FEATS, width, rng),
            dec1: Linear::new(width, width, rng),
            dec2: Linear::new(width, 1, rng),
        }
    }

    /// Forward pass; returns the (n_av × 1) action node in batch
    /// `av_rows` order.
    pub fn forward(&self, t: &mut Tape, lease: &Lease, batch: &GraphBatch) -> NodeId {
        let x = t.leaf(batch.x.clone());
        let e = t.leaf(batch.e.clone());
        let h = Spine::apply(t, &lease.spine, x, e, batch.topology());
        let av = t.gather_rows(h, batch.av_rows.clone());
        let d = Linear::apply(t, lease.dec1, av);
        let d = t.relu(d);
        let d = Linear::apply(t, lease.dec2, d);
        t.tanh(d)
    }

    /// Convenience inference on a single graph; actions come back in
    /// `av_index` order. Empty when the graph has no AVs.
    pub fn act(&self, graph: &SceneGraph) -> Vec<f64> {
        let batch = GraphBatch::from_graph(graph);
        let mut t = Tape::new();
        let lease = self.lease(&mut t);
        let out = self.forward(&mut t, &lease, &batch);
        t.value(out).column(0).iter().map(|&v| v as f64).collect()
    }

    /// Reconstructs a network from checkpoint blocks; the hidden width is
    /// inferred from the vertex encoder's shape.
    pub fn from_blocks(
        prefix: &str,
        blocks: &[(String, Array2<Real>)],
    ) -> crate::Result<ActorNetwork> {
        let width = block_width(prefix, blocks)?;
        let mut net = ActorNetwork::new(width, &mut crate::rng::stream(0, "from_blocks", 0));
        net.load_from_blocks(prefix, blocks)?;
        Ok(net)
    }
}

fn block_width(prefix: &str, blocks: &[(String, Array2<Real>)]) -> crate::Result<usize> {
    let key = format!("{prefix}v_enc.w");
    blocks
        .iter()
        .find(|(n, _)| *n == key)
        .map(|(_, v)| v.ncols())
        .ok_or_else(|| crate::Error::Checkpoint(format!("missing block {key}")))
}

/// Value network: (scene graph, joint action) in, scalar q per graph out.
#[derive(Debug, Clone)]
pub struct CriticNetwork {
    pub width: usize,
    spine: Spine,
    dec1: Linear,
    dec2: Linear,
}

impl_common!(CriticNetwork);

impl CriticNetwork {
    pub fn new(width: usize, rng: &mut ChaCha8Rng) -> CriticNetwork {
        CriticNetwork {
            width,
            // One extra input column holds the action at AV vertices.
            spine: Spine::new(VERTEX_FEATS + 1, width, rng),
            dec1: Linear::new(width, width, rng),
            dec2: Linear::new(width, 1, rng),
        }
    }

    /// Forward pass; `action` is an (n_av × 1) node aligned with
    /// `batch.av_rows` (a tape leaf, or the actor output for policy
    /// gradients). Returns the (n_graphs × 1) value node.
    pub fn forward(
        &self,
        t: &mut Tape,
        lease: &Lease,
        batch: &GraphBatch,
        action: NodeId,
    ) -> NodeId {
        let x4 = t.leaf(batch.x.clone());
        let a_col = t.scatter_add_rows(action, batch.av_rows.clone(), batch.n_vertices());
        let x = t.concat_cols(x4, a_col);
        let e = t.leaf(batch.e.clone());
        let h = Spine::apply(t, &lease.spine, x, e, batch.topology());
        let pooled = t.segment_mean_rows(h, batch.vertex_graph.clone(), batch.n_graphs);
        let d = Linear::apply(t, lease.dec1, pooled);
        let d = t.relu(d);
        Linear::apply(t, lease.dec2, d)
    }

    /// Reconstructs a network from checkpoint blocks.
    pub fn from_blocks(
        prefix: &str,
        blocks: &[(String, Array2<Real>)],
    ) -> crate::Result<CriticNetwork> {
        let width = block_width(prefix, blocks)?;
        let mut net = CriticNetwork::new(width, &mut crate::rng::stream(0, "from_blocks", 1));
        net.load_from_blocks(prefix, blocks)?;
        Ok(net)
    }

    /// Convenience scalar evaluation on a single graph.
    pub fn q_value(&self, graph: &SceneGraph, action: &[f64]) -> f64 {
        assert_eq!(action.len(), graph.n_avs(), "action length must match AV count");
        let batch = GraphBatch::from_graph(graph);
        let mut t = Tape::new();
        let lease = self.lease(&mut t);
        let a = t.leaf(Array2::from_shape_vec(
            (action.len(), 1),
            action.iter().map(|&v| v as Real).collect(),
        )
        .expect("action column"));
        let q = self.forward(&mut t, &lease, &batch, a);
        t.value(q)[(0, 0)] as f64
    }
}
