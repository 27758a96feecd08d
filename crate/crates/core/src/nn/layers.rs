//! Network layers: fully connected, relational graph convolution, and
//! edge-aware graph attention.
//!
//! Layers store their parameters; a forward pass first *leases* them onto a
//! tape (recording the leaf ids) and then applies pure tape ops. All layers
//! share weights across vertices and edges, so parameter counts are
//! independent of graph size.

use rand_chacha::ChaCha8Rng;

use super::tape::{NodeId, Tape};
use super::{Param, Real};
use crate::graph::N_EDGE_TYPES;

/// Negative slope of the attention nonlinearity.
pub const ATT_SLOPE: Real = 0.2;

/// Edge topology of a (possibly batched) graph, borrowed from the batch.
#[derive(Debug, Clone, Copy)]
pub struct Topology<'a> {
    pub src: &'a [usize],
    pub dst: &'a [usize],
    pub rel: &'a [usize],
    pub n_vertices: usize,
}

impl Topology<'_> {
    pub fn n_edges(&self) -> usize {
        self.src.len()
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

#[derive(Debug, Clone, Copy)]
pub struct LinLease {
    pub w: NodeId,
    pub b: NodeId,
}

impl Linear {
    pub fn new(fan_in: usize, out: usize, rng: &mut ChaCha8Rng) -> Linear {
        Linear { w: Param::fan_in(fan_in, out, rng), b: Param::zeros(1, out) }
    }

    pub fn lease(&self, t: &mut Tape, ids: &mut Vec<NodeId>) -> LinLease {
        let w = t.leaf(self.w.value.clone());
        let b = t.leaf(self.b.value.clone());
        ids.extend([w, b]);
        LinLease { w, b }
    }

    pub fn apply(t: &mut Tape, l: LinLease, x: NodeId) -> NodeId {
        let h = t.matmul(x, l.w);
        t.add_row(h, l.b)
    }

    pub fn collect<'p>(&'p mut self, prefix: &str, out: &mut Vec<(String, &'p mut Param)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.b"), &mut self.b));
    }
}

/// Relational graph convolution with edge features concatenated into the
/// messages:
///
///   h'_i = ReLU( R·h_i + Σ_r (1/|N_r(i)|) Σ_{j∈N_r(i)} Θ_r·[h_j ‖ g_ji] )
///
/// where N_r(i) are the in-neighbors of i under edge type r. One Θ_r per
/// edge type; no bias, so a graph without edges reduces to ReLU(R·h).
#[derive(Debug, Clone)]
pub struct Rgcn {
    pub root: Param,
    pub rel: Vec<Param>,
}

#[derive(Debug, Clone)]
pub struct RgcnLease {
    pub root: NodeId,
    pub rel: Vec<NodeId>,
}

impl Rgcn {
    /// `h_in`: vertex feature width, `g_in`: edge feature width.
    pub fn new(h_in: usize, g_in: usize, out: usize, rng: &mut ChaCha8Rng) -> Rgcn {
        Rgcn {
            root: Param::fan_in(h_in, out, rng),
            rel: (0..N_EDGE_TYPES).map(|_| Param::fan_in(h_in + g_in, out, rng)).collect(),
        }
    }

    pub fn lease(&self, t: &mut Tape, ids: &mut Vec<NodeId>) -> RgcnLease {
        let root = t.leaf(self.root.value.clone());
        ids.push(root);
        let rel = self
            .rel
            .iter()
            .map(|p| {
                let id = t.leaf(p.value.clone());
                ids.push(id);
                id
            })
            .collect();
        RgcnLease { root, rel }
    }

    pub fn apply(t: &mut Tape, l: &RgcnLease, h: NodeId, g: NodeId, topo: Topology) -> NodeId {
        let mut out = t.matmul(h, l.root);
        for (r, &theta) in l.rel.iter().enumerate() {
            let edges: Vec<usize> = (0..topo.n_edges()).filter(|&e| topo.rel[e] == r).collect();
            if edges.is_empty() {
                continue;
            }
            let src_rows: Vec<usize> = edges.iter().map(|&e| topo.src[e]).collect();
            let dst_rows: Vec<usize> = edges.iter().map(|&e| topo.dst[e]).collect();
            let mut deg = vec![0usize; topo.n_vertices];
            for &d in &dst_rows {
                deg[d] += 1;
            }
            let weights: Vec<Real> = dst_rows.iter().map(|&d| 1.0 / deg[d] as Real).collect();

            let h_src = t.gather_rows(h, src_rows);
            let g_edge = t.gather_rows(g, edges);
            let cat = t.concat_cols(h_src, g_edge);
            let msg = t.matmul(cat, theta);
            let msg = t.scale_rows(msg, weights);
            let agg = t.scatter_add_rows(msg, dst_rows, topo.n_vertices);
            out = t.add(out, agg);
        }
        t.relu(out)
    }

    pub fn collect<'p>(&'p mut self, prefix: &str, out: &mut Vec<(String, &'p mut Param)>) {
        out.push((format!("{prefix}.root"), &mut self.root));
        for (r, p) in self.rel.iter_mut().enumerate() {
            out.push((format!("{prefix}.rel{r}"), p));
        }
    }
}

/// Graph attention with edge features in the logits only:
///
///   e_ij = LeakyReLU(aᵀ·[W·h_i ‖ W·h_j ‖ W_e·g_ij])
///   α    = softmax of e over the in-edges of i
///   h'_i = ReLU(Σ_j α_ij · W·h_j)
///
/// Single head, no self-loops; edge types are disregarded here. Vertices
/// without in-edges map to zero.
#[derive(Debug, Clone)]
pub struct Gat {
    pub w: Param,
    pub we: Param,
    pub a: Param,
}

#[derive(Debug, Clone, Copy)]
pub struct GatLease {
    pub w: NodeId,
    pub we: NodeId,
    pub a: NodeId,
}

impl Gat {
    pub fn new(h_in: usize, g_in: usize, out: usize, rng: &mut ChaCha8Rng) -> Gat {
        Gat {
            w: Param::fan_in(h_in, out, rng),
            we: Param::fan_in(g_in, out, rng),
            a: Param::fan_in(3 * out, 1, rng),
        }
    }

    pub fn lease(&self, t: &mut Tape, ids: &mut Vec<NodeId>) -> GatLease {
        let w = t.leaf(self.w.value.clone());
        let we = t.leaf(self.we.value.clone());
        let a = t.leaf(self.a.value.clone());
        ids.extend([w, we, a]);
        GatLease { w, we, a }
    }

    /// Returns the updated vertex features and the per-edge attention
    /// weights (the latter mainly for inspection in tests).
    pub fn apply(
        t: &mut Tape,
        l: GatLease,
        h: NodeId,
        g: NodeId,
        topo: Topology,
    ) -> (NodeId, NodeId) {
        let wh = t.matmul(h, l.w);
        let weg = t.matmul(g, l.we);
        let wh_dst = t.gather_rows(wh, topo.dst.to_vec());
        let wh_src = t.gather_rows(wh, topo.src.to_vec());
        let cat = t.concat_cols(wh_dst, wh_src);
        let cat = t.concat_cols(cat, weg);
        let raw = t.matmul(cat, l.a);
        let logits = t.leaky_relu(raw, ATT_SLOPE);
        let alpha = t.segment_softmax(logits, topo.dst.to_vec());
        let weighted = t.mul_col(wh_src, alpha);
        let agg = t.scatter_add_rows(weighted, topo.dst.to_vec(), topo.n_vertices);
        (t.relu(agg), alpha)
    }

    pub fn collect<'p>(&'p mut self, prefix: &str, out: &mut Vec<(String, &'p mut Param)>) {
        out.push((format!("{prefix}.w"), &mut self.w));
        out.push((format!("{prefix}.we"), &mut self.we));
        out.push((format!("{prefix}.a"), &mut self.a));
    }
}
