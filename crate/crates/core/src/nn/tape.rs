//! Recording tape for reverse-mode differentiation.
//!
//! A forward pass pushes nodes onto the tape; `backward` walks it in
//! reverse and accumulates gradients into per-node buffers. Leaves are
//! plain value nodes — parameter gradients are harvested by the caller via
//! `grad(leaf_id)` after the backward pass.

use ndarray::{s, Array2, Axis};

use super::Real;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// a (p×q) · b (q×r)
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// a (m×n) + row (1×n), broadcast over rows.
    AddRow(NodeId, NodeId),
    Scale(NodeId, Real),
    Relu(NodeId),
    LeakyRelu(NodeId, Real),
    Tanh(NodeId),
    /// [a ‖ b] along columns.
    ConcatCols(NodeId, NodeId),
    /// Rows of `a` selected by index; duplicates allowed.
    GatherRows(NodeId, Vec<usize>),
    /// Rows of `a` added into a zero (n_rows × cols) matrix at the given
    /// target rows; duplicates accumulate.
    ScatterAddRows(NodeId, Vec<usize>),
    /// Row i multiplied by the constant weight w[i] (not differentiated
    /// through the weights).
    ScaleRows(NodeId, Vec<Real>),
    /// a (m×n) * c (m×1), c broadcast across columns; differentiable in
    /// both.
    MulCol(NodeId, NodeId),
    /// Softmax of a (m×1) within row segments; rows of equal segment id
    /// normalise together. Segment ids need not be contiguous rows.
    SegmentSoftmax(NodeId, Vec<usize>),
    /// Per-segment mean of rows into (n_segments × cols); empty segments
    /// produce zero rows.
    SegmentMeanRows(NodeId, Vec<usize>, usize),
    SumAll(NodeId),
    MeanAll(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Array2<Real>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Array2<Real>>,
    ran_backward: bool,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, op: Op, value: Array2<Real>) -> NodeId {
        assert!(!self.ran_backward, "tape already differentiated; start a new one");
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Array2<Real> {
        &self.nodes[id].value
    }

    /// Gradient of the backward root with respect to node `id`. Must run
    /// `backward` first.
    pub fn grad(&self, id: NodeId) -> &Array2<Real> {
        assert!(self.ran_backward, "gradient requested before backward");
        &self.grads[id]
    }

    pub fn leaf(&mut self, value: Array2<Real>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(Op::Matmul(a, b), v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(Op::Mul(a, b), v)
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.nodes[row].value.nrows(), 1, "bias must be a single row");
        let v = &self.nodes[a].value + &self.nodes[row].value;
        self.push(Op::AddRow(a, row), v)
    }

    pub fn scale(&mut self, a: NodeId, c: Real) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| c * x);
        self.push(Op::Scale(a, c), v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: Real) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(Real::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.nrows(), vb.nrows());
        let mut v = Array2::zeros((va.nrows(), va.ncols() + vb.ncols()));
        v.slice_mut(s![.., ..va.ncols()]).assign(va);
        v.slice_mut(s![.., va.ncols()..]).assign(vb);
        self.push(Op::ConcatCols(a, b), v)
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: Vec<usize>) -> NodeId {
        let va = &self.nodes[a].value;
        let mut v = Array2::zeros((rows.len(), va.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            v.row_mut(k).assign(&va.row(r));
        }
        self.push(Op::GatherRows(a, rows), v)
    }

    pub fn scatter_add_rows(&mut self, a: NodeId, rows: Vec<usize>, n_rows: usize) -> NodeId {
        let va = &self.nodes[a].value;
        assert_eq!(va.nrows(), rows.len());
        let mut v = Array2::zeros((n_rows, va.ncols()));
        for (k, &r) in rows.iter().enumerate() {
            let mut dst = v.row_mut(r);
            dst += &va.row(k);
        }
        self.push(Op::ScatterAddRows(a, rows), v)
    }

    pub fn scale_rows(&mut self, a: NodeId, weights: Vec<Real>) -> NodeId {
        let va = &self.nodes[a].value;
        assert_eq!(va.nrows(), weights.len());
        let mut v = va.clone();
        for (k, &w) in weights.iter().enumerate() {
            v.row_mut(k).mapv_inplace(|x| w * x);
        }
        self.push(Op::ScaleRows(a, weights), v)
    }

    pub fn mul_col(&mut self, a: NodeId, c: NodeId) -> NodeId {
        let (va, vc) = (&self.nodes[a].value, &self.nodes[c].value);
        assert_eq!(vc.ncols(), 1);
        assert_eq!(va.nrows(), vc.nrows());
        let mut v = va.clone();
        for (mut row, &cv) in v.rows_mut().into_iter().zip(vc.column(0)) {
            row.mapv_inplace(|x| cv * x);
        }
        self.push(Op::MulCol(a, c), v)
    }

    pub fn segment_softmax(&mut self, a: NodeId, segments: Vec<usize>) -> NodeId {
        let va = &self.nodes[a].value;
        assert_eq!(va.ncols(), 1);
        assert_eq!(va.nrows(), segments.len());
        let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
        let mut seg_max = vec![Real::NEG_INFINITY; n_seg];
        for (k, &seg) in segments.iter().enumerate() {
            seg_max[seg] = seg_max[seg].max(va[(k, 0)]);
        }
        let mut seg_sum = vec![0.0 as Real; n_seg];
        let mut v = Array2::zeros(va.dim());
        for (k, &seg) in segments.iter().enumerate() {
            let e = (va[(k, 0)] - seg_max[seg]).exp();
            v[(k, 0)] = e;
            seg_sum[seg] += e;
        }
        for (k, &seg) in segments.iter().enumerate() {
            v[(k, 0)] /= seg_sum[seg];
        }
        self.push(Op::SegmentSoftmax(a, segments), v)
    }

    pub fn segment_mean_rows(&mut self, a: NodeId, segments: Vec<usize>, n_segments: usize) -> NodeId {
        let va = &self.nodes[a].value;
        assert_eq!(va.nrows(), segments.len());
        assert!(segments.iter().all(|&s| s < n_segments));
        let mut counts = vec![0usize; n_segments];
        let mut v = Array2::zeros((n_segments, va.ncols()));
        for (k, &seg) in segments.iter().enumerate() {
            counts[seg] += 1;
            let mut dst = v.row_mut(seg);
            dst += &va.row(k);
        }
        for (seg, &c) in counts.iter().enumerate() {
            if c > 0 {
                v.row_mut(seg).mapv_inplace(|x| x / c as Real);
            }
        }
        self.push(Op::SegmentMeanRows(a, segments, n_segments), v)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(Op::SumAll(a), v)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.len().max(1);
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum() / n as Real);
        self.push(Op::MeanAll(a), v)
    }

    /// Reverse pass from a scalar (1×1) root. May be called once per tape.
    pub fn backward(&mut self, root: NodeId) {
        assert!(!self.ran_backward, "backward already ran on this tape");
        assert_eq!(self.nodes[root].value.dim(), (1, 1), "backward root must be scalar");
        self.grads = self.nodes.iter().map(|n| Array2::zeros(n.value.dim())).collect();
        self.grads[root][(0, 0)] = 1.0;
        self.ran_backward = true;

        for id in (0..self.nodes.len()).rev() {
            if self.grads[id].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = self.grads[id].clone();
            match self.nodes[id].op.clone() {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let ga = g.dot(&self.nodes[b].value.t());
                    let gb = self.nodes[a].value.t().dot(&g);
                    self.grads[a] += &ga;
                    self.grads[b] += &gb;
                }
                Op::Add(a, b) => {
                    self.grads[a] += &g;
                    self.grads[b] += &g;
                }
                Op::Sub(a, b) => {
                    self.grads[a] += &g;
                    self.grads[b] -= &g;
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b].value;
                    let gb = &g * &self.nodes[a].value;
                    self.grads[a] += &ga;
                    self.grads[b] += &gb;
                }
                Op::AddRow(a, row) => {
                    self.grads[a] += &g;
                    let col_sums = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.grads[row] += &col_sums;
                }
                Op::Scale(a, c) => {
                    self.grads[a].zip_mut_with(&g, |ga, &gv| *ga += c * gv);
                }
                Op::Relu(a) => {
                    let mask = self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    self.grads[a] += &(&g * &mask);
                }
                Op::LeakyRelu(a, slope) => {
                    let mask = self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { slope });
                    self.grads[a] += &(&g * &mask);
                }
                Op::Tanh(a) => {
                    let dy = self.nodes[id].value.mapv(|y| 1.0 - y * y);
                    self.grads[a] += &(&g * &dy);
                }
                Op::ConcatCols(a, b) => {
                    let na = self.nodes[a].value.ncols();
                    self.grads[a] += &g.slice(s![.., ..na]);
                    self.grads[b] += &g.slice(s![.., na..]);
                }
                Op::GatherRows(a, rows) => {
                    for (k, &r) in rows.iter().enumerate() {
                        let gk = g.row(k).to_owned();
                        let mut dst = self.grads[a].row_mut(r);
                        dst += &gk;
                    }
                }
                Op::ScatterAddRows(a, rows) => {
                    for (k, &r) in rows.iter().enumerate() {
                        let gr = g.row(r).to_owned();
                        let mut dst = self.grads[a].row_mut(k);
                        dst += &gr;
                    }
                }
                Op::ScaleRows(a, weights) => {
                    for (k, &w) in weights.iter().enumerate() {
                        let gk = g.row(k).mapv(|x| w * x);
                        let mut dst = self.grads[a].row_mut(k);
                        dst += &gk;
                    }
                }
                Op::MulCol(a, c) => {
                    let va = self.nodes[a].value.clone();
                    let vc = self.nodes[c].value.clone();
                    for k in 0..va.nrows() {
                        let gk = g.row(k).mapv(|x| vc[(k, 0)] * x);
                        let mut dst = self.grads[a].row_mut(k);
                        dst += &gk;
                        self.grads[c][(k, 0)] += g.row(k).dot(&va.row(k));
                    }
                }
                Op::SegmentSoftmax(a, segments) => {
                    let alpha = &self.nodes[id].value;
                    let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
                    // Per-segment inner product sum_e alpha_e * g_e.
                    let mut seg_dot = vec![0.0 as Real; n_seg];
                    for (k, &seg) in segments.iter().enumerate() {
                        seg_dot[seg] += alpha[(k, 0)] * g[(k, 0)];
                    }
                    for (k, &seg) in segments.iter().enumerate() {
                        self.grads[a][(k, 0)] += alpha[(k, 0)] * (g[(k, 0)] - seg_dot[seg]);
                    }
                }
                Op::SegmentMeanRows(a, segments, n_segments) => {
                    let mut counts = vec![0usize; n_segments];
                    for &seg in &segments {
                        counts[seg] += 1;
                    }
                    for (k, &seg) in segments.iter().enumerate() {
                        let gk = g.row(seg).mapv(|x| x / counts[seg] as Real);
                        let mut dst = self.grads[a].row_mut(k);
                        dst += &gk;
                    }
                }
                Op::SumAll(a) => {
                    let gv = g[(0, 0)];
                    self.grads[a].mapv_inplace(|x| x + gv);
                }
                Op::MeanAll(a) => {
                    let n = self.nodes[a].value.len().max(1);
                    let gv = g[(0, 0)] / n as Real;
                    self.grads[a].mapv_inplace(|x| x + gv);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[cfg(not(feature = "f32"))]
    mod fd {
        //! Central finite differences against the tape, one op at a time.
        use super::*;
        use rand::Rng;

        const H: f64 = 1e-4;
        const TOL: f64 = 1e-6;

        fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
            Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
        }

        /// Checks d(scalar(f))/d(input) for every entry of every input.
        fn check(inputs: &[Array2<f64>], f: impl Fn(&mut Tape, &[NodeId]) -> NodeId) {
            let eval = |xs: &[Array2<f64>]| -> f64 {
                let mut t = Tape::new();
                let ids: Vec<NodeId> = xs.iter().map(|x| t.leaf(x.clone())).collect();
                let out = f(&mut t, &ids);
                let v = t.sum_all(out);
                t.value(v)[(0, 0)]
            };
            let mut t = Tape::new();
            let ids: Vec<NodeId> = inputs.iter().map(|x| t.leaf(x.clone())).collect();
            let out = f(&mut t, &ids);
            let root = t.sum_all(out);
            t.backward(root);

            for (i, input) in inputs.iter().enumerate() {
                for r in 0..input.nrows() {
                    for c in 0..input.ncols() {
                        let mut plus = inputs.to_vec();
                        plus[i][(r, c)] += H;
                        let mut minus = inputs.to_vec();
                        minus[i][(r, c)] -= H;
                        let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
                        let an = t.grad(ids[i])[(r, c)];
                        assert!(
                            (fd - an).abs() <= TOL * (1.0 + fd.abs().max(an.abs())),
                            "input {i} entry ({r},{c}): fd={fd} analytic={an}"
                        );
                    }
                }
            }
        }

        #[test]
        fn matmul_add_sub_mul() {
            let mut rng = crate::rng::stream(7, "fd", 0);
            let a = random(3, 4, &mut rng);
            let b = random(4, 2, &mut rng);
            check(&[a.clone(), b], |t, ids| t.matmul(ids[0], ids[1]));
            let c = random(3, 4, &mut rng);
            check(&[a.clone(), c.clone()], |t, ids| t.add(ids[0], ids[1]));
            check(&[a.clone(), c.clone()], |t, ids| t.sub(ids[0], ids[1]));
            check(&[a, c], |t, ids| t.mul(ids[0], ids[1]));
        }

        #[test]
        fn broadcast_and_activations() {
            let mut rng = crate::rng::stream(7, "fd", 1);
            let a = random(3, 4, &mut rng);
            let row = random(1, 4, &mut rng);
            check(&[a.clone(), row], |t, ids| t.add_row(ids[0], ids[1]));
            check(&[a.clone()], |t, ids| t.scale(ids[0], -1.7));
            // Shift away from 0 so the relu kink cannot sit on a sample.
            let shifted = a.mapv(|x| x + 0.01 * x.signum());
            check(&[shifted.clone()], |t, ids| t.relu(ids[0]));
            check(&[shifted], |t, ids| t.leaky_relu(ids[0], 0.2));
            check(&[a], |t, ids| t.tanh(ids[0]));
        }

        #[test]
        fn structural_ops() {
            let mut rng = crate::rng::stream(7, "fd", 2);
            let a = random(4, 3, &mut rng);
            let b = random(4, 2, &mut rng);
            check(&[a.clone(), b], |t, ids| t.concat_cols(ids[0], ids[1]));
            check(&[a.clone()], |t, ids| t.gather_rows(ids[0], vec![2, 0, 2, 3]));
            check(&[a.clone()], |t, ids| t.scatter_add_rows(ids[0], vec![1, 0, 1, 5], 6));
            check(&[a.clone()], |t, ids| t.scale_rows(ids[0], vec![0.5, -2.0, 0.0, 3.0]));
            let c = random(4, 1, &mut rng);
            check(&[a.clone(), c], |t, ids| t.mul_col(ids[0], ids[1]));
            check(&[a.clone()], |t, ids| t.segment_mean_rows(ids[0], vec![0, 2, 0, 2], 4));
            check(&[a.clone()], |t, ids| t.mean_all(ids[0]));
            let logits = random(5, 1, &mut rng);
            // Weight the softmax output so the gradient is not uniform.
            let w = random(5, 1, &mut rng);
            check(&[logits, w], |t, ids| {
                let sm = t.segment_softmax(ids[0], vec![0, 1, 0, 1, 0]);
                t.mul(sm, ids[1])
            });
        }

        #[test]
        fn composite_chain() {
            let mut rng = crate::rng::stream(7, "fd", 3);
            let x = random(5, 3, &mut rng);
            let w1 = random(3, 4, &mut rng);
            let b1 = random(1, 4, &mut rng);
            let w2 = random(4, 1, &mut rng);
            check(&[x, w1, b1, w2], |t, ids| {
                let h = t.matmul(ids[0], ids[1]);
                let h = t.add_row(h, ids[2]);
                let h = t.tanh(h);
                let y = t.matmul(h, ids[3]);
                t.mean_all(y)
            });
        }
    }

    #[test]
    fn softmax_normalises_within_segments() {
        let mut t = Tape::new();
        let logits = t.leaf(array![[0.0], [1.0], [2.0], [3.0], [-1.0]]);
        let sm = t.segment_softmax(logits, vec![0, 0, 1, 1, 0]);
        let v = t.value(sm);
        let s0 = v[(0, 0)] + v[(1, 0)] + v[(4, 0)];
        let s1 = v[(2, 0)] + v[(3, 0)];
        assert!((s0 - 1.0).abs() < 1e-12 && (s1 - 1.0).abs() < 1e-12);
        // Singleton segment would give exactly 1; here check monotonicity.
        assert!(v[(1, 0)] > v[(0, 0)] && v[(0, 0)] > v[(4, 0)]);
    }

    #[test]
    fn tanh_gradient_at_zero_is_one() {
        let mut t = Tape::new();
        let x = t.leaf(array![[0.0]]);
        let y = t.tanh(x);
        let root = t.sum_all(y);
        t.backward(root);
        assert!((t.grad(x)[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unused_branches_get_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0]]);
        let y = t.leaf(array![[3.0, 4.0]]);
        let _dead = t.tanh(y);
        let root = t.sum_all(x);
        t.backward(root);
        assert!(t.grad(y).iter().all(|&g| g == 0.0));
        assert!(t.grad(x).iter().all(|&g| g == 1.0));
    }

    #[test]
    #[should_panic(expected = "before backward")]
    fn grad_before_backward_panics() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0]]);
        let _ = t.grad(x);
    }

    #[test]
    fn scatter_then_gather_round_trips() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let scattered = t.scatter_add_rows(a, vec![3, 1], 4);
        let back = t.gather_rows(scattered, vec![3, 1]);
        assert_eq!(t.value(back), t.value(a));
        // Duplicate targets accumulate.
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0], [10.0]]);
        let s = t.scatter_add_rows(a, vec![0, 0], 2);
        assert_eq!(t.value(s), &array![[11.0], [0.0]]);
    }
}
