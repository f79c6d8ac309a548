//! Reverse-mode differentiation over matrix-valued expressions.
//!
//! A [`Tape`] records the forward computation of one training step as
//! a flat list of matrix nodes. Values are computed eagerly on node
//! creation; [`Tape::backward`] walks the list in reverse and
//! accumulates gradients. The op set is exactly what the model needs
//! (dense products, sparse propagation over a fixed pattern, cosine
//! edges, softmax fusion, the loss heads) rather than a general-purpose
//! autodiff system.
//!
//! Sparse graph values travel the tape as `nnz x 1` column vectors
//! paired with a shared [`CsrStructure`]; the pattern itself is fixed
//! for the step (top-k selection is piecewise constant), while the
//! stored edge values stay differentiable.

use crate::error::{Error, Result};
use crate::numerics::dense::dot;
use crate::numerics::sparse::{spmm_into, CsrStructure, SparseMatrix};
use crate::numerics::DenseMatrix;
use crate::scalar::Scalar;
use std::sync::Arc;

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// Precomputed plan for blending a constant initial graph with the
/// learned graph of the current step (edge-set union).
#[derive(Clone, Debug)]
pub struct BlendPlan<T> {
    /// Union pattern of initial and learned edges.
    pub structure: Arc<CsrStructure>,
    /// `lambda * initial_value` per union edge (0 where absent).
    pub base: Vec<T>,
    /// Union edge -> index into the learned value vector, if present.
    pub learned_map: Vec<Option<usize>>,
    /// `1 - lambda`.
    pub learned_weight: T,
}

enum Op<T> {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    MatmulNt { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    MulElem { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: T },
    AddRowBroadcast { a: NodeId, bias: NodeId },
    Tanh { a: NodeId },
    Exp { a: NodeId },
    Log { a: NodeId },
    Softplus { a: NodeId },
    Neg { a: NodeId },
    RowSoftmax { a: NodeId },
    RowL2Normalize { a: NodeId },
    ScaleRows { a: NodeId, w: NodeId },
    GatherRows { a: NodeId, idx: Arc<Vec<usize>> },
    RowSum { a: NodeId },
    DiagPart { a: NodeId },
    RowwiseDot { a: NodeId, b: NodeId },
    SumAll { a: NodeId },
    MeanAll { a: NodeId },
    Hstack { parts: Vec<NodeId> },
    ColExtract { a: NodeId, col: usize },
    CosinePairs { feats: NodeId, structure: Arc<CsrStructure> },
    EdgeNormalize { vals: NodeId, structure: Arc<CsrStructure> },
    BlendEdges { learned: NodeId, plan: Arc<BlendPlan<T>> },
    SpmmVals { vals: NodeId, structure: Arc<CsrStructure>, h: NodeId },
    SpmmConst { a: Arc<SparseMatrix<T>>, h: NodeId },
}

struct Node<T> {
    value: DenseMatrix<T>,
    op: Op<T>,
}

/// Recorded forward computation; see the module docs.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradient of the scalar root with respect to every reachable node.
pub struct Gradients<T> {
    grads: Vec<Option<DenseMatrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `id`, if the node influences the root.
    pub fn get(&self, id: NodeId) -> Option<&DenseMatrix<T>> {
        self.grads[id.0].as_ref()
    }

    /// Gradient for `id`, zeros when the node does not reach the root.
    pub fn get_or_zeros(&self, id: NodeId, rows: usize, cols: usize) -> DenseMatrix<T> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => DenseMatrix::zeros(rows, cols),
        }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix<T> {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> T {
        debug_assert_eq!(self.value(id).shape(), (1, 1));
        self.value(id)[(0, 0)]
    }

    fn push(&mut self, value: DenseMatrix<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers an input matrix (parameter or constant).
    pub fn leaf(&mut self, value: DenseMatrix<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::Matmul { a, b }))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(v, Op::MatmulNt { a, b }))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose { a })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub { a, b }))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                context: "mul_elem",
                left_rows: self.value(a).rows(),
                left_cols: self.value(a).cols(),
                right_rows: self.value(b).rows(),
                right_cols: self.value(b).cols(),
            });
        }
        let v = DenseMatrix::from_vec(
            self.value(a).rows(),
            self.value(a).cols(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data().iter())
                .map(|(&x, &y)| x * y)
                .collect(),
        )?;
        Ok(self.push(v, Op::MulElem { a, b }))
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale { a, c })
    }

    /// Adds a `1 x d` bias node to every row of `a`.
    pub fn add_row_broadcast(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.value(a).shape();
        if self.value(bias).shape() != (1, cols) {
            return Err(Error::ShapeMismatch {
                context: "add_row_broadcast",
                left_rows: rows,
                left_cols: cols,
                right_rows: self.value(bias).rows(),
                right_cols: self.value(bias).cols(),
            });
        }
        let mut v = self.value(a).clone();
        for i in 0..rows {
            let b = self.value(bias).row(0).to_vec();
            for (x, y) in v.row_mut(i).iter_mut().zip(b.iter()) {
                *x += *y;
            }
        }
        Ok(self.push(v, Op::AddRowBroadcast { a, bias }))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        self.push(v, Op::Tanh { a })
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.exp());
        self.push(v, Op::Exp { a })
    }

    /// Natural log; entries must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x <= T::zero()) {
            return Err(Error::NonFinite { context: "log" });
        }
        let v = self.value(a).map(|x| x.ln());
        Ok(self.push(v, Op::Log { a }))
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus { a })
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        self.push(v, Op::Neg { a })
    }

    /// Softmax along each row (shift-invariant form).
    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let mut v = src.clone();
        for i in 0..src.rows() {
            let row = v.row_mut(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        self.push(v, Op::RowSoftmax { a })
    }

    /// Divides each row by its L2 norm; rejects zero-norm rows with the
    /// offending row index.
    pub fn row_l2_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let src = self.value(a);
        let mut v = src.clone();
        for i in 0..src.rows() {
            let norm = src.row_norm(i);
            if norm <= T::zero() {
                return Err(Error::ZeroNormEmbedding { item: i });
            }
            for x in v.row_mut(i) {
                *x /= norm;
            }
        }
        Ok(self.push(v, Op::RowL2Normalize { a }))
    }

    /// Multiplies row `i` of `a` by `w[i]`, `w` being `n x 1`.
    pub fn scale_rows(&mut self, a: NodeId, w: NodeId) -> Result<NodeId> {
        let (rows, _) = self.value(a).shape();
        if self.value(w).shape() != (rows, 1) {
            return Err(Error::ShapeMismatch {
                context: "scale_rows",
                left_rows: rows,
                left_cols: self.value(a).cols(),
                right_rows: self.value(w).rows(),
                right_cols: self.value(w).cols(),
            });
        }
        let mut v = self.value(a).clone();
        for i in 0..rows {
            let c = self.value(w)[(i, 0)];
            for x in v.row_mut(i) {
                *x *= c;
            }
        }
        Ok(self.push(v, Op::ScaleRows { a, w }))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Arc<Vec<usize>>) -> NodeId {
        let src = self.value(a);
        let mut v = DenseMatrix::zeros(idx.len(), src.cols());
        for (r, &i) in idx.iter().enumerate() {
            v.row_mut(r).copy_from_slice(src.row(i));
        }
        self.push(v, Op::GatherRows { a, idx })
    }

    /// Row sums as an `n x 1` column.
    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let data: Vec<T> = (0..src.rows()).map(|i| src.row(i).iter().copied().sum()).collect();
        let v = DenseMatrix::from_vec(src.rows(), 1, data).unwrap();
        self.push(v, Op::RowSum { a })
    }

    /// Main diagonal of a square matrix as `n x 1`.
    pub fn diag_part(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        debug_assert_eq!(src.rows(), src.cols());
        let data: Vec<T> = (0..src.rows()).map(|i| src[(i, i)]).collect();
        let v = DenseMatrix::from_vec(src.rows(), 1, data).unwrap();
        self.push(v, Op::DiagPart { a })
    }

    /// Per-row inner product of two same-shape matrices, `n x 1`.
    pub fn rowwise_dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                context: "rowwise_dot",
                left_rows: self.value(a).rows(),
                left_cols: self.value(a).cols(),
                right_rows: self.value(b).rows(),
                right_cols: self.value(b).cols(),
            });
        }
        let (rows, _) = self.value(a).shape();
        let data: Vec<T> = (0..rows)
            .map(|i| dot(self.value(a).row(i), self.value(b).row(i)))
            .collect();
        let v = DenseMatrix::from_vec(rows, 1, data).unwrap();
        Ok(self.push(v, Op::RowwiseDot { a, b }))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: T = self.value(a).data().iter().copied().sum();
        let v = DenseMatrix::from_vec(1, 1, vec![s]).unwrap();
        self.push(v, Op::SumAll { a })
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).data().len();
        let s: T = self.value(a).data().iter().copied().sum();
        let v = DenseMatrix::from_vec(1, 1, vec![s / T::from_f64_lossy(n as f64)]).unwrap();
        self.push(v, Op::MeanAll { a })
    }

    /// Concatenates `n x 1` columns into an `n x m` matrix.
    pub fn hstack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).shape() != (rows, 1) {
                return Err(Error::ShapeMismatch {
                    context: "hstack",
                    left_rows: rows,
                    left_cols: 1,
                    right_rows: self.value(p).rows(),
                    right_cols: self.value(p).cols(),
                });
            }
        }
        let mut v = DenseMatrix::zeros(rows, parts.len());
        for (c, &p) in parts.iter().enumerate() {
            for i in 0..rows {
                v[(i, c)] = self.value(p)[(i, 0)];
            }
        }
        Ok(self.push(v, Op::Hstack { parts: parts.to_vec() }))
    }

    /// Extracts column `col` as `n x 1`.
    pub fn col_extract(&mut self, a: NodeId, col: usize) -> NodeId {
        let src = self.value(a);
        let data: Vec<T> = (0..src.rows()).map(|i| src[(i, col)]).collect();
        let v = DenseMatrix::from_vec(src.rows(), 1, data).unwrap();
        self.push(v, Op::ColExtract { a, col })
    }

    /// Cosine similarity of the feature-row pairs named by the edges of
    /// `structure`, as an `nnz x 1` value column. Rows referenced by
    /// any edge must have nonzero norm.
    pub fn cosine_pairs(&mut self, feats: NodeId, structure: Arc<CsrStructure>) -> Result<NodeId> {
        let f = self.value(feats);
        let norms: Vec<T> = (0..f.rows()).map(|i| f.row_norm(i)).collect();
        let mut data = Vec::with_capacity(structure.nnz());
        for e in 0..structure.nnz() {
            let i = structure.edge_rows[e];
            let j = structure.indices[e];
            if norms[i] <= T::zero() {
                return Err(Error::ZeroNormRow { row: i });
            }
            if norms[j] <= T::zero() {
                return Err(Error::ZeroNormRow { row: j });
            }
            data.push(dot(f.row(i), f.row(j)) / (norms[i] * norms[j]));
        }
        let v = DenseMatrix::from_vec(structure.nnz(), 1, data)?;
        Ok(self.push(v, Op::CosinePairs { feats, structure }))
    }

    /// Symmetric degree normalization of edge values over a fixed
    /// pattern: each value is divided by `sqrt(deg_i * deg_j)` where
    /// degrees are row sums of the input values. Negative inputs are
    /// rejected; zero-valued edges stay zero.
    pub fn edge_normalize(&mut self, vals: NodeId, structure: Arc<CsrStructure>) -> Result<NodeId> {
        let v = self.value(vals);
        debug_assert_eq!(v.shape(), (structure.nnz(), 1));
        for e in 0..structure.nnz() {
            if v[(e, 0)] < T::zero() {
                return Err(Error::NegativeValue {
                    row: structure.edge_rows[e],
                    value: v[(e, 0)].into_f64(),
                });
            }
        }
        let deg = edge_row_sums(structure.as_ref(), v);
        let mut data = Vec::with_capacity(structure.nnz());
        for e in 0..structure.nnz() {
            let x = v[(e, 0)];
            if x == T::zero() {
                data.push(T::zero());
                continue;
            }
            let di = deg[structure.edge_rows[e]];
            let dj = deg[structure.indices[e]];
            if dj <= T::zero() {
                // A positive edge into a node whose own row is empty
                // cannot arise from a symmetric similarity.
                return Err(Error::NonFinite {
                    context: "edge_normalize: zero-degree endpoint",
                });
            }
            data.push(x / (di * dj).sqrt());
        }
        let out = DenseMatrix::from_vec(structure.nnz(), 1, data)?;
        Ok(self.push(out, Op::EdgeNormalize { vals, structure }))
    }

    /// Convex blend of a constant initial graph with learned edge
    /// values per a precomputed union plan. Gradient flows only into
    /// the learned side.
    pub fn blend_edges(&mut self, learned: NodeId, plan: Arc<BlendPlan<T>>) -> NodeId {
        let lv = self.value(learned);
        let mut data = plan.base.clone();
        for (e, slot) in plan.learned_map.iter().enumerate() {
            if let Some(le) = slot {
                data[e] += plan.learned_weight * lv[(*le, 0)];
            }
        }
        let v = DenseMatrix::from_vec(plan.structure.nnz(), 1, data).unwrap();
        self.push(v, Op::BlendEdges { learned, plan })
    }

    /// Sparse-dense product where both the edge values and the dense
    /// operand are differentiable; the pattern is fixed.
    pub fn spmm_vals(
        &mut self,
        vals: NodeId,
        structure: Arc<CsrStructure>,
        h: NodeId,
    ) -> Result<NodeId> {
        if structure.cols != self.value(h).rows() {
            return Err(Error::ShapeMismatch {
                context: "spmm_vals",
                left_rows: structure.rows,
                left_cols: structure.cols,
                right_rows: self.value(h).rows(),
                right_cols: self.value(h).cols(),
            });
        }
        debug_assert_eq!(self.value(vals).shape(), (structure.nnz(), 1));
        let mut out = DenseMatrix::zeros(structure.rows, self.value(h).cols());
        spmm_into(
            structure.as_ref(),
            self.value(vals).data(),
            self.value(h),
            &mut out,
        );
        Ok(self.push(out, Op::SpmmVals { vals, structure, h }))
    }

    /// Sparse-dense product with a constant adjacency.
    pub fn spmm_const(&mut self, a: Arc<SparseMatrix<T>>, h: NodeId) -> Result<NodeId> {
        let out = a.spmm(self.value(h))?;
        Ok(self.push(out, Op::SpmmConst { a, h }))
    }

    /// Backpropagates from a scalar (1x1) root node.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        if self.value(root).shape() != (1, 1) {
            return Err(Error::InvalidDimension {
                context: "backward root must be scalar",
                rows: self.value(root).rows(),
                cols: self.value(root).cols(),
            });
        }
        let mut grads: Vec<Option<DenseMatrix<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(DenseMatrix::from_vec(1, 1, vec![T::one()]).unwrap());

        for n in (0..self.nodes.len()).rev() {
            let gout = match grads[n].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate_parents(n, &gout, &mut grads);
            grads[n] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn accumulate_parents(
        &self,
        n: usize,
        gout: &DenseMatrix<T>,
        grads: &mut [Option<DenseMatrix<T>>],
    ) {
        let acc = |grads: &mut [Option<DenseMatrix<T>>], id: NodeId, contrib: DenseMatrix<T>| {
            match &mut grads[id.0] {
                Some(g) => g.axpy(T::one(), &contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let value = |id: NodeId| &self.nodes[id.0].value;

        match &self.nodes[n].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                acc(grads, *a, gout.matmul_nt(value(*b)).unwrap());
                acc(grads, *b, value(*a).matmul_tn(gout).unwrap());
            }
            Op::MatmulNt { a, b } => {
                acc(grads, *a, gout.matmul(value(*b)).unwrap());
                acc(grads, *b, gout.matmul_tn(value(*a)).unwrap());
            }
            Op::Transpose { a } => {
                acc(grads, *a, gout.transpose());
            }
            Op::Add { a, b } => {
                acc(grads, *a, gout.clone());
                acc(grads, *b, gout.clone());
            }
            Op::Sub { a, b } => {
                acc(grads, *a, gout.clone());
                acc(grads, *b, gout.scale(-T::one()));
            }
            Op::MulElem { a, b } => {
                let ga = DenseMatrix::from_vec(
                    gout.rows(),
                    gout.cols(),
                    gout.data()
                        .iter()
                        .zip(value(*b).data().iter())
                        .map(|(&g, &y)| g * y)
                        .collect(),
                )
                .unwrap();
                let gb = DenseMatrix::from_vec(
                    gout.rows(),
                    gout.cols(),
                    gout.data()
                        .iter()
                        .zip(value(*a).data().iter())
                        .map(|(&g, &x)| g * x)
                        .collect(),
                )
                .unwrap();
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Scale { a, c } => {
                acc(grads, *a, gout.scale(*c));
            }
            Op::AddRowBroadcast { a, bias } => {
                acc(grads, *a, gout.clone());
                let mut gb = DenseMatrix::zeros(1, gout.cols());
                for i in 0..gout.rows() {
                    for (d, &g) in gb.row_mut(0).iter_mut().zip(gout.row(i).iter()) {
                        *d += g;
                    }
                }
                acc(grads, *bias, gb);
            }
            Op::Tanh { a } => {
                let y = &self.nodes[n].value;
                let ga = DenseMatrix::from_vec(
                    gout.rows(),
                    gout.cols(),
                    gout.data()
                        .iter()
                        .zip(y.data().iter())
                        .map(|(&g, &t)| g * (T::one() - t * t))
                        .collect(),
                )
                .unwrap();
                acc(grads, *a, ga);
            }
            Op::Exp { a } => {
                let y = &self.nodes[n].value;
                let ga = DenseMatrix::from_vec(
                    gout.rows(),
                    gout.cols(),
                    gout.data()
                        .iter()
                        .zip(y.data().iter())
                        .map(|(&g, &e)| g * e)
                        .collect(),
                )
                .unwrap();
                acc(grads, *a, ga);
            }
            Op::Log { a } => {
                let x = value(*a);
                let ga = DenseMatrix::from_vec(
                    gout.rows(),
                    gout.cols(),
                    gout.data()
                        .iter()
                        .zip(x.data().iter())
                        .map(|(&g, &v)| g / v)
                        .collect(),
                )
                .unwrap();
                acc(grads, *a, ga);
            }
            Op::Softplus { a } => {
                let x = value(*a);
                let ga = DenseMatrix::from_vec(
                    gout.rows(),
                    gout.cols(),
                    gout.data()
                        .iter()
                        .zip(x.data().iter())
                        .map(|(&g, &v)| g * sigmoid(v))
                        .collect(),
                )
                .unwrap();
                acc(grads, *a, ga);
            }
            Op::Neg { a } => {
                acc(grads, *a, gout.scale(-T::one()));
            }
            Op::RowSoftmax { a } => {
                let alpha = &self.nodes[n].value;
                let mut ga = DenseMatrix::zeros(alpha.rows(), alpha.cols());
                for i in 0..alpha.rows() {
                    let inner = dot(gout.row(i), alpha.row(i));
                    for (k, d) in ga.row_mut(i).iter_mut().enumerate() {
                        *d = alpha[(i, k)] * (gout[(i, k)] - inner);
                    }
                }
                acc(grads, *a, ga);
            }
            Op::RowL2Normalize { a } => {
                let x = value(*a);
                let u = &self.nodes[n].value;
                let mut ga = DenseMatrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let norm = x.row_norm(i);
                    let inner = dot(gout.row(i), u.row(i));
                    for (k, d) in ga.row_mut(i).iter_mut().enumerate() {
                        *d = (gout[(i, k)] - inner * u[(i, k)]) / norm;
                    }
                }
                acc(grads, *a, ga);
            }
            Op::ScaleRows { a, w } => {
                let x = value(*a);
                let wv = value(*w);
                let mut ga = DenseMatrix::zeros(x.rows(), x.cols());
                let mut gw = DenseMatrix::zeros(x.rows(), 1);
                for i in 0..x.rows() {
                    let c = wv[(i, 0)];
                    for (k, d) in ga.row_mut(i).iter_mut().enumerate() {
                        *d = c * gout[(i, k)];
                    }
                    gw[(i, 0)] = dot(gout.row(i), x.row(i));
                }
                acc(grads, *a, ga);
                acc(grads, *w, gw);
            }
            Op::GatherRows { a, idx } => {
                let src = value(*a);
                let mut ga = DenseMatrix::zeros(src.rows(), src.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (d, &g) in ga.row_mut(i).iter_mut().zip(gout.row(r).iter()) {
                        *d += g;
                    }
                }
                acc(grads, *a, ga);
            }
            Op::RowSum { a } => {
                let src = value(*a);
                let mut ga = DenseMatrix::zeros(src.rows(), src.cols());
                for i in 0..src.rows() {
                    let g = gout[(i, 0)];
                    for d in ga.row_mut(i) {
                        *d = g;
                    }
                }
                acc(grads, *a, ga);
            }
            Op::DiagPart { a } => {
                let src = value(*a);
                let mut ga = DenseMatrix::zeros(src.rows(), src.cols());
                for i in 0..src.rows() {
                    ga[(i, i)] = gout[(i, 0)];
                }
                acc(grads, *a, ga);
            }
            Op::RowwiseDot { a, b } => {
                let av = value(*a);
                let bv = value(*b);
                let mut ga = DenseMatrix::zeros(av.rows(), av.cols());
                let mut gb = DenseMatrix::zeros(av.rows(), av.cols());
                for i in 0..av.rows() {
                    let g = gout[(i, 0)];
                    for (k, d) in ga.row_mut(i).iter_mut().enumerate() {
                        *d = g * bv[(i, k)];
                    }
                    for (k, d) in gb.row_mut(i).iter_mut().enumerate() {
                        *d = g * av[(i, k)];
                    }
                }
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::SumAll { a } => {
                let src = value(*a);
                let g = gout[(0, 0)];
                let ga = DenseMatrix::from_vec(
                    src.rows(),
                    src.cols(),
                    vec![g; src.data().len()],
                )
                .unwrap();
                acc(grads, *a, ga);
            }
            Op::MeanAll { a } => {
                let src = value(*a);
                let g = gout[(0, 0)] / T::from_f64_lossy(src.data().len() as f64);
                let ga = DenseMatrix::from_vec(
                    src.rows(),
                    src.cols(),
                    vec![g; src.data().len()],
                )
                .unwrap();
                acc(grads, *a, ga);
            }
            Op::Hstack { parts } => {
                for (c, &p) in parts.iter().enumerate() {
                    let rows = self.nodes[n].value.rows();
                    let data: Vec<T> = (0..rows).map(|i| gout[(i, c)]).collect();
                    let gp = DenseMatrix::from_vec(rows, 1, data).unwrap();
                    acc(grads, p, gp);
                }
            }
            Op::ColExtract { a, col } => {
                let src = value(*a);
                let mut ga = DenseMatrix::zeros(src.rows(), src.cols());
                for i in 0..src.rows() {
                    ga[(i, *col)] = gout[(i, 0)];
                }
                acc(grads, *a, ga);
            }
            Op::CosinePairs { feats, structure } => {
                let f = value(*feats);
                let s = &self.nodes[n].value;
                let norms: Vec<T> = (0..f.rows()).map(|i| f.row_norm(i)).collect();
                let mut gf = DenseMatrix::zeros(f.rows(), f.cols());
                for e in 0..structure.nnz() {
                    let g = gout[(e, 0)];
                    if g == T::zero() {
                        continue;
                    }
                    let i = structure.edge_rows[e];
                    let j = structure.indices[e];
                    let (ni, nj) = (norms[i], norms[j]);
                    let se = s[(e, 0)];
                    let inv = T::one() / (ni * nj);
                    for k in 0..f.cols() {
                        gf[(i, k)] += g * (f[(j, k)] * inv - se * f[(i, k)] / (ni * ni));
                        gf[(j, k)] += g * (f[(i, k)] * inv - se * f[(j, k)] / (nj * nj));
                    }
                }
                acc(grads, *feats, gf);
            }
            Op::EdgeNormalize { vals, structure } => {
                let v = value(*vals);
                let nvals = &self.nodes[n].value;
                let deg = edge_row_sums(structure.as_ref(), v);
                // Per-node accumulators for the degree terms:
                //   R[i] = sum over edges e in row i of g_e n_e / deg_i
                //   C[j] = sum over edges e into col j of g_e n_e / deg_j
                let mut r_acc = vec![T::zero(); structure.rows];
                let mut c_acc = vec![T::zero(); structure.rows];
                for e in 0..structure.nnz() {
                    let g = gout[(e, 0)];
                    let ne = nvals[(e, 0)];
                    if g == T::zero() || ne == T::zero() {
                        continue;
                    }
                    let i = structure.edge_rows[e];
                    let j = structure.indices[e];
                    r_acc[i] += g * ne / deg[i];
                    c_acc[j] += g * ne / deg[j];
                }
                let half = T::from_f64_lossy(0.5);
                let mut gv = DenseMatrix::zeros(structure.nnz(), 1);
                for e in 0..structure.nnz() {
                    let i = structure.edge_rows[e];
                    let j = structure.indices[e];
                    let mut g = -half * (r_acc[i] + c_acc[i]);
                    if deg[i] > T::zero() && deg[j] > T::zero() {
                        g += gout[(e, 0)] / (deg[i] * deg[j]).sqrt();
                    }
                    gv[(e, 0)] = g;
                }
                acc(grads, *vals, gv);
            }
            Op::BlendEdges { learned, plan } => {
                let nnz = value(*learned).rows();
                let mut gl = DenseMatrix::zeros(nnz, 1);
                for (e, slot) in plan.learned_map.iter().enumerate() {
                    if let Some(le) = slot {
                        gl[(*le, 0)] += plan.learned_weight * gout[(e, 0)];
                    }
                }
                acc(grads, *learned, gl);
            }
            Op::SpmmVals { vals, structure, h } => {
                let hv = value(*h);
                let vv = value(*vals);
                let mut gvals = DenseMatrix::zeros(structure.nnz(), 1);
                let mut gh = DenseMatrix::zeros(hv.rows(), hv.cols());
                for e in 0..structure.nnz() {
                    let i = structure.edge_rows[e];
                    let j = structure.indices[e];
                    gvals[(e, 0)] = dot(gout.row(i), hv.row(j));
                    let w = vv[(e, 0)];
                    for (d, &g) in gh.row_mut(j).iter_mut().zip(gout.row(i).iter()) {
                        *d += w * g;
                    }
                }
                acc(grads, *vals, gvals);
                acc(grads, *h, gh);
            }
            Op::SpmmConst { a, h } => {
                let hv = value(*h);
                let mut gh = DenseMatrix::zeros(hv.rows(), hv.cols());
                let structure = a.structure();
                for e in 0..structure.nnz() {
                    let i = structure.edge_rows[e];
                    let j = structure.indices[e];
                    let w = a.values()[e];
                    for (d, &g) in gh.row_mut(j).iter_mut().zip(gout.row(i).iter()) {
                        *d += w * g;
                    }
                }
                acc(grads, *h, gh);
            }
        }
    }
}

fn edge_row_sums<T: Scalar>(structure: &CsrStructure, vals: &DenseMatrix<T>) -> Vec<T> {
    let mut deg = vec![T::zero(); structure.rows];
    for e in 0..structure.nnz() {
        deg[structure.edge_rows[e]] += vals[(e, 0)];
    }
    deg
}

/// Stable `ln(1 + e^x)`.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Stable logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
