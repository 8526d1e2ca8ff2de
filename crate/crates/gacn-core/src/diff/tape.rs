//! Reverse-mode automatic differentiation over a flat tape.
//!
//! A [`Tape`] owns every intermediate tensor of one forward computation.
//! Nodes are appended in evaluation order, so a single reverse sweep visits
//! them in valid topological order. Parameters live outside the tape; each
//! step copies them in as leaves and copies gradients back out afterwards.
//!
//! Shape mismatches are contract violations and panic. Non-finite values are
//! detected at op boundaries and poison the tape instead of panicking, so a
//! training step can notice, checkpoint, and abort cleanly.

use std::sync::Arc;

use super::sparse::{PairSupport, SparseMatrix};
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Coordinates this close to a kink (abs/relu at zero, clamp boundary,
/// row-max tie, rsqrt near zero) are flagged so finite-difference checks can
/// skip them.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    Matmul(Var, Var),
    Transpose(Var),
    SpmmConst(usize, Var),
    PairDegrees(usize, Var),
    SpmmPairs(usize, Var, Var),
    GatherRows(Var, usize),
    Sigmoid(Var),
    LogSigmoid(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Relu(Var),
    Clamp(Var, T, T),
    RsqrtOrZero(Var),
    Sum(Var),
    RowMean(Var),
    RowMax(Var, Vec<usize>),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    DotRows(Var, Var),
    ConcatCols(Var, Var),
    Diag(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::SpmmConst(..) => "spmm",
            Op::PairDegrees(..) => "pair_degrees",
            Op::SpmmPairs(..) => "spmm_pairs",
            Op::GatherRows(..) => "gather_rows",
            Op::Sigmoid(..) => "sigmoid",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::Relu(..) => "relu",
            Op::Clamp(..) => "clamp",
            Op::RsqrtOrZero(..) => "rsqrt_or_zero",
            Op::Sum(..) => "sum",
            Op::RowMean(..) => "row_mean",
            Op::RowMax(..) => "row_max",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::DotRows(..) => "dot_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::Diag(..) => "diag",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    sparse: Vec<Arc<SparseMatrix<T>>>,
    supports: Vec<Arc<PairSupport>>,
    index_lists: Vec<Arc<Vec<usize>>>,
    kinks: Vec<(Var, usize)>,
    nonfinite: Option<&'static str>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            sparse: Vec::new(),
            supports: Vec::new(),
            index_lists: Vec::new(),
            kinks: Vec::new(),
            nonfinite: None,
        }
    }

    /// Name of the first op that produced a non-finite value, if any.
    pub fn poisoned(&self) -> Option<&'static str> {
        self.nonfinite
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`.
    /// Zero tensor if the node did not participate.
    pub fn grad(&self, v: Var) -> Vec<T> {
        let node = &self.nodes[v.0];
        match node.value.grad() {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); node.value.len()],
        }
    }

    /// Coordinates of `v`'s value flagged as nondifferentiable during the
    /// forward pass.
    pub fn kink_coords(&self, v: Var) -> Vec<usize> {
        self.kinks
            .iter()
            .filter(|(kv, _)| *kv == v)
            .map(|&(_, c)| c)
            .collect()
    }

    // ---- node construction -------------------------------------------------

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        if self.nonfinite.is_none() && !value.is_finite() {
            self.nonfinite = Some(op.name());
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf: the tensor's `requires_grad` flag decides whether
    /// gradients flow to it.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        let needs = t.requires_grad();
        self.push(t.clone(), Op::Leaf, needs)
    }

    /// Constant leaf; gradients never flow to it.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_scalar(&mut self, x: T) -> Var {
        self.constant(Tensor::scalar(x))
    }

    /// Registers a constant sparse matrix for use with [`Tape::spmm`].
    pub fn sparse(&mut self, m: Arc<SparseMatrix<T>>) -> usize {
        self.sparse.push(m);
        self.sparse.len() - 1
    }

    /// Registers a pair support for [`Tape::pair_degrees`] / [`Tape::spmm_pairs`].
    pub fn support(&mut self, s: Arc<PairSupport>) -> usize {
        self.supports.push(s);
        self.supports.len() - 1
    }

    /// Registers a gather index list for [`Tape::gather_rows`].
    pub fn indices(&mut self, idx: Arc<Vec<usize>>) -> usize {
        self.index_lists.push(idx);
        self.index_lists.len() - 1
    }

    /// The pair support registered under `id`.
    pub fn support_ref(&self, id: usize) -> &Arc<PairSupport> {
        &self.supports[id]
    }

    // ---- elementwise and scalar ops ----------------------------------------

    fn binary_same_shape(&self, a: Var, b: Var, op: &str) -> (usize, usize) {
        let (ra, ca) = self.value(a).shape();
        let (rb, cb) = self.value(b).shape();
        assert!(
            ra == rb && ca == cb,
            "{op}: shape mismatch {ra}x{ca} vs {rb}x{cb}"
        );
        (ra, ca)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.binary_same_shape(a, b, "add");
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(&x, &y)| x + y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::from_vec(r, c, data), Op::Add(a, b), needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.binary_same_shape(a, b, "sub");
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(&x, &y)| x - y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::from_vec(r, c, data), Op::Sub(a, b), needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.binary_same_shape(a, b, "mul");
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::from_vec(r, c, data), Op::Mul(a, b), needs)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let (r, cc) = self.value(a).shape();
        let data = self.value(a).as_slice().iter().map(|&x| x * c).collect();
        let needs = self.needs(a);
        self.push(Tensor::from_vec(r, cc, data), Op::Scale(a, c), needs)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    /// `a + b` where `b` is a 1xM row vector broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.value(a).shape();
        let (rb, cb) = self.value(b).shape();
        assert!(rb == 1 && cb == c, "add_row: expected 1x{c}, got {rb}x{cb}");
        let mut data = self.value(a).as_slice().to_vec();
        let brow = self.value(b).as_slice();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += brow[j];
            }
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::from_vec(r, c, data), Op::AddRow(a, b), needs)
    }

    fn unary<F: Fn(T) -> T>(&mut self, a: Var, op: Op<T>, f: F) -> Var {
        let (r, c) = self.value(a).shape();
        let data = self.value(a).as_slice().iter().map(|&x| f(x)).collect();
        let needs = self.needs(a);
        self.push(Tensor::from_vec(r, c, data), op, needs)
    }

    /// Flags coordinates of `a` where `pred` holds as nondifferentiable.
    fn mark_kinks(&mut self, a: Var, pred: impl Fn(T) -> bool) {
        let marks: Vec<(Var, usize)> = self
            .value(a)
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &x)| pred(x))
            .map(|(i, _)| (a, i))
            .collect();
        self.kinks.extend(marks);
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), stable_sigmoid)
    }

    /// `ln(sigmoid(x))`, computed without intermediate saturation.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSigmoid(a), |x| {
            if x >= T::zero() {
                -(T::one() + (-x).exp()).ln()
            } else {
                x - (T::one() + x.exp()).ln()
            }
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    /// Natural log. Callers clamp anything that can reach zero.
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let margin = T::cast(KINK_MARGIN);
        self.mark_kinks(a, |x| x.abs() <= margin);
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let margin = T::cast(KINK_MARGIN);
        self.mark_kinks(a, |x| x.abs() <= margin);
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        assert!(lo < hi, "clamp: empty interval");
        let margin = T::cast(KINK_MARGIN);
        self.mark_kinks(a, |x| x <= lo + margin || x >= hi - margin);
        self.unary(a, Op::Clamp(a, lo, hi), |x| {
            if x < lo {
                lo
            } else if x > hi {
                hi
            } else {
                x
            }
        })
    }

    /// Clamps into the probability interval used before every logarithm.
    pub fn clamp_prob(&mut self, a: Var) -> Var {
        self.clamp(a, T::PROB_FLOOR, T::PROB_CEIL)
    }

    /// `x^(-1/2)` for positive entries, zero otherwise (zero-degree rows of a
    /// normalized adjacency stay zero).
    pub fn rsqrt_or_zero(&mut self, a: Var) -> Var {
        let margin = T::cast(KINK_MARGIN);
        self.mark_kinks(a, |x| x <= margin);
        self.unary(a, Op::RsqrtOrZero(a), |x| {
            if x > T::zero() {
                x.sqrt().recip()
            } else {
                T::zero()
            }
        })
    }

    // ---- linear algebra -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, ka) = self.value(a).shape();
        let (kb, m) = self.value(b).shape();
        assert_eq!(ka, kb, "matmul: inner dims {ka} vs {kb}");
        let data = matmul_raw(
            self.value(a).as_slice(),
            self.value(b).as_slice(),
            n,
            ka,
            m,
        );
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::from_vec(n, m, data), Op::Matmul(a, b), needs)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        let src = self.value(a).as_slice();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::from_vec(c, r, data), Op::Transpose(a), needs)
    }

    /// Constant sparse matrix times dense variable.
    pub fn spmm(&mut self, sparse_id: usize, d: Var) -> Var {
        let m = Arc::clone(&self.sparse[sparse_id]);
        let (rd, cd) = self.value(d).shape();
        assert_eq!(m.n_cols(), rd, "spmm: {}x{} times {rd}x{cd}", m.n_rows(), m.n_cols());
        let data = m.mul_dense(self.value(d).as_slice(), cd);
        let needs = self.needs(d);
        self.push(
            Tensor::from_vec(m.n_rows(), cd, data),
            Op::SpmmConst(sparse_id, d),
            needs,
        )
    }

    /// Weighted node degrees over a pair support: `deg[i] = sum of vals over
    /// pairs incident to i`. `vals` is an NNZx1 column.
    pub fn pair_degrees(&mut self, support_id: usize, vals: Var) -> Var {
        let s = Arc::clone(&self.supports[support_id]);
        let (rv, cv) = self.value(vals).shape();
        assert!(rv == s.len() && cv == 1, "pair_degrees: expected {}x1, got {rv}x{cv}", s.len());
        let v = self.value(vals).as_slice();
        let mut deg = vec![T::zero(); s.n_nodes()];
        for (e, &(i, j)) in s.pairs().iter().enumerate() {
            deg[i as usize] += v[e];
            deg[j as usize] += v[e];
        }
        let needs = self.needs(vals);
        self.push(
            Tensor::from_vec(s.n_nodes(), 1, deg),
            Op::PairDegrees(support_id, vals),
            needs,
        )
    }

    /// Symmetric weighted adjacency (over a pair support, with variable
    /// values) times a dense variable. Both inputs receive gradients.
    pub fn spmm_pairs(&mut self, support_id: usize, vals: Var, x: Var) -> Var {
        let s = Arc::clone(&self.supports[support_id]);
        let (rv, cv) = self.value(vals).shape();
        assert!(rv == s.len() && cv == 1, "spmm_pairs: expected {}x1 vals, got {rv}x{cv}", s.len());
        let (n, d) = self.value(x).shape();
        assert_eq!(n, s.n_nodes(), "spmm_pairs: node count mismatch");
        let v = self.value(vals).as_slice();
        let xs = self.value(x).as_slice();
        let mut out = vec![T::zero(); n * d];
        for (e, &(i, j)) in s.pairs().iter().enumerate() {
            let (i, j) = (i as usize, j as usize);
            let w = v[e];
            for k in 0..d {
                out[i * d + k] += w * xs[j * d + k];
                out[j * d + k] += w * xs[i * d + k];
            }
        }
        let needs = self.needs(vals) || self.needs(x);
        self.push(
            Tensor::from_vec(n, d, out),
            Op::SpmmPairs(support_id, vals, x),
            needs,
        )
    }

    /// Selects rows of `a` by index (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices_id: usize) -> Var {
        let idx = Arc::clone(&self.index_lists[indices_id]);
        let (r, c) = self.value(a).shape();
        let src = self.value(a).as_slice();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            assert!(i < r, "gather_rows: row {i} out of {r}");
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let needs = self.needs(a);
        self.push(
            Tensor::from_vec(idx.len(), c, data),
            Op::GatherRows(a, indices_id),
            needs,
        )
    }

    // ---- reductions and row ops ----------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).as_slice().iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum(a), needs)
    }

    /// Mean over rows: NxM -> 1xM.
    pub fn row_mean(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        assert!(r > 0, "row_mean of an empty tensor");
        let src = self.value(a).as_slice();
        let inv = T::cast(1.0 / r as f64);
        let mut out = vec![T::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] += src[i * c + j];
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let needs = self.needs(a);
        self.push(Tensor::from_vec(1, c, out), Op::RowMean(a), needs)
    }

    /// Max over rows: NxM -> 1xM. Gradient routes to the first argmax row.
    pub fn row_max(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        assert!(r > 0, "row_max of an empty tensor");
        let mut out = vec![T::zero(); c];
        let mut arg = vec![0usize; c];
        let mut tie_kinks: Vec<(Var, usize)> = Vec::new();
        {
            let src = self.value(a).as_slice();
            for j in 0..c {
                let mut best = src[j];
                let mut best_i = 0usize;
                for i in 1..r {
                    let x = src[i * c + j];
                    if x > best {
                        best = x;
                        best_i = i;
                    }
                }
                out[j] = best;
                arg[j] = best_i;
                // exact ties are nondifferentiable in every tied coordinate
                for i in 0..r {
                    if src[i * c + j] == best && i != best_i {
                        tie_kinks.push((a, best_i * c + j));
                        tie_kinks.push((a, i * c + j));
                    }
                }
            }
        }
        self.kinks.extend(tie_kinks);
        let needs = self.needs(a);
        self.push(Tensor::from_vec(1, c, out), Op::RowMax(a, arg), needs)
    }

    /// Softmax within each row, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        let src = self.value(a).as_slice();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for j in 0..c {
                let e = (row[j] - m).exp();
                data[i * c + j] = e;
                z += e;
            }
            for j in 0..c {
                data[i * c + j] /= z;
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::from_vec(r, c, data), Op::SoftmaxRows(a), needs)
    }

    /// Log-softmax within each row, with max subtraction.
    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        let src = self.value(a).as_slice();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - m).exp()).sum();
            let lse = m + z.ln();
            for j in 0..c {
                data[i * c + j] = row[j] - lse;
            }
        }
        let needs = self.needs(a);
        self.push(Tensor::from_vec(r, c, data), Op::LogSoftmaxRows(a), needs)
    }

    /// Row-wise dot product: (NxD, NxD) -> Nx1.
    pub fn dot_rows(&mut self, a: Var, b: Var) -> Var {
        let (r, c) = self.binary_same_shape(a, b, "dot_rows");
        let xa = self.value(a).as_slice();
        let xb = self.value(b).as_slice();
        let mut out = vec![T::zero(); r];
        for i in 0..r {
            let mut acc = T::zero();
            for j in 0..c {
                acc += xa[i * c + j] * xb[i * c + j];
            }
            out[i] = acc;
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Tensor::from_vec(r, 1, out), Op::DotRows(a, b), needs)
    }

    /// Horizontal concatenation: (NxA, NxB) -> Nx(A+B).
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.value(a).shape();
        let (rb, cb) = self.value(b).shape();
        assert_eq!(ra, rb, "concat: row counts {ra} vs {rb}");
        let xa = self.value(a).as_slice();
        let xb = self.value(b).as_slice();
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(&xa[i * ca..(i + 1) * ca]);
            data.extend_from_slice(&xb[i * cb..(i + 1) * cb]);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(
            Tensor::from_vec(ra, ca + cb, data),
            Op::ConcatCols(a, b),
            needs,
        )
    }

    /// Main diagonal of a square matrix as an Nx1 column.
    pub fn diag(&mut self, a: Var) -> Var {
        let (r, c) = self.value(a).shape();
        assert_eq!(r, c, "diag: matrix must be square, got {r}x{c}");
        let src = self.value(a).as_slice();
        let out: Vec<T> = (0..r).map(|i| src[i * c + i]).collect();
        let needs = self.needs(a);
        self.push(Tensor::from_vec(r, 1, out), Op::Diag(a), needs)
    }

    // ---- backward ------------------------------------------------------------

    /// Accumulates `d target / d node` into every node that needs gradients.
    /// `target` must be scalar-shaped (1x1).
    pub fn backward(&mut self, target: Var) {
        assert_eq!(
            self.nodes[target.0].value.shape(),
            (1, 1),
            "backward target must be a scalar"
        );
        assert!(
            self.nonfinite.is_none(),
            "backward on a poisoned tape (op `{}`)",
            self.nonfinite.unwrap_or("?")
        );
        self.nodes[target.0].value.grad_mut()[0] = T::one();

        for idx in (0..=target.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].value.grad().is_none() {
                continue;
            }
            self.propagate(idx);
        }
    }

    fn grad_of(&self, idx: usize) -> Vec<T> {
        self.nodes[idx]
            .value
            .grad()
            .expect("gradient present")
            .to_vec()
    }

    fn add_grad(&mut self, v: Var, delta: &[T]) {
        if self.nodes[v.0].needs_grad {
            self.nodes[v.0].value.accumulate_grad(delta);
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn propagate(&mut self, idx: usize) {
        let g = self.grad_of(idx);
        // Ops are matched by moving cheap metadata out first; values are read
        // through `self.value` to keep the borrow checker satisfied.
        enum Plan<T> {
            None,
            One(Var, Vec<T>),
            Two(Var, Vec<T>, Var, Vec<T>),
        }
        let plan: Plan<T> = match &self.nodes[idx].op {
            Op::Leaf => Plan::None,
            Op::Add(a, b) => Plan::Two(*a, g.clone(), *b, g.clone()),
            Op::Sub(a, b) => {
                let gneg: Vec<T> = g.iter().map(|&x| -x).collect();
                Plan::Two(*a, g.clone(), *b, gneg)
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let ga: Vec<T> = g
                    .iter()
                    .zip(self.value(b).as_slice())
                    .map(|(&gi, &bi)| gi * bi)
                    .collect();
                let gb: Vec<T> = g
                    .iter()
                    .zip(self.value(a).as_slice())
                    .map(|(&gi, &ai)| gi * ai)
                    .collect();
                Plan::Two(a, ga, b, gb)
            }
            Op::Scale(a, c) => {
                let c = *c;
                Plan::One(*a, g.iter().map(|&x| x * c).collect())
            }
            Op::AddRow(a, b) => {
                let (a, b) = (*a, *b);
                let (r, c) = self.value(a).shape();
                let mut gb = vec![T::zero(); c];
                for i in 0..r {
                    for j in 0..c {
                        gb[j] += g[i * c + j];
                    }
                }
                Plan::Two(a, g.clone(), b, gb)
            }
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let (n, k) = self.value(a).shape();
                let (_, m) = self.value(b).shape();
                let ga = matmul_nt_raw(&g, self.value(b).as_slice(), n, m, k);
                let gb = matmul_tn_raw(self.value(a).as_slice(), &g, n, k, m);
                Plan::Two(a, ga, b, gb)
            }
            Op::Transpose(a) => {
                let a = *a;
                let (r, c) = self.value(a).shape();
                let mut ga = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                Plan::One(a, ga)
            }
            Op::SpmmConst(sid, d) => {
                let (sid, d) = (*sid, *d);
                let cols = self.value(d).cols();
                let gd = self.sparse[sid].mul_dense_transposed(&g, cols);
                Plan::One(d, gd)
            }
            Op::PairDegrees(sid, vals) => {
                let (sid, vals) = (*sid, *vals);
                let s = Arc::clone(&self.supports[sid]);
                let mut gv = vec![T::zero(); s.len()];
                for (e, &(i, j)) in s.pairs().iter().enumerate() {
                    gv[e] = g[i as usize] + g[j as usize];
                }
                Plan::One(vals, gv)
            }
            Op::SpmmPairs(sid, vals, x) => {
                let (sid, vals, x) = (*sid, *vals, *x);
                let s = Arc::clone(&self.supports[sid]);
                let d = self.value(x).cols();
                let v = self.value(vals).as_slice().to_vec();
                let xs = self.value(x).as_slice().to_vec();
                let mut gv = vec![T::zero(); s.len()];
                let mut gx = vec![T::zero(); xs.len()];
                for (e, &(i, j)) in s.pairs().iter().enumerate() {
                    let (i, j) = (i as usize, j as usize);
                    let mut acc = T::zero();
                    for k in 0..d {
                        acc += g[i * d + k] * xs[j * d + k] + g[j * d + k] * xs[i * d + k];
                        gx[j * d + k] += v[e] * g[i * d + k];
                        gx[i * d + k] += v[e] * g[j * d + k];
                    }
                    gv[e] = acc;
                }
                Plan::Two(vals, gv, x, gx)
            }
            Op::GatherRows(a, iid) => {
                let (a, iid) = (*a, *iid);
                let idxs = Arc::clone(&self.index_lists[iid]);
                let (r, c) = self.value(a).shape();
                let mut ga = vec![T::zero(); r * c];
                for (row, &i) in idxs.iter().enumerate() {
                    for j in 0..c {
                        ga[i * c + j] += g[row * c + j];
                    }
                }
                Plan::One(a, ga)
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let ga = self.nodes[idx]
                    .value
                    .as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(&s, &gi)| gi * s * (T::one() - s))
                    .collect();
                Plan::One(a, ga)
            }
            Op::LogSigmoid(a) => {
                let a = *a;
                let ga = self
                    .value(a)
                    .as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(&x, &gi)| gi * (T::one() - stable_sigmoid(x)))
                    .collect();
                Plan::One(a, ga)
            }
            Op::Exp(a) => {
                let a = *a;
                let ga = self.nodes[idx]
                    .value
                    .as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(&e, &gi)| gi * e)
                    .collect();
                Plan::One(a, ga)
            }
            Op::Log(a) => {
                let a = *a;
                let ga = self
                    .value(a)
                    .as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(&x, &gi)| gi / x)
                    .collect();
                Plan::One(a, ga)
            }
            Op::Abs(a) => {
                let a = *a;
                let ga = self
                    .value(a)
                    .as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(&x, &gi)| {
                        if x > T::zero() {
                            gi
                        } else if x < T::zero() {
                            -gi
                        } else {
                            T::zero() // subgradient 0 at the kink
                        }
                    })
                    .collect();
                Plan::One(a, ga)
            }
            Op::Relu(a) => {
                let a = *a;
                let ga = self
                    .value(a)
                    .as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(&x, &gi)| if x > T::zero() { gi } else { T::zero() })
                    .collect();
                Plan::One(a, ga)
            }
            Op::Clamp(a, lo, hi) => {
                let (a, lo, hi) = (*a, *lo, *hi);
                let ga = self
                    .value(a)
                    .as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(&x, &gi)| if x > lo && x < hi { gi } else { T::zero() })
                    .collect();
                Plan::One(a, ga)
            }
            Op::RsqrtOrZero(a) => {
                let a = *a;
                let half = T::cast(0.5);
                let ga = self
                    .value(a)
                    .as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(&x, &gi)| {
                        if x > T::zero() {
                            -gi * half / (x * x.sqrt())
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                Plan::One(a, ga)
            }
            Op::Sum(a) => {
                let a = *a;
                let n = self.value(a).len();
                Plan::One(a, vec![g[0]; n])
            }
            Op::RowMean(a) => {
                let a = *a;
                let (r, c) = self.value(a).shape();
                let inv = T::cast(1.0 / r as f64);
                let mut ga = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j] * inv;
                    }
                }
                Plan::One(a, ga)
            }
            Op::RowMax(a, arg) => {
                let a = *a;
                let arg = arg.clone();
                let (r, c) = self.value(a).shape();
                let mut ga = vec![T::zero(); r * c];
                for j in 0..c {
                    ga[arg[j] * c + j] = g[j];
                }
                Plan::One(a, ga)
            }
            Op::SoftmaxRows(a) => {
                let a = *a;
                let (r, c) = self.value(a).shape();
                let s = self.nodes[idx].value.as_slice();
                let mut ga = vec![T::zero(); r * c];
                for i in 0..r {
                    let mut dot = T::zero();
                    for j in 0..c {
                        dot += g[i * c + j] * s[i * c + j];
                    }
                    for j in 0..c {
                        ga[i * c + j] = s[i * c + j] * (g[i * c + j] - dot);
                    }
                }
                Plan::One(a, ga)
            }
            Op::LogSoftmaxRows(a) => {
                let a = *a;
                let (r, c) = self.value(a).shape();
                let lsm = self.nodes[idx].value.as_slice();
                let mut ga = vec![T::zero(); r * c];
                for i in 0..r {
                    let mut gsum = T::zero();
                    for j in 0..c {
                        gsum += g[i * c + j];
                    }
                    for j in 0..c {
                        ga[i * c + j] = g[i * c + j] - lsm[i * c + j].exp() * gsum;
                    }
                }
                Plan::One(a, ga)
            }
            Op::DotRows(a, b) => {
                let (a, b) = (*a, *b);
                let (r, c) = self.value(a).shape();
                let xa = self.value(a).as_slice().to_vec();
                let xb = self.value(b).as_slice().to_vec();
                let mut ga = vec![T::zero(); r * c];
                let mut gb = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[i] * xb[i * c + j];
                        gb[i * c + j] = g[i] * xa[i * c + j];
                    }
                }
                Plan::Two(a, ga, b, gb)
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let (r, ca) = self.value(a).shape();
                let cb = self.value(b).cols();
                let mut ga = vec![T::zero(); r * ca];
                let mut gb = vec![T::zero(); r * cb];
                for i in 0..r {
                    ga[i * ca..(i + 1) * ca].copy_from_slice(&g[i * (ca + cb)..i * (ca + cb) + ca]);
                    gb[i * cb..(i + 1) * cb]
                        .copy_from_slice(&g[i * (ca + cb) + ca..(i + 1) * (ca + cb)]);
                }
                Plan::Two(a, ga, b, gb)
            }
            Op::Diag(a) => {
                let a = *a;
                let (r, c) = self.value(a).shape();
                let mut ga = vec![T::zero(); r * c];
                for i in 0..r {
                    ga[i * c + i] = g[i];
                }
                Plan::One(a, ga)
            }
        };
        match plan {
            Plan::None => {}
            Plan::One(a, ga) => self.add_grad(a, &ga),
            Plan::Two(a, ga, b, gb) => {
                self.add_grad(a, &ga);
                self.add_grad(b, &gb);
            }
        }
    }
}

fn stable_sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `a (n x k) * b (k x m)`.
fn matmul_raw<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * m..(kk + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (n x m) * b^T (m x k)` where `b` is stored k x m.
fn matmul_nt_raw<T: Scalar>(a: &[T], b: &[T], n: usize, m: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    for i in 0..n {
        let arow = &a[i * m..(i + 1) * m];
        for kk in 0..k {
            let brow = &b[kk * m..(kk + 1) * m];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * k + kk] = acc;
        }
    }
    out
}

/// `a^T (k x n) * b (n x m)` where `a` is stored n x k.
fn matmul_tn_raw<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (kk, &av) in arow.iter().enumerate() {
            let orow = &mut out[kk * m..(kk + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}
