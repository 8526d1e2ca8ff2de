//! The view generator: learnable edge weights over the support
//! `edges ∪ candidates`, relaxed Bernoulli view sampling, and the structural
//! regularization losses.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::diff::{PairSupport, SparseMatrix, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{CandidateSet, Graph};
use crate::rng::uniform01;
use crate::scalar::Scalar;

/// Learnable generator state. The support stores the graph's edges first and
/// the candidate non-edges after them, one weight per unordered pair; pairs
/// outside the support always have probability zero.
#[derive(Debug, Clone)]
pub struct GeneratorParams<T> {
    support: Arc<PairSupport>,
    n_edges: usize,
    w: Tensor<T>,
    tau_g: T,
    lambda_g: T,
    gamma: T,
}

/// A weighted view over the generator support: one clamped probability per
/// pair, plus the identifier of the uniform-noise draw that produced it.
#[derive(Debug, Clone)]
pub struct RelaxedView<T> {
    pub support: Arc<PairSupport>,
    pub n_edges: usize,
    pub probs: Vec<T>,
    pub noise_seed: u64,
}

impl<T: Scalar> GeneratorParams<T> {
    /// Initializes the weights so the expected generated view holds
    /// `lambda_g * |E|` edges, a `gamma` fraction of them new: existing edges
    /// start at `(1-gamma) * lambda_g` and candidates at
    /// `gamma * lambda_g * |E| / |C|`.
    pub fn init(
        g: &Graph,
        candidates: &CandidateSet,
        lambda_g: T,
        gamma: T,
        tau_g: T,
    ) -> Result<Self> {
        assert!(tau_g > T::zero() && tau_g <= T::one(), "tau_g must lie in (0, 1]");
        if gamma > T::zero() && candidates.is_empty() {
            return Err(Error::Config(
                "gamma > 0 requires a non-empty candidate set".into(),
            ));
        }
        let mut pairs = g.edges().to_vec();
        pairs.extend_from_slice(candidates.pairs());
        let support = Arc::new(PairSupport::new(g.n_nodes(), pairs));
        let n_edges = g.n_edges();

        let w_edge = (T::one() - gamma) * lambda_g;
        let w_cand = if candidates.is_empty() {
            T::zero()
        } else {
            gamma * lambda_g * T::cast(n_edges as f64) / T::cast(candidates.len() as f64)
        };
        let mut vals = vec![w_edge; n_edges];
        vals.extend(std::iter::repeat(w_cand).take(candidates.len()));
        let mut w = Tensor::from_vec(support.len(), 1, vals);
        w.set_requires_grad(true);
        Ok(Self {
            support,
            n_edges,
            w,
            tau_g,
            lambda_g,
            gamma,
        })
    }

    pub fn support(&self) -> &Arc<PairSupport> {
        &self.support
    }

    /// Number of graph edges at the front of the support.
    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn n_candidates(&self) -> usize {
        self.support.len() - self.n_edges
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut Tensor<T> {
        &mut self.w
    }

    pub fn tau_g(&self) -> T {
        self.tau_g
    }

    pub fn lambda_g(&self) -> T {
        self.lambda_g
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// Constant 0/1 column with ones on candidate pairs; the `(1 - A)` mask
    /// of the new-edge loss.
    pub fn candidate_mask(&self) -> Tensor<T> {
        let mut m = vec![T::zero(); self.support.len()];
        for v in m.iter_mut().skip(self.n_edges) {
            *v = T::one();
        }
        Tensor::from_vec(self.support.len(), 1, m)
    }

    /// Draws fresh uniform noise, one value per support pair.
    pub fn sample_noise(&self, rng: &mut ChaCha8Rng) -> Vec<T> {
        (0..self.support.len())
            .map(|_| T::cast(uniform01(rng)))
            .collect()
    }

    /// Samples a detached relaxed view: `p = sigmoid((w - x) / tau_g)`,
    /// clamped into the open probability interval.
    pub fn sample_view(&self, rng: &mut ChaCha8Rng, noise_seed: u64) -> RelaxedView<T> {
        let noise = self.sample_noise(rng);
        let mut tape = Tape::new();
        let w = tape.constant(self.w.clone());
        let p = relaxed_probs(&mut tape, w, &noise, self.tau_g);
        RelaxedView {
            support: Arc::clone(&self.support),
            n_edges: self.n_edges,
            probs: tape.value(p).as_slice().to_vec(),
            noise_seed,
        }
    }
}

/// On-tape relaxed Bernoulli probabilities for a weight variable and fixed
/// noise; differentiable with respect to the weights.
pub fn relaxed_probs<T: Scalar>(tape: &mut Tape<T>, w: Var, noise: &[T], tau_g: T) -> Var {
    let n = noise.len();
    let x = tape.constant(Tensor::from_vec(n, 1, noise.to_vec()));
    let diff = tape.sub(w, x);
    let scaled = tape.scale(diff, tau_g.recip());
    let s = tape.sigmoid(scaled);
    tape.clamp_prob(s)
}

/// `| lambda_g * |E| - sum(p) |`, summed once per unordered pair.
pub fn edge_count_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    probs: Var,
    n_graph_edges: usize,
    lambda_g: T,
) -> Var {
    let target = lambda_g * T::cast(n_graph_edges as f64);
    let total = tape.sum(probs);
    let t = tape.constant_scalar(target);
    let diff = tape.sub(t, total);
    tape.abs(diff)
}

/// Total relaxed mass on candidate (non-edge) pairs.
pub fn new_edge_loss_on_tape<T: Scalar>(tape: &mut Tape<T>, probs: Var, candidate_mask: Var) -> Var {
    let masked = tape.mul(probs, candidate_mask);
    tape.sum(masked)
}

/// `lambda_cnt * L_cnt + lambda_new * L_new`.
pub fn regularization_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    cnt: Var,
    new: Var,
    lambda_cnt: T,
    lambda_new: T,
) -> Var {
    let a = tape.scale(cnt, lambda_cnt);
    let b = tape.scale(new, lambda_new);
    tape.add(a, b)
}

/// Detached edge count loss of a sampled view.
pub fn edge_count_loss<T: Scalar>(view: &RelaxedView<T>, lambda_g: T) -> T {
    let total: T = view.probs.iter().copied().sum();
    (lambda_g * T::cast(view.n_edges as f64) - total).abs()
}

/// Detached new-edge loss of a sampled view.
pub fn new_edge_loss<T: Scalar>(view: &RelaxedView<T>) -> T {
    view.probs[view.n_edges..].iter().copied().sum()
}

/// Detached combination of the two regularizers.
pub fn regularization_loss<T: Scalar>(cnt: T, new: T, lambda_cnt: T, lambda_new: T) -> T {
    lambda_cnt * cnt + lambda_new * new
}

/// The view as a symmetric weighted adjacency, detached from any tape.
pub fn view_to_adjacency<T: Scalar>(view: &RelaxedView<T>) -> SparseMatrix<T> {
    view.support.to_sparse(&view.probs)
}

/// Counting statistics of a sampled view at a probability threshold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewStats {
    /// Pairs with `p >= threshold` (existing edges and new edges together).
    pub edges: usize,
    /// Candidate pairs with `p >= threshold`.
    pub new_edges: usize,
    /// New-edge endpoint counts per degree decile (bucket 9 = highest
    /// degrees); each counted new edge contributes to both endpoints' buckets.
    pub bucket_new_counts: Vec<usize>,
}

/// Thresholded counts of a view, split into existing and new edges, with a
/// per-degree-decile histogram of where the new edges attach.
pub fn view_statistics<T: Scalar>(view: &RelaxedView<T>, g: &Graph, threshold: T) -> ViewStats {
    assert!(
        threshold > T::zero() && threshold < T::one(),
        "threshold must lie in (0, 1)"
    );
    let buckets = degree_deciles(g);
    let mut stats = ViewStats {
        edges: 0,
        new_edges: 0,
        bucket_new_counts: vec![0; 10],
    };
    for (e, &p) in view.probs.iter().enumerate() {
        if p < threshold {
            continue;
        }
        stats.edges += 1;
        if e >= view.n_edges {
            stats.new_edges += 1;
            let (i, j) = view.support.pairs()[e];
            stats.bucket_new_counts[buckets[i as usize]] += 1;
            stats.bucket_new_counts[buckets[j as usize]] += 1;
        }
    }
    stats
}

/// Decile bucket per node under the graph's degree ordering (ties by id);
/// bucket 9 holds the highest-degree nodes.
pub fn degree_deciles(g: &Graph) -> Vec<usize> {
    let n = g.n_nodes();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by_key(|&v| (g.degree(v as usize), v));
    let mut bucket = vec![0usize; n];
    for (rank, &v) in order.iter().enumerate() {
        bucket[v as usize] = (rank * 10 / n).min(9);
    }
    bucket
}
