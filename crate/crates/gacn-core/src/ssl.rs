//! Self-supervised objectives for the encoder: the graph contrastive loss,
//! BPR pairwise ranking, and their weighted combination.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::diff::{Tape, Tensor, Var};
use crate::graph::Graph;
use crate::rng::below;
use crate::scalar::Scalar;

/// Contrastive loss between two views' node representations:
/// `-sum_v log( exp(dp_v . dg_v / tau) / sum_u exp(dp_u . dg_v / tau) )`.
/// Dot products are unnormalized; every node serves as a negative.
pub fn contrastive_loss<T: Scalar>(tape: &mut Tape<T>, dp: Var, dg: Var, tau_f: T) -> Var {
    assert!(tau_f > T::zero(), "tau_f must be positive");
    let (n, d) = tape.value(dp).shape();
    let (ng, dg_cols) = tape.value(dg).shape();
    assert!(n == ng && d == dg_cols, "contrastive_loss: view shapes differ");
    let dpt = tape.transpose(dp);
    let logits = tape.matmul(dg, dpt); // logits[v][u] = dp_u . dg_v
    let logits = tape.scale(logits, tau_f.recip());
    let lsm = tape.log_softmax_rows(logits);
    let matched = tape.diag(lsm);
    let s = tape.sum(matched);
    tape.neg(s)
}

/// Contrastive loss with a sampled negative pool instead of all nodes: the
/// denominator runs over the pool plus the matching node itself. Used where
/// a full softmax per node is infeasible.
pub fn contrastive_loss_pooled<T: Scalar>(
    tape: &mut Tape<T>,
    dp: Var,
    dg: Var,
    tau_f: T,
    pool: &[usize],
) -> Var {
    assert!(tau_f > T::zero(), "tau_f must be positive");
    assert!(!pool.is_empty(), "negative pool must be non-empty");
    let (n, _) = tape.value(dp).shape();
    let pid = tape.indices(Arc::new(pool.to_vec()));
    let negs = tape.gather_rows(dp, pid);
    let negst = tape.transpose(negs);
    let logits = tape.matmul(dg, negst);
    let logits = tape.scale(logits, tau_f.recip());
    let pos = tape.dot_rows(dp, dg);
    let pos = tape.scale(pos, tau_f.recip());
    let full = tape.concat(logits, pos);
    let lsm = tape.log_softmax_rows(full);
    let mut mask = Tensor::zeros(n, pool.len() + 1);
    for i in 0..n {
        mask.set(i, pool.len(), T::one());
    }
    let m = tape.constant(mask);
    let picked = tape.mul(lsm, m);
    let s = tape.sum(picked);
    tape.neg(s)
}

/// BPR training triples `(anchor, positive, negative)`: `(anchor, positive)`
/// is a train edge, `(anchor, negative)` is not.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripleBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl TripleBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

const NEGATIVE_TRIES: usize = 100;

/// Uniformly samples `count` triples from the graph's edges, rejecting
/// negatives until `(anchor, k)` is a non-edge. Anchors adjacent to every
/// other node are skipped after 100 rejections.
pub fn sample_triples(g: &Graph, count: usize, rng: &mut ChaCha8Rng) -> TripleBatch {
    assert!(g.n_edges() >= 1, "triple sampling needs at least one edge");
    let n = g.n_nodes();
    let mut batch = TripleBatch::default();
    let mut skipped = 0usize;
    for _ in 0..count {
        let e = below(rng, g.n_edges());
        let (a, b) = g.edges()[e];
        let (anchor, pos) = if below(rng, 2) == 0 { (a, b) } else { (b, a) };
        let mut found = None;
        for _ in 0..NEGATIVE_TRIES {
            let k = below(rng, n) as u32;
            if k != anchor && !g.has_edge(anchor, k) {
                found = Some(k);
                break;
            }
        }
        match found {
            Some(k) => {
                batch.anchors.push(anchor as usize);
                batch.positives.push(pos as usize);
                batch.negatives.push(k as usize);
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::debug!("triple sampling skipped {skipped} anchor(s) without negatives");
    }
    batch
}

/// `-(1/|O|) sum log sigmoid(d_a . d_p - d_a . d_n)` over the batch.
/// Panics on an empty batch.
pub fn bpr_loss<T: Scalar>(tape: &mut Tape<T>, node_repr: Var, batch: &TripleBatch) -> Var {
    assert!(!batch.is_empty(), "bpr_loss: empty triple batch");
    let aid = tape.indices(Arc::new(batch.anchors.clone()));
    let pid = tape.indices(Arc::new(batch.positives.clone()));
    let nid = tape.indices(Arc::new(batch.negatives.clone()));
    let da = tape.gather_rows(node_repr, aid);
    let dp = tape.gather_rows(node_repr, pid);
    let dn = tape.gather_rows(node_repr, nid);
    let pos = tape.dot_rows(da, dp);
    let neg = tape.dot_rows(da, dn);
    let gap = tape.sub(pos, neg);
    let ls = tape.log_sigmoid(gap);
    let s = tape.sum(ls);
    tape.scale(s, -T::cast(1.0 / batch.len() as f64))
}

/// `lambda_gcl * gcl + lambda_bpr * bpr`.
pub fn ssl_loss<T: Scalar>(
    tape: &mut Tape<T>,
    gcl: Var,
    bpr: Var,
    lambda_gcl: T,
    lambda_bpr: T,
) -> Var {
    let a = tape.scale(gcl, lambda_gcl);
    let b = tape.scale(bpr, lambda_bpr);
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{gradient_check, GradCheck};
    use rand_chacha::rand_core::SeedableRng;
    use std::f64::consts::{E, LN_2};

    #[test]
    fn single_node_contrastive_loss_is_zero() {
        let mut tape: Tape<f64> = Tape::new();
        let dp = tape.constant(Tensor::from_rows(&[vec![0.3, -0.7]]));
        let loss = contrastive_loss(&mut tape, dp, dp, 1.0);
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn orthonormal_two_node_value() {
        let mut tape: Tape<f64> = Tape::new();
        let eye = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let loss = contrastive_loss(&mut tape, eye, eye, 1.0);
        let expect = 2.0 * (-(E / (E + 1.0)).ln());
        assert!((tape.value(loss).item() - expect).abs() < 1e-12);
        assert!((tape.value(loss).item() - 0.6265233750364456).abs() < 1e-10);
    }

    #[test]
    fn identical_rows_give_log_n_per_node() {
        let mut tape: Tape<f64> = Tape::new();
        let n = 5;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![0.4, 1.1, -0.2]).collect();
        let x = tape.constant(Tensor::from_rows(&rows));
        let loss = contrastive_loss(&mut tape, x, x, 0.7);
        let expect = n as f64 * (n as f64).ln();
        assert!((tape.value(loss).item() - expect).abs() < 1e-10);
    }

    #[test]
    fn contrastive_loss_is_nonnegative_and_vanishes_when_aligned() {
        let mut tape: Tape<f64> = Tape::new();
        // strongly scaled orthogonal rows: matching softmax mass goes to 1
        let big = 60.0;
        let x = tape.constant(Tensor::from_rows(&[
            vec![big, 0.0],
            vec![0.0, big],
        ]));
        let loss = contrastive_loss(&mut tape, x, x, 1.0);
        assert!(tape.value(loss).item() >= 0.0);
        assert!(tape.value(loss).item() < 1e-9);
    }

    #[test]
    fn contrastive_invariant_under_simultaneous_row_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dp = Tensor::<f64>::randn(6, 3, 1.0, &mut rng);
        let dg = Tensor::<f64>::randn(6, 3, 1.0, &mut rng);
        let eval = |a: &Tensor<f64>, b: &Tensor<f64>| {
            let mut tape = Tape::new();
            let va = tape.constant(a.clone());
            let vb = tape.constant(b.clone());
            let l = contrastive_loss(&mut tape, va, vb, 0.5);
            tape.value(l).item()
        };
        let base = eval(&dp, &dg);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let apply = |t: &Tensor<f64>| {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| t.row(i).to_vec()).collect();
            Tensor::from_rows(&rows)
        };
        let permuted = eval(&apply(&dp), &apply(&dg));
        assert!((base - permuted).abs() < 1e-10);
    }

    #[test]
    fn pooled_variant_tracks_full_loss_when_pool_is_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dp = Tensor::<f64>::randn(5, 3, 1.0, &mut rng);
        let dg = Tensor::<f64>::randn(5, 3, 1.0, &mut rng);
        let mut tape = Tape::new();
        let va = tape.constant(dp.clone());
        let vb = tape.constant(dg.clone());
        let full = contrastive_loss(&mut tape, va, vb, 0.5);
        // pool = all nodes: denominator gains one extra copy of the positive,
        // so the pooled loss upper-bounds the full loss but stays close
        let pooled = contrastive_loss_pooled(&mut tape, va, vb, 0.5, &[0, 1, 2, 3, 4]);
        let (f, p) = (tape.value(full).item(), tape.value(pooled).item());
        assert!(p >= f);
        assert!(p - f < 5.0 * LN_2);
    }

    #[test]
    fn two_node_graph_has_no_negative_so_triples_skip() {
        let g = Graph::from_pairs(2, &[(0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = sample_triples(&g, 1, &mut rng);
        assert!(batch.is_empty());
    }

    #[test]
    fn unique_negative_is_forced() {
        // triangle 0-1-2 plus isolated node 3
        let g = Graph::from_pairs(4, &[(0, 1), (0, 2), (1, 2)]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = sample_triples(&g, 32, &mut rng);
        assert_eq!(batch.len(), 32);
        assert!(batch.negatives.iter().all(|&k| k == 3));
    }

    #[test]
    fn triple_sampling_is_deterministic() {
        let g = Graph::from_pairs(8, &[(0, 1), (1, 2), (2, 3), (4, 5), (6, 7)]);
        let a = sample_triples(&g, 16, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_triples(&g, 16, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        for t in 0..a.len() {
            assert!(g.has_edge(a.anchors[t] as u32, a.positives[t] as u32));
            assert!(!g.has_edge(a.anchors[t] as u32, a.negatives[t] as u32));
        }
    }

    #[test]
    fn bpr_at_zero_gap_is_ln_two() {
        let mut tape: Tape<f64> = Tape::new();
        let repr = tape.constant(Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ]));
        // anchor 0: pos 1, neg 2 have identical representations
        let batch = TripleBatch {
            anchors: vec![0],
            positives: vec![1],
            negatives: vec![2],
        };
        let loss = bpr_loss(&mut tape, repr, &batch);
        assert!((tape.value(loss).item() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn bpr_saturates_toward_zero_and_grows_linearly() {
        let eval_gap = |gap: f64| {
            let mut tape: Tape<f64> = Tape::new();
            let repr = tape.constant(Tensor::from_rows(&[
                vec![1.0],
                vec![gap],
                vec![0.0],
            ]));
            let batch = TripleBatch {
                anchors: vec![0],
                positives: vec![1],
                negatives: vec![2],
            };
            let l = bpr_loss(&mut tape, repr, &batch);
            tape.value(l).item()
        };
        assert!(eval_gap(40.0) < 1e-15);
        // -log sigmoid(-x) ~ x for large x: linear growth in the gap magnitude
        let l10 = eval_gap(-10.0);
        let l20 = eval_gap(-20.0);
        assert!((l20 - l10 - 10.0).abs() < 1e-3);
    }

    #[test]
    fn bpr_strictly_decreases_as_a_gap_widens() {
        let mut prev = f64::INFINITY;
        for gap in [-1.0, 0.0, 0.5, 2.0, 5.0] {
            let mut tape: Tape<f64> = Tape::new();
            let repr = tape.constant(Tensor::from_rows(&[
                vec![1.0],
                vec![gap],
                vec![0.0],
            ]));
            let batch = TripleBatch {
                anchors: vec![0],
                positives: vec![1],
                negatives: vec![2],
            };
            let l = bpr_loss(&mut tape, repr, &batch);
            let v = tape.value(l).item();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    #[should_panic(expected = "empty triple batch")]
    fn bpr_rejects_empty_batches() {
        let mut tape: Tape<f64> = Tape::new();
        let repr = tape.constant(Tensor::zeros(2, 2));
        let _ = bpr_loss(&mut tape, repr, &TripleBatch::default());
    }

    #[test]
    fn ssl_loss_combinations() {
        let mut tape: Tape<f64> = Tape::new();
        let gcl = tape.constant_scalar(2.0);
        let bpr = tape.constant_scalar(4.0);
        let a = ssl_loss(&mut tape, gcl, bpr, 1.0, 0.0);
        assert_eq!(tape.value(a).item(), 2.0);
        let b = ssl_loss(&mut tape, gcl, bpr, 0.0, 1.0);
        assert_eq!(tape.value(b).item(), 4.0);
        let c = ssl_loss(&mut tape, gcl, bpr, 0.5, 0.5);
        assert_eq!(tape.value(c).item(), 3.0);
    }

    #[test]
    fn ssl_losses_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let dp = Tensor::<f64>::randn(6, 4, 1.0, &mut rng);
        let dg = Tensor::<f64>::randn(6, 4, 1.0, &mut rng);
        let batch = TripleBatch {
            anchors: vec![0, 2, 4],
            positives: vec![1, 3, 5],
            negatives: vec![5, 0, 2],
        };
        let report = gradient_check(&GradCheck::default(), &[dp, dg], move |tape, vars| {
            let gcl = contrastive_loss(tape, vars[0], vars[1], 0.5);
            let bpr = bpr_loss(tape, vars[0], &batch);
            ssl_loss(tape, gcl, bpr, 1.0, 0.5)
        });
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }
}
