//! Embedding propagation over a (possibly weighted) adjacency.
//!
//! The encoder is parameter-free apart from the embedding table: layer `l`
//! multiplies layer `l-1` by the symmetrically normalized adjacency, and the
//! readout is the arithmetic mean of all layer representations, layer 0
//! included. Relaxed generated views enter as weighted adjacency through the
//! same normalization, which keeps the path from edge weights to the readout
//! differentiable.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::diff::{PairSupport, SparseMatrix, Tape, Tensor, Var};
use crate::graph::FeatureMatrix;
use crate::scalar::Scalar;

/// The trainable per-node embedding table.
#[derive(Debug, Clone)]
pub struct EmbeddingTable<T> {
    table: Tensor<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Random-normal initialization with standard deviation 0.1.
    pub fn init_random(n_nodes: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut table = Tensor::randn(n_nodes, dim, T::cast(0.1), rng);
        table.set_requires_grad(true);
        Self { table }
    }

    /// Initializes the table as a random linear projection of node features
    /// down to `dim`. The projection is drawn once; afterwards the table
    /// itself is the trainable parameter.
    pub fn init_from_features(features: &FeatureMatrix, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let f = features.dim;
        let n = features.data.len() / f;
        let proj = Tensor::<T>::randn(f, dim, T::cast(1.0 / (f as f64).sqrt()), rng);
        let mut data = vec![T::zero(); n * dim];
        for i in 0..n {
            for k in 0..f {
                let x = T::cast(features.data[i * f + k]);
                if x == T::zero() {
                    continue;
                }
                for d in 0..dim {
                    data[i * dim + d] += x * proj.get(k, d);
                }
            }
        }
        let mut table = Tensor::from_vec(n, dim, data);
        table.set_requires_grad(true);
        Self { table }
    }

    pub fn from_tensor(mut table: Tensor<T>) -> Self {
        table.set_requires_grad(true);
        Self { table }
    }

    pub fn n_nodes(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.table
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor<T> {
        &mut self.table
    }
}

/// Node representations per layer plus the mean readout.
pub struct EncoderOutput {
    pub per_layer: Vec<Var>,
    pub readout: Var,
}

/// Symmetric normalization `D^(-1/2) A D^(-1/2)` where `D` holds the row
/// sums of `A`. Rows with zero sum stay zero: isolated nodes propagate
/// nothing. Negative weights are a contract violation.
pub fn normalize_adjacency<T: Scalar>(adj: &SparseMatrix<T>) -> SparseMatrix<T> {
    let sums = adj.row_sums();
    for (r, &s) in sums.iter().enumerate() {
        assert!(s >= T::zero(), "normalize_adjacency: negative row sum at node {r}");
    }
    let rs: Vec<T> = sums
        .iter()
        .map(|&s| if s > T::zero() { s.sqrt().recip() } else { T::zero() })
        .collect();
    adj.map_values(|r, c, v| {
        assert!(v >= T::zero(), "normalize_adjacency: negative weight at ({r},{c})");
        v * rs[r] * rs[c]
    })
}

/// Propagates the embedding table `layers` times through a fixed normalized
/// adjacency and averages the layer representations.
pub fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    table: Var,
    adj_norm: &Arc<SparseMatrix<T>>,
    layers: usize,
) -> EncoderOutput {
    let sid = tape.sparse(Arc::clone(adj_norm));
    let mut per_layer = vec![table];
    for _ in 0..layers {
        let prev = *per_layer.last().expect("layer 0 present");
        per_layer.push(tape.spmm(sid, prev));
    }
    let readout = mean_of(tape, &per_layer);
    EncoderOutput { per_layer, readout }
}

/// Differentiable symmetric normalization of per-pair edge weights. Returns
/// the normalized weights, still one value per unordered pair.
pub fn normalize_pairs<T: Scalar>(tape: &mut Tape<T>, support_id: usize, vals: Var) -> Var {
    let support = Arc::clone(tape.support_ref(support_id));
    let deg = tape.pair_degrees(support_id, vals);
    let r = tape.rsqrt_or_zero(deg);
    let iid = tape.indices(Arc::new(support.firsts()));
    let jid = tape.indices(Arc::new(support.seconds()));
    let ri = tape.gather_rows(r, iid);
    let rj = tape.gather_rows(r, jid);
    let v = tape.mul(vals, ri);
    tape.mul(v, rj)
}

/// Propagation where the adjacency weights themselves are tape variables;
/// gradients reach both the table and the weights.
pub fn encode_pairs<T: Scalar>(
    tape: &mut Tape<T>,
    table: Var,
    support_id: usize,
    norm_vals: Var,
    layers: usize,
) -> EncoderOutput {
    let mut per_layer = vec![table];
    for _ in 0..layers {
        let prev = *per_layer.last().expect("layer 0 present");
        per_layer.push(tape.spmm_pairs(support_id, norm_vals, prev));
    }
    let readout = mean_of(tape, &per_layer);
    EncoderOutput { per_layer, readout }
}

fn mean_of<T: Scalar>(tape: &mut Tape<T>, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v);
    }
    tape.scale(acc, T::cast(1.0 / vars.len() as f64))
}

/// Convenience: one pair support holding a graph's edges, for clean-graph
/// encoding paths.
pub fn support_of_pairs(n_nodes: usize, pairs: &[(u32, u32)]) -> Arc<PairSupport> {
    Arc::new(PairSupport::new(n_nodes, pairs.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{gradient_check, GradCheck};
    use rand_chacha::rand_core::SeedableRng;

    fn unit_adj(n: usize, pairs: &[(u32, u32)]) -> SparseMatrix<f64> {
        SparseMatrix::symmetric_from_pairs(n, pairs, &vec![1.0; pairs.len()])
    }

    #[test]
    fn unit_degree_edge_normalizes_to_one() {
        let norm = normalize_adjacency(&unit_adj(2, &[(0, 1)]));
        assert_eq!(norm.row(0).1, &[1.0]);
        assert_eq!(norm.row(1).1, &[1.0]);
    }

    #[test]
    fn star_center_entries_are_half() {
        let norm = normalize_adjacency(&unit_adj(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]));
        // center degree 4, leaves degree 1: 1/sqrt(4*1) = 0.5
        for &v in norm.row(0).1 {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_node_row_is_zero() {
        let norm = normalize_adjacency(&unit_adj(3, &[(0, 1)]));
        assert_eq!(norm.row(2).0.len(), 0);
        assert_eq!(norm.row_sums()[2], 0.0);
    }

    #[test]
    fn zero_layers_returns_the_table() {
        let mut tape: Tape<f64> = Tape::new();
        let table = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let t = tape.constant(table.clone());
        let adj = Arc::new(normalize_adjacency(&unit_adj(2, &[(0, 1)])));
        let out = encode(&mut tape, t, &adj, 0);
        assert_eq!(tape.value(out.readout).as_slice(), table.as_slice());
        assert_eq!(out.per_layer.len(), 1);
    }

    #[test]
    fn one_layer_two_node_mean() {
        let mut tape: Tape<f64> = Tape::new();
        let table = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let t = tape.constant(table);
        let adj = Arc::new(normalize_adjacency(&unit_adj(2, &[(0, 1)])));
        let out = encode(&mut tape, t, &adj, 1);
        // layer 1 swaps the rows; mean of (1,0) and (0,1) is (0.5, 0.5)
        assert_eq!(tape.value(out.readout).row(0), &[0.5, 0.5]);
        assert_eq!(tape.value(out.readout).row(1), &[0.5, 0.5]);
    }

    #[test]
    fn empty_adjacency_averages_layer_zero_only() {
        let mut tape: Tape<f64> = Tape::new();
        let table = Tensor::from_rows(&[vec![3.0, 6.0], vec![9.0, 12.0]]);
        let t = tape.constant(table.clone());
        let adj = Arc::new(unit_adj(2, &[]));
        let out = encode(&mut tape, t, &adj, 2);
        for i in 0..2 {
            for j in 0..2 {
                assert!((tape.value(out.readout).get(i, j) - table.get(i, j) / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn encode_is_linear_in_the_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table = Tensor::<f64>::randn(4, 3, 1.0, &mut rng);
        let adj = Arc::new(normalize_adjacency(&unit_adj(4, &[(0, 1), (1, 2), (2, 3), (0, 3)])));
        let run = |t: &Tensor<f64>| -> Vec<f64> {
            let mut tape = Tape::new();
            let v = tape.constant(t.clone());
            let out = encode(&mut tape, v, &adj, 2);
            tape.value(out.readout).as_slice().to_vec()
        };
        let base = run(&table);
        let mut scaled = table.clone();
        scaled.as_mut_slice().iter_mut().for_each(|v| *v *= 2.5);
        let scaled_out = run(&scaled);
        for (a, b) in base.iter().zip(&scaled_out) {
            assert!((a * 2.5 - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = Tensor::<f64>::randn(5, 3, 1.0, &mut rng);
        let adj = Arc::new(normalize_adjacency(&unit_adj(
            5,
            &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)],
        )));
        let report = gradient_check(&GradCheck::default(), &[table], move |tape, vars| {
            let out = encode(tape, vars[0], &adj, 2);
            tape.sum(out.readout)
        });
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn encode_commutes_with_node_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let pairs = [(0u32, 1u32), (1, 3), (2, 4), (0, 5), (3, 5)];
            let perm: Vec<usize> = {
                let mut p: Vec<usize> = (0..6).collect();
                crate::rng::shuffle(&mut rng, &mut p);
                p
            };
            let table = Tensor::<f64>::randn(6, 2, 1.0, &mut rng);

            let run = |pairs: &[(u32, u32)], t: &Tensor<f64>| -> Tensor<f64> {
                let mut tape = Tape::new();
                let v = tape.constant(t.clone());
                let adj = Arc::new(normalize_adjacency(&unit_adj(6, pairs)));
                let out = encode(&mut tape, v, &adj, 2);
                tape.value(out.readout).clone()
            };

            let base = run(&pairs, &table);
            // permute graph and table rows identically
            let ppairs: Vec<(u32, u32)> = pairs
                .iter()
                .map(|&(a, b)| {
                    let (pa, pb) = (perm[a as usize] as u32, perm[b as usize] as u32);
                    (pa.min(pb), pa.max(pb))
                })
                .collect();
            let mut pt = Tensor::zeros(6, 2);
            for i in 0..6 {
                for j in 0..2 {
                    pt.set(perm[i], j, table.get(i, j));
                }
            }
            let permuted = run(&ppairs, &pt);
            for i in 0..6 {
                for j in 0..2 {
                    assert!(
                        (base.get(i, j) - permuted.get(perm[i], j)).abs() < 1e-12,
                        "trial {trial}: equivariance violated at ({i},{j})"
                    );
                }
            }
        }
    }
}
