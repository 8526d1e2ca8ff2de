//! The view discriminator: graph-level pooling of encoder output, an MLP
//! probability head, and the classification / adversarial losses.

use rand_chacha::ChaCha8Rng;

use crate::diff::{Tape, Tensor, Var};
use crate::scalar::Scalar;

/// MLP weights: `layers` holds `(W, b)` per layer; hidden layers use a
/// rectifier, the final scalar goes through a clamped sigmoid. The first
/// layer consumes the pooled graph vector of width `2 * D`.
#[derive(Debug, Clone)]
pub struct MlpParams<T> {
    layers: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> MlpParams<T> {
    /// Random init: `n_layers - 1` hidden layers of width `hidden`, then a
    /// single output unit.
    pub fn init_random(input: usize, hidden: usize, n_layers: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(n_layers >= 1, "mlp needs at least one layer");
        let mut layers = Vec::with_capacity(n_layers);
        let mut width = input;
        for l in 0..n_layers {
            let out = if l + 1 == n_layers { 1 } else { hidden };
            let std = T::cast((2.0 / width as f64).sqrt());
            let mut w = Tensor::randn(width, out, std, rng);
            w.set_requires_grad(true);
            let mut b = Tensor::zeros(1, out);
            b.set_requires_grad(true);
            layers.push((w, b));
            width = out;
        }
        Self { layers }
    }

    /// All-zero parameters; useful as the untrained baseline in tests, where
    /// every input scores exactly 0.5.
    pub fn zeros(input: usize, hidden: usize, n_layers: usize) -> Self {
        assert!(n_layers >= 1, "mlp needs at least one layer");
        let mut layers = Vec::with_capacity(n_layers);
        let mut width = input;
        for l in 0..n_layers {
            let out = if l + 1 == n_layers { 1 } else { hidden };
            let mut w = Tensor::zeros(width, out);
            w.set_requires_grad(true);
            let mut b = Tensor::zeros(1, out);
            b.set_requires_grad(true);
            layers.push((w, b));
            width = out;
        }
        Self { layers }
    }

    pub fn from_layers(layers: Vec<(Tensor<T>, Tensor<T>)>) -> Self {
        Self { layers }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].0.rows()
    }

    pub fn layers(&self) -> &[(Tensor<T>, Tensor<T>)] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [(Tensor<T>, Tensor<T>)] {
        &mut self.layers
    }

    /// Puts every weight and bias on the tape as leaves, in layer order.
    pub fn leaves(&self, tape: &mut Tape<T>) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|(w, b)| (tape.leaf(w), tape.leaf(b)))
            .collect()
    }
}

/// Graph-level readout: concatenation of the mean-pooled and max-pooled node
/// representations, a `1 x 2D` row. Panics on an empty graph.
pub fn pool_graph<T: Scalar>(tape: &mut Tape<T>, node_repr: Var) -> Var {
    assert!(tape.value(node_repr).rows() >= 1, "pool_graph on an empty graph");
    let mean = tape.row_mean(node_repr);
    let max = tape.row_max(node_repr);
    tape.concat(mean, max)
}

/// Probability that a pooled graph vector comes from a predefined
/// augmentation, clamped into the open interval.
pub fn discriminate<T: Scalar>(tape: &mut Tape<T>, pooled: Var, mlp: &[(Var, Var)]) -> Var {
    let mut x = pooled;
    let n = mlp.len();
    for (l, &(w, b)) in mlp.iter().enumerate() {
        assert_eq!(
            tape.value(x).cols(),
            tape.value(w).rows(),
            "discriminate: width mismatch at layer {l}"
        );
        let z = tape.matmul(x, w);
        let z = tape.add_row(z, b);
        x = if l + 1 == n { z } else { tape.relu(z) };
    }
    let s = tape.sigmoid(x);
    tape.clamp_prob(s)
}

/// Binary cross-entropy `-y log(p) - (1-y) log(1-p)` for a clamped scalar
/// probability.
pub fn bce_loss<T: Scalar>(tape: &mut Tape<T>, p: Var, label: T) -> Var {
    let lp = tape.log(p);
    let one = tape.constant_scalar(T::one());
    let om = tape.sub(one, p);
    let lom = tape.log(om);
    let a = tape.scale(lp, -label);
    let b = tape.scale(lom, -(T::one() - label));
    tape.add(a, b)
}

/// Generator-side adversarial loss `-log(p)`: the classification loss with
/// the generated view labeled as real.
pub fn adversarial_loss<T: Scalar>(tape: &mut Tape<T>, p: Var) -> Var {
    bce_loss(tape, p, T::one())
}
