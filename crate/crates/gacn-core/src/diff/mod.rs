//! Differentiable-computation substrate: dense tensors, sparse operators,
//! a reverse-mode tape, and finite-difference verification.

mod check;
mod sparse;
mod tape;
mod tensor;

pub use check::{gradient_check, GradCheck, GradCheckReport};
pub use sparse::{PairSupport, SparseMatrix};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).item(), 0.5);
    }

    #[test]
    fn sum_abs_value_and_gradient() {
        let mut tape: Tape<f64> = Tape::new();
        let mut x = Tensor::from_vec(1, 2, vec![-1.0, 2.0]);
        x.set_requires_grad(true);
        let v = tape.leaf(&x);
        let a = tape.abs(v);
        let s = tape.sum(a);
        assert_eq!(tape.value(s).item(), 3.0);
        tape.backward(s);
        assert_eq!(tape.grad(v), vec![-1.0, 1.0]);
    }

    #[test]
    fn spmm_identity_is_identity() {
        let mut tape: Tape<f64> = Tape::new();
        let x = Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let id = tape.sparse(Arc::new(SparseMatrix::identity(3)));
        let v = tape.constant(x.clone());
        let y = tape.spmm(id, v);
        assert_eq!(tape.value(y).as_slice(), x.as_slice());
    }

    #[test]
    fn row_max_routes_gradient_to_first_argmax() {
        let mut tape: Tape<f64> = Tape::new();
        let mut x = Tensor::from_vec(3, 2, vec![1.0, 5.0, 7.0, 5.0, 7.0, 2.0]);
        x.set_requires_grad(true);
        let v = tape.leaf(&x);
        let m = tape.row_max(v);
        assert_eq!(tape.value(m).as_slice(), &[7.0, 5.0]);
        let s = tape.sum(m);
        tape.backward(s);
        // col 0: rows 1 and 2 tie at 7 -> first index (row 1) wins.
        // col 1: rows 0 and 1 tie at 5 -> first index (row 0) wins.
        assert_eq!(tape.grad(v), vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn log_of_nonpositive_poisons_tape() {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::from_vec(1, 2, vec![1.0, 0.0]));
        let _ = tape.log(x);
        assert_eq!(tape.poisoned(), Some("log"));
    }

    #[test]
    fn backward_is_linear_over_loss_sums() {
        // Gradient of (f + g) equals gradient of f plus gradient of g.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Tensor::randn(2, 3, 1.0, &mut rng);
        x.set_requires_grad(true);

        let grad_of = |combined: bool, which: usize| -> Vec<f64> {
            let mut tape: Tape<f64> = Tape::new();
            let v = tape.leaf(&x);
            let s = tape.sigmoid(v);
            let f = tape.sum(s);
            let e = tape.exp(v);
            let g = tape.sum(e);
            let t = if combined {
                tape.add(f, g)
            } else if which == 0 {
                f
            } else {
                g
            };
            tape.backward(t);
            tape.grad(v)
        };

        let sum_grad = grad_of(true, 0);
        let f_grad = grad_of(false, 0);
        let g_grad = grad_of(false, 1);
        for i in 0..sum_grad.len() {
            assert!((sum_grad[i] - (f_grad[i] + g_grad[i])).abs() < 1e-12);
        }
    }

    /// Every differentiable op passes the finite-difference check on random
    /// small inputs over many seeded trials.
    #[test]
    fn all_ops_pass_gradient_check() {
        type Build = fn(&mut Tape<f64>, &[Var]) -> Var;
        let unary_ops: Vec<(&str, Build)> = vec![
            ("sigmoid", |t, v| {
                let x = t.sigmoid(v[0]);
                t.sum(x)
            }),
            ("log_sigmoid", |t, v| {
                let x = t.log_sigmoid(v[0]);
                t.sum(x)
            }),
            ("exp", |t, v| {
                let x = t.exp(v[0]);
                t.sum(x)
            }),
            ("abs", |t, v| {
                let x = t.abs(v[0]);
                t.sum(x)
            }),
            ("relu", |t, v| {
                let x = t.relu(v[0]);
                t.sum(x)
            }),
            ("scale", |t, v| {
                let x = t.scale(v[0], -2.5);
                t.sum(x)
            }),
            ("transpose", |t, v| {
                let x = t.transpose(v[0]);
                let y = t.mul(x, x);
                t.sum(y)
            }),
            ("softmax_rows", |t, v| {
                let s = t.softmax_rows(v[0]);
                let sq = t.mul(s, s);
                t.sum(sq)
            }),
            ("log_softmax_rows", |t, v| {
                let s = t.log_softmax_rows(v[0]);
                let sq = t.mul(s, s);
                t.sum(sq)
            }),
            ("row_mean", |t, v| {
                let m = t.row_mean(v[0]);
                let sq = t.mul(m, m);
                t.sum(sq)
            }),
            ("row_max", |t, v| {
                let m = t.row_max(v[0]);
                t.sum(m)
            }),
            ("clamp", |t, v| {
                let c = t.clamp(v[0], -0.8, 0.8);
                t.sum(c)
            }),
        ];
        for (name, build) in &unary_ops {
            for trial in 0..100 {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
                let x = Tensor::randn(4, 3, 1.0, &mut rng);
                let report = gradient_check(
                    &GradCheck {
                        seed: trial,
                        ..GradCheck::default()
                    },
                    &[x],
                    build,
                );
                assert!(
                    report.passed,
                    "{name} trial {trial}: max rel err {} at {:?}",
                    report.max_rel_err, report.worst
                );
            }
        }

        let binary_ops: Vec<(&str, Build)> = vec![
            ("add", |t, v| {
                let x = t.add(v[0], v[1]);
                t.sum(x)
            }),
            ("sub", |t, v| {
                let x = t.sub(v[0], v[1]);
                t.sum(x)
            }),
            ("mul", |t, v| {
                let x = t.mul(v[0], v[1]);
                t.sum(x)
            }),
            ("dot_rows", |t, v| {
                let x = t.dot_rows(v[0], v[1]);
                t.sum(x)
            }),
            ("concat", |t, v| {
                let x = t.concat(v[0], v[1]);
                let sq = t.mul(x, x);
                t.sum(sq)
            }),
        ];
        for (name, build) in &binary_ops {
            for trial in 0..100 {
                let mut rng = ChaCha8Rng::seed_from_u64(2000 + trial);
                let a = Tensor::randn(3, 4, 1.0, &mut rng);
                let b = Tensor::randn(3, 4, 1.0, &mut rng);
                let report = gradient_check(
                    &GradCheck {
                        seed: trial,
                        ..GradCheck::default()
                    },
                    &[a, b],
                    build,
                );
                assert!(
                    report.passed,
                    "{name} trial {trial}: max rel err {}",
                    report.max_rel_err
                );
            }
        }

        // matmul, with distinct inner dims
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
            let a = Tensor::randn(3, 5, 1.0, &mut rng);
            let b = Tensor::randn(5, 2, 1.0, &mut rng);
            let report = gradient_check(
                &GradCheck {
                    seed: trial,
                    ..GradCheck::default()
                },
                &[a, b],
                |t, v| {
                    let x = t.matmul(v[0], v[1]);
                    let sq = t.mul(x, x);
                    t.sum(sq)
                },
            );
            assert!(report.passed, "matmul trial {trial}: {}", report.max_rel_err);
        }

        // log over strictly positive inputs
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(4000 + trial);
            let mut x = Tensor::<f64>::randn(2, 4, 1.0, &mut rng);
            for v in x.as_mut_slice() {
                *v = v.abs() + 0.5;
            }
            let report = gradient_check(
                &GradCheck {
                    seed: trial,
                    ..GradCheck::default()
                },
                &[x],
                |t, v| {
                    let l = t.log(v[0]);
                    t.sum(l)
                },
            );
            assert!(report.passed, "log trial {trial}: {}", report.max_rel_err);
        }

        // sparse ops over a fixed small support
        let support = Arc::new(PairSupport::new(
            5,
            vec![(0, 1), (0, 3), (1, 2), (2, 4), (3, 4)],
        ));
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
            let mut vals = Tensor::<f64>::randn(5, 1, 1.0, &mut rng);
            for v in vals.as_mut_slice() {
                *v = v.abs() + 0.3;
            }
            let x = Tensor::randn(5, 3, 1.0, &mut rng);
            let sup = Arc::clone(&support);
            let report = gradient_check(
                &GradCheck {
                    seed: trial,
                    ..GradCheck::default()
                },
                &[vals, x],
                move |t, v| {
                    let sid = t.support(Arc::clone(&sup));
                    let deg = t.pair_degrees(sid, v[0]);
                    let r = t.rsqrt_or_zero(deg);
                    let iid = t.indices(Arc::new(sup.firsts()));
                    let jid = t.indices(Arc::new(sup.seconds()));
                    let ri = t.gather_rows(r, iid);
                    let rj = t.gather_rows(r, jid);
                    let vn = t.mul(v[0], ri);
                    let vn = t.mul(vn, rj);
                    let y = t.spmm_pairs(sid, vn, v[1]);
                    let sq = t.mul(y, y);
                    t.sum(sq)
                },
            );
            assert!(
                report.passed,
                "pair ops trial {trial}: {} at {:?}",
                report.max_rel_err, report.worst
            );
        }

        // spmm against a constant sparse matrix
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(6000 + trial);
            let x = Tensor::randn(4, 3, 1.0, &mut rng);
            let m = Arc::new(SparseMatrix::symmetric_from_pairs(
                4,
                &[(0, 1), (1, 2), (2, 3)],
                &[0.7, 1.3, 0.4],
            ));
            let report = gradient_check(
                &GradCheck {
                    seed: trial,
                    ..GradCheck::default()
                },
                &[x],
                move |t, v| {
                    let sid = t.sparse(Arc::clone(&m));
                    let y = t.spmm(sid, v[0]);
                    let sq = t.mul(y, y);
                    t.sum(sq)
                },
            );
            assert!(report.passed, "spmm trial {trial}: {}", report.max_rel_err);
        }

        // diag
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(7000 + trial);
            let x = Tensor::randn(4, 4, 1.0, &mut rng);
            let report = gradient_check(
                &GradCheck {
                    seed: trial,
                    ..GradCheck::default()
                },
                &[x],
                |t, v| {
                    let d = t.diag(v[0]);
                    t.sum(d)
                },
            );
            assert!(report.passed, "diag trial {trial}: {}", report.max_rel_err);
        }

        // add_row broadcast and gather_rows
        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(8000 + trial);
            let a = Tensor::randn(4, 3, 1.0, &mut rng);
            let b = Tensor::randn(1, 3, 1.0, &mut rng);
            let report = gradient_check(
                &GradCheck {
                    seed: trial,
                    ..GradCheck::default()
                },
                &[a, b],
                |t, v| {
                    let y = t.add_row(v[0], v[1]);
                    let iid = t.indices(Arc::new(vec![0usize, 2, 2, 3]));
                    let gth = t.gather_rows(y, iid);
                    let sq = t.mul(gth, gth);
                    t.sum(sq)
                },
            );
            assert!(report.passed, "add_row trial {trial}: {}", report.max_rel_err);
        }
    }
}
