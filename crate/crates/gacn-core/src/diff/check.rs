//! Central finite-difference verification of tape gradients.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::rng::shuffle;
use crate::scalar::Scalar;

/// Settings for one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the max relative error.
    pub tol: f64,
    /// How many coordinates per parameter to probe (sampled without
    /// replacement); `usize::MAX` probes all of them.
    pub max_coords_per_param: usize,
    /// Seed for the coordinate sampler.
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            tol: 1e-3,
            max_coords_per_param: usize::MAX,
            seed: 0,
        }
    }
}

/// Outcome of a [`gradient_check`] run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate) of the worst error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates skipped because the forward pass flagged them as sitting
    /// at a nondifferentiable point.
    pub skipped: usize,
    pub passed: bool,
}

/// Denominator floor for the relative error; errors on near-zero gradients
/// are judged on this absolute scale instead.
const REL_FLOOR: f64 = 1e-3;

/// Compares tape gradients of a scalar computation against central finite
/// differences `(f(x+eps) - f(x-eps)) / (2 eps)` on a sampled coordinate
/// subset. The computation `f` must be deterministic in its parameters; any
/// randomness has to be frozen in the closure.
pub fn gradient_check<T, F>(cfg: &GradCheck, params: &[Tensor<T>], f: F) -> GradCheckReport
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Var,
{
    // Analytic pass.
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.set_requires_grad(true);
            tape.leaf(&p)
        })
        .collect();
    let out = f(&mut tape, &vars);
    assert!(
        tape.poisoned().is_none(),
        "gradient_check: forward pass produced a non-finite value in `{}`",
        tape.poisoned().unwrap_or("?")
    );
    tape.backward(out);
    let analytic: Vec<Vec<T>> = vars.iter().map(|&v| tape.grad(v)).collect();
    let kinks: Vec<Vec<usize>> = vars.iter().map(|&v| tape.kink_coords(v)).collect();

    let eval = |ps: &[Tensor<T>]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps
            .iter()
            .map(|p| {
                let mut p = p.clone();
                p.set_requires_grad(false);
                t.leaf(&p)
            })
            .collect();
        let o = f(&mut t, &vs);
        t.value(o).item().as_f64()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
        passed: true,
    };

    for (pi, p) in params.iter().enumerate() {
        let mut coords: Vec<usize> = (0..p.len()).collect();
        if coords.len() > cfg.max_coords_per_param {
            shuffle(&mut rng, &mut coords);
            coords.truncate(cfg.max_coords_per_param);
            coords.sort_unstable();
        }
        for ci in coords {
            if kinks[pi].contains(&ci) {
                report.skipped += 1;
                continue;
            }
            let base = p.as_slice()[ci].as_f64();
            let mut bumped: Vec<Tensor<T>> = params.to_vec();
            bumped[pi].as_mut_slice()[ci] = T::cast(base + cfg.eps);
            let f_plus = eval(&bumped);
            bumped[pi].as_mut_slice()[ci] = T::cast(base - cfg.eps);
            let f_minus = eval(&bumped);
            let fd = (f_plus - f_minus) / (2.0 * cfg.eps);
            let an = analytic[pi][ci].as_f64();
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((pi, ci));
            }
        }
    }
    report.passed = report.max_rel_err < cfg.tol;
    report
}
