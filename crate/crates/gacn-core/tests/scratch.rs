//! Temporary calibration experiments (deleted before delivery).

use gacn_core::synth;
use gacn_core::trainer::{TrainConfig, Trainer};

#[test]
#[ignore]
fn calibrate_generator_convergence() {
    for tau in [0.01, 0.02, 0.05] {
        for lr in [0.005, 0.01, 0.02] {
            let g = synth::gnm_random(50, 200, 42);
            let cfg = TrainConfig {
                dim: 8,
                lambda_cnt: 1.0,
                lambda_new: 0.0,
                lambda_adv: 0.0,
                lambda_g: 0.5,
                gamma: 0.75,
                tau_g: tau,
                lr,
                top_k: 2000,
                seed: 1,
                eval_every: 0,
                split_train: 1.0,
                split_val: 0.0,
                split_test: 0.0,
                ..TrainConfig::default()
            };
            let mut t: Trainer<f64> = Trainer::new(g, cfg).unwrap();
            let mut sums = Vec::new();
            for _ in 0..500 {
                let rec = t.g_step().unwrap();
                sums.push(rec.get("sum_p").unwrap());
            }
            let first = sums[0];
            let w50: f64 = sums[450..].iter().sum::<f64>() / 50.0;
            let within = sums[450..].iter().filter(|s| (**s - 100.0).abs() <= 5.0).count();
            println!(
                "tau={tau} lr={lr}: first={first:.1} last50mean={w50:.2} within5pct={within}/50"
            );
        }
    }
}

#[test]
#[ignore]
fn calibrate_new_edge_mass_reduction() {
    let run = |lambda_new: f64, tau: f64, lr: f64| -> f64 {
        let g = synth::gnm_random(50, 200, 42);
        let cfg = TrainConfig {
            dim: 8,
            lambda_cnt: 1.0,
            lambda_new,
            lambda_adv: 0.0,
            lambda_g: 0.5,
            gamma: 0.75,
            tau_g: tau,
            lr,
            top_k: 2000,
            seed: 1,
            eval_every: 0,
            ..TrainConfig::default()
        };
        let mut t: Trainer<f64> = Trainer::new(g, cfg).unwrap();
        let mut mass = 0.0;
        let mut n = 0.0;
        for step in 0..500 {
            let rec = t.g_step().unwrap();
            if step >= 450 {
                // new-edge mass of the step's sampled view
                mass += rec.get("l_new").unwrap();
                n += 1.0;
            }
        }
        mass / n
    };
    for (tau, lr) in [(0.02, 0.01), (0.05, 0.01)] {
        let m0 = run(0.0, tau, lr);
        let m05 = run(0.5, tau, lr);
        println!("tau={tau} lr={lr}: mass(lambda_new=0)={m0:.3} mass(0.5)={m05:.3}");
    }
}
