//! Temporary full-pipeline calibration (deleted before delivery).

use gacn_core::eval::{evaluate_embeddings, run_ablation};
use gacn_core::synth;
use gacn_core::trainer::{TrainConfig, Trainer, Variant};

fn class_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 32,
        layers: 2,
        tau_g: 0.05,
        lambda_g: 0.5,
        lambda_cnt: 1.0,
        lambda_new: 0.5,
        lambda_adv: 1.0,
        gamma: 0.75,
        top_k: 30,
        tau_f: 0.5,
        lambda_gcl: 1.0,
        lambda_bpr: 1e-4,
        views_per_d_step: 2,
        lr: 0.01,
        max_iters: 300,
        eval_every: 50,
        patience: 10,
        seed,
        split_seed: 0,
        probe_inits: 3,
        ..TrainConfig::default()
    }
}

#[test]
#[ignore]
fn calibrate_cora_like() {
    let g = synth::sbm(7, 100, 0.06, 0.0033, 1234);
    println!("sbm: n={} e={}", g.n_nodes(), g.n_edges());
    for seed in [1u64, 2, 3] {
        let t0 = std::time::Instant::now();
        let full = run_ablation::<f64>(Variant::Full, &g, &class_cfg(seed)).unwrap();
        let wog = run_ablation::<f64>(Variant::WoGan, &g, &class_cfg(seed)).unwrap();
        println!(
            "seed {seed}: full F1={:.4} wo_gan F1={:.4}  ({:.1}s)",
            full.get("F1").unwrap(),
            wog.get("F1").unwrap(),
            t0.elapsed().as_secs_f64()
        );
    }
}

fn link_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 32,
        layers: 2,
        tau_g: 0.05,
        lambda_g: 0.5,
        lambda_cnt: 1.0,
        lambda_new: 0.5,
        lambda_adv: 1.0,
        gamma: 0.75,
        top_k: 30,
        tau_f: 0.5,
        lambda_gcl: 1.0,
        lambda_bpr: 1e-4,
        views_per_d_step: 2,
        lr: 0.01,
        max_iters: 300,
        eval_every: 50,
        patience: 10,
        seed,
        split_seed: 0,
        ..TrainConfig::default()
    }
}

#[test]
#[ignore]
fn calibrate_uci_like() {
    let g = synth::preferential_attachment(600, 5, 777);
    println!("pa: n={} e={}", g.n_nodes(), g.n_edges());
    for seed in [1u64, 2, 3] {
        let t0 = std::time::Instant::now();
        let full = run_ablation::<f64>(Variant::Full, &g, &link_cfg(seed)).unwrap();
        let wog = run_ablation::<f64>(Variant::WoGan, &g, &link_cfg(seed)).unwrap();
        println!(
            "seed {seed}: full MRR={:.4} wo_gan MRR={:.4}  ({:.1}s)",
            full.get("MRR").unwrap(),
            wog.get("MRR").unwrap(),
            t0.elapsed().as_secs_f64()
        );
    }
}

#[test]
#[ignore]
fn calibrate_untrained_baselines() {
    // what do metrics look like at init, to judge headroom
    let g = synth::sbm(7, 100, 0.06, 0.0033, 1234);
    let mut cfg = class_cfg(1);
    cfg.max_iters = 0;
    let mut t: Trainer<f64> = Trainer::new(g, cfg).unwrap();
    let out = t.train().unwrap();
    let rec = evaluate_embeddings(&out.embeddings, t.graph(), t.config()).unwrap();
    println!("untrained sbm probe: F1={:.4}", rec.get("F1").unwrap());

    let g = synth::preferential_attachment(600, 5, 777);
    let mut cfg = link_cfg(1);
    cfg.max_iters = 0;
    let mut t: Trainer<f64> = Trainer::new(g, cfg).unwrap();
    let out = t.train().unwrap();
    let rec = evaluate_embeddings(&out.embeddings, t.graph(), t.config()).unwrap();
    println!("untrained pa MRR: {:.4}", rec.get("MRR").unwrap());
}
