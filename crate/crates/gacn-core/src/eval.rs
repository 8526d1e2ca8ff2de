//! Evaluation: linear-probe node classification, ranking-based link
//! prediction, ablation runs, the edge-replacement curve, and generated-view
//! degree profiles.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::diff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::generator::{degree_deciles, GeneratorParams};
use crate::graph::Graph;
use crate::rng::{below, normal01, shuffle};
use crate::scalar::Scalar;
use crate::trainer::{TrainConfig, Trainer, Variant};

/// L2 penalty on the probe classifier weights.
const PROBE_L2: f64 = 1e-4;
/// Gradient-norm stopping threshold for the probe.
const PROBE_GRAD_TOL: f64 = 1e-5;
const PROBE_MAX_ITERS: usize = 4000;

/// One evaluation outcome: a task tag plus named metric values, with enough
/// provenance to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub task: String,
    pub metrics: Vec<(String, f64)>,
    pub seed: u64,
    pub config_hash: String,
    pub wall_time_s: f64,
    pub split_provenance: String,
    pub flags: Vec<String>,
}

impl MetricsRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|(k, _)| k == name)
            .map(|&(_, v)| v)
    }

    /// One self-describing `key=value` line.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "task={} seed={} config={} wall_s={:.3} split={}",
            self.task,
            self.seed,
            self.config_hash,
            self.wall_time_s,
            self.split_provenance.replace(' ', "_"),
        );
        if !self.flags.is_empty() {
            s.push_str(&format!(" flags={}", self.flags.join(",")));
        }
        for (k, v) in &self.metrics {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }
}

/// Short content hash of a resolved configuration.
pub fn config_hash(cfg: &TrainConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(cfg.to_kv().as_bytes());
    let digest = hasher.finalize();
    hex_prefix(&digest, 12)
}

pub(crate) fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::new();
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

// ---- linear probe ------------------------------------------------------------

/// Which node partition the probe is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    Val,
    Test,
}

struct ProbeFit<T> {
    w: Tensor<T>,
    b: Tensor<T>,
}

/// Multinomial logistic regression on frozen embeddings: full-batch gradient
/// descent with a halving line search, run to a small gradient norm.
fn fit_probe<T: Scalar>(
    x: &Tensor<T>,
    labels: &[u32],
    n_classes: usize,
    rng: &mut ChaCha8Rng,
) -> ProbeFit<T> {
    let (n, d) = x.shape();
    assert_eq!(n, labels.len());
    let mut w = Tensor::randn(d, n_classes, T::cast(0.01), rng);
    let mut b = Tensor::zeros(1, n_classes);
    let mut onehot = Tensor::zeros(n, n_classes);
    for (i, &c) in labels.iter().enumerate() {
        onehot.set(i, c as usize, T::one());
    }

    let eval = |w: &Tensor<T>, b: &Tensor<T>, want_grad: bool| -> (f64, Vec<T>, Vec<T>) {
        let mut tape: Tape<T> = Tape::new();
        let mut wl = w.detached();
        let mut bl = b.detached();
        wl.set_requires_grad(want_grad);
        bl.set_requires_grad(want_grad);
        let wv = tape.leaf(&wl);
        let bv = tape.leaf(&bl);
        let xv = tape.constant(x.detached());
        let logits = tape.matmul(xv, wv);
        let logits = tape.add_row(logits, bv);
        let lsm = tape.log_softmax_rows(logits);
        let oh = tape.constant(onehot.clone());
        let picked = tape.mul(lsm, oh);
        let ce_sum = tape.sum(picked);
        let ce = tape.scale(ce_sum, -T::cast(1.0 / n as f64));
        let wsq = tape.mul(wv, wv);
        let l2 = tape.sum(wsq);
        let l2 = tape.scale(l2, T::cast(PROBE_L2));
        let loss = tape.add(ce, l2);
        if want_grad {
            tape.backward(loss);
            (tape.value(loss).item().as_f64(), tape.grad(wv), tape.grad(bv))
        } else {
            (tape.value(loss).item().as_f64(), Vec::new(), Vec::new())
        }
    };

    let mut lr = 1.0f64;
    let mut loss = f64::INFINITY;
    for _ in 0..PROBE_MAX_ITERS {
        let (l, gw, gb) = eval(&w, &b, true);
        loss = l;
        let gnorm = gw
            .iter()
            .chain(gb.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt();
        if gnorm <= PROBE_GRAD_TOL {
            break;
        }
        // halving line search on the descent direction
        loop {
            let mut wc = w.clone();
            let mut bc = b.clone();
            for (p, g) in wc.as_mut_slice().iter_mut().zip(&gw) {
                *p -= T::cast(lr) * *g;
            }
            for (p, g) in bc.as_mut_slice().iter_mut().zip(&gb) {
                *p -= T::cast(lr) * *g;
            }
            let (lc, _, _) = eval(&wc, &bc, false);
            if lc <= loss || lr < 1e-12 {
                w = wc;
                b = bc;
                lr = (lr * 1.5).min(1e3);
                break;
            }
            lr *= 0.5;
        }
    }
    let _ = loss;
    ProbeFit { w, b }
}

fn probe_predict<T: Scalar>(fit: &ProbeFit<T>, x: &Tensor<T>) -> Vec<u32> {
    let (n, d) = x.shape();
    let c = fit.w.cols();
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = T::neg_infinity();
        let mut best_c = 0u32;
        for cc in 0..c {
            let mut logit = fit.b.get(0, cc);
            for k in 0..d {
                logit += x.get(i, k) * fit.w.get(k, cc);
            }
            if logit > best {
                best = logit;
                best_c = cc as u32;
            }
        }
        preds.push(best_c);
    }
    preds
}

/// Macro-averaged precision, recall, and F1 over all classes.
pub fn macro_prf(truth: &[u32], pred: &[u32], n_classes: usize) -> (f64, f64, f64) {
    assert_eq!(truth.len(), pred.len());
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fal_n = vec![0usize; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t as usize] += 1;
        } else {
            fp[p as usize] += 1;
            fal_n[t as usize] += 1;
        }
    }
    let (mut ps, mut rs, mut f1s) = (0.0, 0.0, 0.0);
    for c in 0..n_classes {
        let p = if tp[c] + fp[c] > 0 {
            tp[c] as f64 / (tp[c] + fp[c]) as f64
        } else {
            0.0
        };
        let r = if tp[c] + fal_n[c] > 0 {
            tp[c] as f64 / (tp[c] + fal_n[c]) as f64
        } else {
            0.0
        };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        ps += p;
        rs += r;
        f1s += f1;
    }
    let k = n_classes as f64;
    (ps / k, rs / k, f1s / k)
}

fn gather_rows_plain<T: Scalar>(x: &Tensor<T>, idx: &[u32]) -> Tensor<T> {
    let d = x.cols();
    let mut out = Tensor::zeros(idx.len(), d);
    for (r, &i) in idx.iter().enumerate() {
        for k in 0..d {
            out.set(r, k, x.get(i as usize, k));
        }
    }
    out
}

/// Trains a linear classifier on frozen train-node embeddings over
/// `n_inits` random initializations and reports mean macro P/R/F1 on the
/// test nodes.
pub fn linear_probe<T: Scalar>(
    emb: &Tensor<T>,
    g: &Graph,
    n_inits: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MetricsRecord> {
    let started = Instant::now();
    let (p, r, f1, provenance) = probe_scores(emb, g, ProbeTarget::Test, n_inits, rng)?;
    Ok(MetricsRecord {
        task: "node_classification".into(),
        metrics: vec![("P".into(), p), ("R".into(), r), ("F1".into(), f1)],
        seed: 0,
        config_hash: String::new(),
        wall_time_s: started.elapsed().as_secs_f64(),
        split_provenance: provenance,
        flags: Vec::new(),
    })
}

fn probe_scores<T: Scalar>(
    emb: &Tensor<T>,
    g: &Graph,
    target: ProbeTarget,
    n_inits: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64, f64, String)> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::Config("linear probe requires labels".into()))?;
    let split = g
        .node_split()
        .ok_or_else(|| Error::Config("linear probe requires node splits".into()))?;
    let eval_nodes = match target {
        ProbeTarget::Val => &split.val,
        ProbeTarget::Test => &split.test,
    };
    let train_x = gather_rows_plain(emb, &split.train);
    let train_y: Vec<u32> = split.train.iter().map(|&v| labels[v as usize]).collect();
    let eval_x = gather_rows_plain(emb, eval_nodes);
    let eval_y: Vec<u32> = eval_nodes.iter().map(|&v| labels[v as usize]).collect();

    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for _ in 0..n_inits.max(1) {
        let fit = fit_probe(&train_x, &train_y, g.n_classes(), rng);
        let pred = probe_predict(&fit, &eval_x);
        let (p, r, f1) = macro_prf(&eval_y, &pred, g.n_classes());
        sp += p;
        sr += r;
        sf += f1;
    }
    let k = n_inits.max(1) as f64;
    Ok((sp / k, sr / k, sf / k, split.provenance.clone()))
}

/// Macro F1 of a probe on the given partition; the cheap validation metric.
pub fn probe_f1_on<T: Scalar>(
    emb: &Tensor<T>,
    g: &Graph,
    target: ProbeTarget,
    n_inits: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    probe_scores(emb, g, target, n_inits, rng)
        .map(|(_, _, f1, _)| f1)
        .unwrap_or(0.0)
}

// ---- link ranking --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankTarget {
    Val,
    Test,
}

#[derive(Debug, Clone)]
pub struct LinkRankOptions {
    pub ks: Vec<usize>,
    /// `Some(p)` ranks against a seeded sample of `p` candidate nodes
    /// instead of all nodes; flagged in the record.
    pub candidate_pool: Option<usize>,
    pub pool_seed: u64,
}

impl Default for LinkRankOptions {
    fn default() -> Self {
        Self {
            ks: vec![20, 50, 100],
            candidate_pool: None,
            pool_seed: 0,
        }
    }
}

fn neighbor_lists(n: usize, pairs: &[(u32, u32)]) -> Vec<Vec<u32>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in pairs {
        adj[a as usize].push(b);
        adj[b as usize].push(a);
    }
    for l in &mut adj {
        l.sort_unstable();
    }
    adj
}

fn dot_row<T: Scalar>(emb: &Tensor<T>, a: usize, b: usize) -> f64 {
    let d = emb.cols();
    let mut acc = T::zero();
    for k in 0..d {
        acc += emb.get(a, k) * emb.get(b, k);
    }
    acc.as_f64()
}

/// Rank of `target` among `candidates` scored by dot product with `query`,
/// ties broken by lower node id. Rank 1 is best.
fn rank_by_sort<T: Scalar>(emb: &Tensor<T>, query: usize, target: u32, candidates: &[u32]) -> usize {
    let mut scored: Vec<(f64, u32)> = candidates
        .iter()
        .map(|&w| (dot_row(emb, query, w as usize), w))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored
        .iter()
        .position(|&(_, w)| w == target)
        .expect("target present in candidate list")
        + 1
}

/// Independent rank computation: counts strictly greater scores plus
/// equal-score candidates with lower ids. Exercised against the sorting
/// implementation by the acceptance suite.
pub fn rank_by_counting<T: Scalar>(
    emb: &Tensor<T>,
    query: usize,
    target: u32,
    candidates: &[u32],
) -> usize {
    let ts = dot_row(emb, query, target as usize);
    let mut ahead = 0usize;
    for &w in candidates {
        if w == target {
            continue;
        }
        let s = dot_row(emb, query, w as usize);
        if s > ts || (s == ts && w < target) {
            ahead += 1;
        }
    }
    ahead + 1
}

fn ranked_candidates(
    n: usize,
    query: u32,
    target: u32,
    masked: &[u32],
    pool: Option<&Vec<u32>>,
) -> Vec<u32> {
    let mut out = Vec::new();
    match pool {
        Some(p) => {
            for &w in p {
                if w != query && masked.binary_search(&w).is_err() {
                    out.push(w);
                }
            }
            if !out.contains(&target) {
                out.push(target);
            }
        }
        None => {
            for w in 0..n as u32 {
                if w != query && masked.binary_search(&w).is_err() {
                    out.push(w);
                }
            }
        }
    }
    out
}

struct RankRun {
    ranks: Vec<usize>,
    flags: Vec<String>,
}

fn rank_split_edges<T: Scalar>(
    emb: &Tensor<T>,
    g: &Graph,
    target: RankTarget,
    opts: &LinkRankOptions,
    use_counting: bool,
) -> Result<RankRun> {
    let split = g
        .edge_split()
        .ok_or_else(|| Error::Config("link ranking requires edge splits".into()))?;
    let n = g.n_nodes();
    // mask: the query's known (train, and val when scoring test) partners
    let mut known_pairs = g.edge_pairs(&split.train);
    let eval_pairs = match target {
        RankTarget::Val => g.edge_pairs(&split.val),
        RankTarget::Test => {
            known_pairs.extend(g.edge_pairs(&split.val));
            g.edge_pairs(&split.test)
        }
    };
    let known = neighbor_lists(n, &known_pairs);

    let pool: Option<Vec<u32>> = opts.candidate_pool.map(|size| {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.pool_seed);
        let mut chosen: Vec<u32> = Vec::with_capacity(size.min(n));
        let mut all: Vec<u32> = (0..n as u32).collect();
        shuffle(&mut rng, &mut all);
        chosen.extend(all.into_iter().take(size));
        chosen.sort_unstable();
        chosen
    });

    let mut ranks = Vec::with_capacity(eval_pairs.len());
    for &(u, v) in &eval_pairs {
        let candidates = ranked_candidates(n, u, v, &known[u as usize], pool.as_ref());
        let rank = if use_counting {
            rank_by_counting(emb, u as usize, v, &candidates)
        } else {
            rank_by_sort(emb, u as usize, v, &candidates)
        };
        ranks.push(rank);
    }
    let mut flags = Vec::new();
    if let Some(size) = opts.candidate_pool {
        flags.push(format!("sampled-candidates-{size}"));
    }
    Ok(RankRun { ranks, flags })
}

fn ranking_metrics(ranks: &[usize], ks: &[usize]) -> Vec<(String, f64)> {
    let n = ranks.len().max(1) as f64;
    let mut out = Vec::new();
    for &k in ks {
        let hits = ranks.iter().filter(|&&r| r <= k).count() as f64;
        out.push((format!("H@{k}"), hits / n));
    }
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    out.push(("MRR".into(), mrr));
    out
}

/// Ranks every test edge's far endpoint against all unmasked nodes and
/// reports H@k and MRR.
pub fn link_rank<T: Scalar>(
    emb: &Tensor<T>,
    g: &Graph,
    opts: &LinkRankOptions,
) -> Result<MetricsRecord> {
    let started = Instant::now();
    let run = rank_split_edges(emb, g, RankTarget::Test, opts, false)?;
    let split = g.edge_split().expect("checked above");
    Ok(MetricsRecord {
        task: "link_prediction".into(),
        metrics: ranking_metrics(&run.ranks, &opts.ks),
        seed: split.seed,
        config_hash: String::new(),
        wall_time_s: started.elapsed().as_secs_f64(),
        split_provenance: format!("edge-split seed {}", split.seed),
        flags: run.flags,
    })
}

/// Brute-force twin of [`link_rank`] built on the counting rank; the oracle
/// side of the dual-route check.
pub fn link_rank_bruteforce<T: Scalar>(
    emb: &Tensor<T>,
    g: &Graph,
    opts: &LinkRankOptions,
) -> Result<MetricsRecord> {
    let started = Instant::now();
    let run = rank_split_edges(emb, g, RankTarget::Test, opts, true)?;
    let split = g.edge_split().expect("checked above");
    Ok(MetricsRecord {
        task: "link_prediction".into(),
        metrics: ranking_metrics(&run.ranks, &opts.ks),
        seed: split.seed,
        config_hash: String::new(),
        wall_time_s: started.elapsed().as_secs_f64(),
        split_provenance: format!("edge-split seed {}", split.seed),
        flags: run.flags,
    })
}

/// MRR over one split partition; the cheap validation metric for link runs.
pub fn mrr_on_split<T: Scalar>(emb: &Tensor<T>, g: &Graph, target: RankTarget) -> f64 {
    match rank_split_edges(emb, g, target, &LinkRankOptions::default(), false) {
        Ok(run) if !run.ranks.is_empty() => {
            run.ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / run.ranks.len() as f64
        }
        _ => 0.0,
    }
}

// ---- ablations and experiments ---------------------------------------------------

/// Trains and evaluates one ablation variant end to end.
pub fn run_ablation<T: Scalar>(
    variant: Variant,
    g: &Graph,
    base_cfg: &TrainConfig,
) -> Result<MetricsRecord> {
    let started = Instant::now();
    let mut cfg = base_cfg.clone();
    cfg.apply_variant(variant);
    let hash = config_hash(&cfg);
    let seed = cfg.seed;
    let mut trainer: Trainer<T> = Trainer::new(g.clone(), cfg)?;
    let out = trainer.train()?;
    let mut record = evaluate_embeddings(&out.embeddings, trainer.graph(), trainer.config())?;
    record.task = format!("{}:{}", record.task, variant);
    record.seed = seed;
    record.config_hash = hash;
    record.wall_time_s = started.elapsed().as_secs_f64();
    Ok(record)
}

/// Task-appropriate evaluation of final embeddings.
pub fn evaluate_embeddings<T: Scalar>(
    emb: &Tensor<T>,
    g: &Graph,
    cfg: &TrainConfig,
) -> Result<MetricsRecord> {
    use rand_chacha::rand_core::SeedableRng;
    let mut record = if g.node_split().is_some() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e3779b97f4a7c15);
        linear_probe(emb, g, cfg.probe_inits, &mut rng)?
    } else {
        link_rank(emb, g, &LinkRankOptions::default())?
    };
    record.seed = cfg.seed;
    record.config_hash = config_hash(cfg);
    Ok(record)
}

/// The metric-vs-replacement-rate curve: for each rate, trains the
/// GAN-free pipeline whose generator-side view is a dropout view with that
/// fraction of kept edges swapped for random non-edges.
pub fn edge_replacement_experiment<T: Scalar>(
    g: &Graph,
    rates: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<(f64, f64)>> {
    let mut curve = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut run_cfg = cfg.clone();
        run_cfg.apply_variant(Variant::WoGan);
        let mut trainer: Trainer<T> = Trainer::new(g.clone(), run_cfg)?;
        trainer.set_edge_replacement_rate(Some(rate));
        let out = trainer.train()?;
        let record = evaluate_embeddings(&out.embeddings, trainer.graph(), trainer.config())?;
        let metric = record
            .get("MRR")
            .or_else(|| record.get("F1"))
            .unwrap_or(0.0);
        curve.push((rate, metric));
    }
    Ok(curve)
}

// ---- generated-view degree profile ----------------------------------------------

/// New-edge mass per train-degree decile plus its rank correlation with
/// node degree.
#[derive(Debug, Clone)]
pub struct DegreeProfile {
    /// Mean thresholded new-edge endpoint count per degree decile.
    pub bucket_mass: Vec<f64>,
    /// Mean new-edge mass attached to each node.
    pub per_node_mass: Vec<f64>,
    /// Spearman rank correlation between train degree and attached mass;
    /// `None` when degenerate (no candidates, or constant mass).
    pub spearman: Option<f64>,
}

/// Profiles where a trained generator attaches new edges: samples `n_views`
/// relaxed views, counts candidate pairs at or above `threshold`, and
/// attributes each to both endpoints.
pub fn new_edge_degree_profile<T: Scalar>(
    gen: &GeneratorParams<T>,
    g: &Graph,
    n_views: usize,
    threshold: T,
    rng: &mut ChaCha8Rng,
) -> DegreeProfile {
    let n = g.n_nodes();
    let mut per_node = vec![0.0f64; n];
    if gen.n_candidates() == 0 || n_views == 0 {
        return DegreeProfile {
            bucket_mass: vec![0.0; 10],
            per_node_mass: per_node,
            spearman: None,
        };
    }
    for v in 0..n_views {
        let view = gen.sample_view(rng, v as u64);
        for (e, &p) in view.probs.iter().enumerate().skip(gen.n_edges()) {
            if p >= threshold {
                let (i, j) = view.support.pairs()[e];
                per_node[i as usize] += 1.0;
                per_node[j as usize] += 1.0;
            }
        }
    }
    per_node.iter_mut().for_each(|m| *m /= n_views as f64);
    profile_from_mass(g, per_node)
}

/// The uniform-random baseline: `n_new` non-edge pairs placed uniformly,
/// mass attributed to both endpoints.
pub fn random_new_edge_profile(g: &Graph, n_new: usize, rng: &mut ChaCha8Rng) -> DegreeProfile {
    let n = g.n_nodes();
    let mut per_node = vec![0.0f64; n];
    let mut placed = 0usize;
    let mut guard = 0usize;
    while placed < n_new && guard < 200 * n_new.max(1) {
        guard += 1;
        let a = below(rng, n) as u32;
        let b = below(rng, n) as u32;
        if a == b || g.has_edge(a.min(b), a.max(b)) {
            continue;
        }
        per_node[a as usize] += 1.0;
        per_node[b as usize] += 1.0;
        placed += 1;
    }
    profile_from_mass(g, per_node)
}

fn profile_from_mass(g: &Graph, per_node_mass: Vec<f64>) -> DegreeProfile {
    let buckets = degree_deciles(g);
    let mut bucket_mass = vec![0.0f64; 10];
    for (v, &m) in per_node_mass.iter().enumerate() {
        bucket_mass[buckets[v]] += m;
    }
    let degrees: Vec<f64> = (0..g.n_nodes()).map(|v| g.degree(v) as f64).collect();
    let spearman = spearman(&degrees, &per_node_mass);
    DegreeProfile {
        bucket_mass,
        per_node_mass,
        spearman,
    }
}

/// Average ranks (ties share the mean rank), Pearson on the rank vectors.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    if a.len() < 2 {
        return None;
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| x[i].partial_cmp(&x[j]).unwrap().then(i.cmp(&j)));
    let mut ranks = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let mut j = k;
        while j + 1 < n && x[order[j + 1]] == x[order[k]] {
            j += 1;
        }
        let mean_rank = (k + j) as f64 / 2.0 + 1.0;
        for &idx in &order[k..=j] {
            ranks[idx] = mean_rank;
        }
        k = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Random rotation matrix via Gram-Schmidt; used by the probe-rotation
/// drift report.
pub fn random_orthogonal(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while q.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| normal01(rng)).collect();
        for u in &q {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= d * ui;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            v.iter_mut().for_each(|x| *x /= norm);
            q.push(v);
        }
    }
    let mut flat = Vec::with_capacity(dim * dim);
    for row in q {
        flat.extend(row);
    }
    flat
}
