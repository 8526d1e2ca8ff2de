//! Deterministic synthetic benchmark graphs.
//!
//! Used by the test suites and handy for smoke runs: a labeled
//! stochastic-block-model citation-style graph for node classification, and
//! a preferential-attachment interaction-style graph for link prediction.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;
use crate::rng::{below, uniform01};

/// Stochastic block model: `classes` blocks of `per_class` nodes, edge
/// probability `p_in` within a block and `p_out` across blocks. Labels are
/// the block ids.
pub fn sbm(classes: usize, per_class: usize, p_in: f64, p_out: f64, seed: u64) -> Graph {
    let n = classes * per_class;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u32> = (0..n).map(|v| (v / per_class) as u32).collect();
    let mut pairs = Vec::new();
    for i in 0..n as u32 {
        for j in (i + 1)..n as u32 {
            let p = if labels[i as usize] == labels[j as usize] {
                p_in
            } else {
                p_out
            };
            if uniform01(&mut rng) < p {
                pairs.push((i, j));
            }
        }
    }
    let mut g = Graph::from_pairs(n, &pairs);
    g.set_labels(labels);
    g
}

/// Preferential attachment: starts from a small clique and attaches each new
/// node to `m` distinct existing nodes chosen proportionally to degree.
/// Yields the heavy-tailed degree profile typical of interaction networks.
pub fn preferential_attachment(n: usize, m: usize, seed: u64) -> Graph {
    assert!(n > m + 1, "need more nodes than attachment edges");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    // endpoint pool: each edge contributes both endpoints, which makes
    // degree-proportional sampling a uniform draw from the pool
    let mut pool: Vec<u32> = Vec::new();
    let seed_nodes = m + 1;
    for i in 0..seed_nodes as u32 {
        for j in (i + 1)..seed_nodes as u32 {
            pairs.push((i, j));
            pool.push(i);
            pool.push(j);
        }
    }
    for v in seed_nodes as u32..n as u32 {
        let mut chosen: Vec<u32> = Vec::with_capacity(m);
        let mut guard = 0;
        while chosen.len() < m && guard < 10_000 {
            guard += 1;
            let t = pool[below(&mut rng, pool.len())];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        for t in chosen {
            pairs.push((t.min(v), t.max(v)));
            pool.push(t);
            pool.push(v);
        }
    }
    Graph::from_pairs(n, &pairs)
}

/// Erdos-Renyi G(n, m): exactly `m` distinct edges chosen uniformly.
pub fn gnm_random(n: usize, m: usize, seed: u64) -> Graph {
    let max_edges = n * (n - 1) / 2;
    assert!(m <= max_edges, "too many edges requested");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = std::collections::HashSet::new();
    let mut pairs = Vec::with_capacity(m);
    while pairs.len() < m {
        let a = below(&mut rng, n) as u32;
        let b = below(&mut rng, n) as u32;
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if chosen.insert(pair) {
            pairs.push(pair);
        }
    }
    Graph::from_pairs(n, &pairs)
}
