//! Graph loading, validation, candidate edge sets, and data splits.
//!
//! Graphs are undirected, simple (no self-loops, no duplicate edges), and
//! immutable after construction. One edge is stored per unordered pair
//! `(i, j)` with `i < j`; the CSR adjacency mirrors both directions.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::SparseMatrix;
use crate::error::{Error, Result};
use crate::rng::shuffle;
use crate::scalar::Scalar;

/// Counters for input oddities tolerated (and logged) during ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub self_loops_dropped: usize,
    pub duplicates_merged: usize,
}

/// Per-node real-valued features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

/// Edge-index partition for link-prediction protocols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSplit {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
    pub seed: u64,
}

/// Node-index partition for classification probes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSplit {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
    pub seed: u64,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Splits {
    Edges(EdgeSplit),
    Nodes(NodeSplit),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(u32, u32)>,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    labels: Option<Vec<u32>>,
    n_classes: usize,
    features: Option<FeatureMatrix>,
    splits: Option<Splits>,
    id_map: Vec<String>,
    stats: IngestStats,
}

impl Graph {
    /// Builds a graph from raw pairs. Self-loops are dropped and duplicate
    /// pairs (in either orientation) merged, with counts recorded.
    pub fn from_pairs(n_nodes: usize, pairs: &[(u32, u32)]) -> Self {
        let mut stats = IngestStats::default();
        let mut edges: Vec<(u32, u32)> = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            assert!((a as usize) < n_nodes && (b as usize) < n_nodes, "node id out of range");
            if a == b {
                stats.self_loops_dropped += 1;
                continue;
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        stats.duplicates_merged += before - edges.len();
        let id_map = (0..n_nodes).map(|i| i.to_string()).collect();
        Self::build(n_nodes, edges, id_map, stats)
    }

    fn build(n_nodes: usize, edges: Vec<(u32, u32)>, id_map: Vec<String>, stats: IngestStats) -> Self {
        let mut row_ptr = vec![0usize; n_nodes + 1];
        for &(i, j) in &edges {
            row_ptr[i as usize + 1] += 1;
            row_ptr[j as usize + 1] += 1;
        }
        for v in 0..n_nodes {
            row_ptr[v + 1] += row_ptr[v];
        }
        let mut fill = row_ptr.clone();
        let mut col_idx = vec![0u32; edges.len() * 2];
        for &(i, j) in &edges {
            col_idx[fill[i as usize]] = j;
            fill[i as usize] += 1;
            col_idx[fill[j as usize]] = i;
            fill[j as usize] += 1;
        }
        for v in 0..n_nodes {
            col_idx[row_ptr[v]..row_ptr[v + 1]].sort_unstable();
        }
        Self {
            n_nodes,
            edges,
            row_ptr,
            col_idx,
            labels: None,
            n_classes: 0,
            features: None,
            splits: None,
            id_map,
            stats,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Unordered edge pairs, lexicographically sorted, `i < j`.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn degree(&self, v: usize) -> usize {
        self.row_ptr[v + 1] - self.row_ptr[v]
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.col_idx[self.row_ptr[v]..self.row_ptr[v + 1]]
    }

    pub fn has_edge(&self, a: u32, b: u32) -> bool {
        self.neighbors(a as usize).binary_search(&b).is_ok()
    }

    /// Sum of CSR row lengths; always `2 * n_edges`.
    pub fn csr_entry_count(&self) -> usize {
        self.col_idx.len()
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> Option<&FeatureMatrix> {
        self.features.as_ref()
    }

    pub fn splits(&self) -> Option<&Splits> {
        self.splits.as_ref()
    }

    pub fn edge_split(&self) -> Option<&EdgeSplit> {
        match &self.splits {
            Some(Splits::Edges(s)) => Some(s),
            _ => None,
        }
    }

    pub fn node_split(&self) -> Option<&NodeSplit> {
        match &self.splits {
            Some(Splits::Nodes(s)) => Some(s),
            _ => None,
        }
    }

    /// Original (file) id of a compacted node index.
    pub fn original_id(&self, v: usize) -> &str {
        &self.id_map[v]
    }

    pub fn id_map(&self) -> &[String] {
        &self.id_map
    }

    /// Unit-weight symmetric adjacency.
    pub fn adjacency<T: Scalar>(&self) -> SparseMatrix<T> {
        let weights = vec![T::one(); self.edges.len()];
        SparseMatrix::symmetric_from_pairs(self.n_nodes, &self.edges, &weights)
    }

    pub fn set_labels(&mut self, labels: Vec<u32>) {
        assert_eq!(labels.len(), self.n_nodes, "one label per node");
        self.n_classes = labels.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        self.labels = Some(labels);
    }

    pub fn set_features(&mut self, features: FeatureMatrix) {
        assert_eq!(features.data.len(), self.n_nodes * features.dim);
        self.features = Some(features);
    }

    pub fn set_splits(&mut self, splits: Splits) {
        self.splits = Some(splits);
    }

    /// Edge pairs selected by a list of edge indices.
    pub fn edge_pairs(&self, idx: &[u32]) -> Vec<(u32, u32)> {
        idx.iter().map(|&e| self.edges[e as usize]).collect()
    }

    /// Training edges: the train partition if an edge split is present,
    /// otherwise all edges.
    pub fn train_edge_pairs(&self) -> Vec<(u32, u32)> {
        match self.edge_split() {
            Some(s) => self.edge_pairs(&s.train),
            None => self.edges.clone(),
        }
    }

    /// A graph over the same nodes containing only the training edges; this
    /// is the adjacency every downstream consumer trains on. Labels,
    /// features, and node splits are carried over; edge splits are not.
    pub fn train_view(&self) -> Graph {
        let edges = self.train_edge_pairs();
        let mut g = Graph::build(self.n_nodes, edges, self.id_map.clone(), self.stats);
        if let Some(l) = &self.labels {
            g.labels = Some(l.clone());
            g.n_classes = self.n_classes;
        }
        g.features = self.features.clone();
        if let Some(Splits::Nodes(ns)) = &self.splits {
            g.splits = Some(Splits::Nodes(ns.clone()));
        }
        g
    }
}

/// Options controlling edge-list ingestion.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Skip lines starting with `#` or `%`.
    pub allow_comments: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { allow_comments: true }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Loads an edge list: one edge per line, two whitespace- or comma-separated
/// node ids, an optional third weight field that is ignored. Node ids may be
/// arbitrary tokens; they are compacted to `0..n_nodes-1` in first-appearance
/// order and the mapping is retained on the graph.
pub fn load_edge_list(path: &Path, opts: &LoadOptions) -> Result<Graph> {
    let text = fs::read_to_string(path)?;
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut id_map: Vec<String> = Vec::new();
    let mut raw_pairs: Vec<(u32, u32)> = Vec::new();
    let mut intern = |tok: &str, id_map: &mut Vec<String>| -> u32 {
        if let Some(&v) = ids.get(tok) {
            return v;
        }
        let v = id_map.len() as u32;
        ids.insert(tok.to_string(), v);
        id_map.push(tok.to_string());
        v
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (opts.allow_comments && (line.starts_with('#') || line.starts_with('%'))) {
            continue;
        }
        let cleaned = line.replace(',', " ");
        let tokens: Vec<&str> = cleaned.split_whitespace().collect();
        if tokens.len() < 2 || tokens.len() > 3 {
            return Err(parse_err(
                path,
                lineno + 1,
                format!("expected 2 node ids (plus optional weight), got {} fields", tokens.len()),
            ));
        }
        let a = intern(tokens[0], &mut id_map);
        let b = intern(tokens[1], &mut id_map);
        raw_pairs.push((a, b));
    }
    if id_map.is_empty() {
        return Err(Error::EmptyGraph(format!("{} contains no edges", path.display())));
    }

    let n_nodes = id_map.len();
    let mut stats = IngestStats::default();
    let mut edges = Vec::with_capacity(raw_pairs.len());
    for (a, b) in raw_pairs {
        if a == b {
            stats.self_loops_dropped += 1;
            continue;
        }
        edges.push((a.min(b), a.max(b)));
    }
    edges.sort_unstable();
    let before = edges.len();
    edges.dedup();
    stats.duplicates_merged += before - edges.len();
    if stats.self_loops_dropped > 0 {
        log::warn!("{}: dropped {} self-loop(s)", path.display(), stats.self_loops_dropped);
    }
    if stats.duplicates_merged > 0 {
        log::warn!("{}: merged {} duplicate edge(s)", path.display(), stats.duplicates_merged);
    }
    Ok(Graph::build(n_nodes, edges, id_map, stats))
}

/// Loads a label file: `node_id class_id` per line. Class ids are compacted
/// in first-appearance order. Nodes absent from the file get class 0 and a
/// warning.
pub fn load_labels(g: &mut Graph, path: &Path, opts: &LoadOptions) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let by_orig: HashMap<&str, u32> = g
        .id_map
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let mut class_ids: HashMap<String, u32> = HashMap::new();
    let mut labels = vec![u32::MAX; g.n_nodes()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (opts.allow_comments && (line.starts_with('#') || line.starts_with('%'))) {
            continue;
        }
        let cleaned = line.replace(',', " ");
        let tokens: Vec<&str> = cleaned.split_whitespace().collect();
        if tokens.len() != 2 {
            return Err(parse_err(path, lineno + 1, "expected `node_id class_id`"));
        }
        let Some(&node) = by_orig.get(tokens[0]) else {
            // labels for nodes outside the edge list are ignored
            continue;
        };
        let next = class_ids.len() as u32;
        let class = *class_ids.entry(tokens[1].to_string()).or_insert(next);
        labels[node as usize] = class;
    }
    let missing = labels.iter().filter(|&&l| l == u32::MAX).count();
    if missing > 0 {
        log::warn!("{}: {} node(s) missing labels, assigned class 0", path.display(), missing);
        for l in labels.iter_mut() {
            if *l == u32::MAX {
                *l = 0;
            }
        }
    }
    g.set_labels(labels);
    Ok(())
}

/// Loads a feature file: `node_id v1 v2 ... vF` per line.
pub fn load_features(g: &mut Graph, path: &Path, opts: &LoadOptions) -> Result<()> {
    let text = fs::read_to_string(path)?;
    let by_orig: HashMap<&str, u32> = g
        .id_map
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let mut dim: Option<usize> = None;
    let mut data: Vec<f64> = Vec::new();
    let mut seen = vec![false; g.n_nodes()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (opts.allow_comments && (line.starts_with('#') || line.starts_with('%'))) {
            continue;
        }
        let cleaned = line.replace(',', " ");
        let tokens: Vec<&str> = cleaned.split_whitespace().collect();
        if tokens.len() < 2 {
            return Err(parse_err(path, lineno + 1, "expected `node_id v1 ... vF`"));
        }
        let f = tokens.len() - 1;
        match dim {
            None => {
                dim = Some(f);
                data = vec![0.0; g.n_nodes() * f];
            }
            Some(d) if d != f => {
                return Err(parse_err(path, lineno + 1, format!("feature width {f} != {d}")));
            }
            _ => {}
        }
        let Some(&node) = by_orig.get(tokens[0]) else {
            continue;
        };
        for (k, tok) in tokens[1..].iter().enumerate() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad float `{tok}`")))?;
            data[node as usize * f + k] = v;
        }
        seen[node as usize] = true;
    }
    let dim = dim.ok_or_else(|| Error::EmptyGraph(format!("{} contains no features", path.display())))?;
    let missing = seen.iter().filter(|&&s| !s).count();
    if missing > 0 {
        log::warn!("{}: {} node(s) missing features, zero-filled", path.display(), missing);
    }
    g.set_features(FeatureMatrix { dim, data });
    Ok(())
}

/// Non-edges eligible to appear as new edges in generated views.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pairs: Vec<(u32, u32)>,
}

impl CandidateSet {
    /// Builds a candidate set from explicit pairs (`i < j`, sorted, deduplicated).
    pub fn from_pairs(mut pairs: Vec<(u32, u32)>) -> Self {
        for &(i, j) in &pairs {
            assert!(i < j, "candidate pairs must satisfy i < j");
        }
        pairs.sort_unstable();
        pairs.dedup();
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// All non-edges `(i, j)`, `i < j`, with at least one endpoint among the
/// `top_k` highest-degree nodes (ties broken by lower node id), sorted
/// lexicographically. The result is capped at `cap_factor * n_edges` pairs,
/// truncating in hub order so the highest-degree candidates survive.
pub fn build_candidate_set(g: &Graph, top_k: usize, cap_factor: usize) -> CandidateSet {
    assert!(top_k >= 1, "top_k must be at least 1");
    let n = g.n_nodes();
    let cap = cap_factor.saturating_mul(g.n_edges());
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by_key(|&v| (std::cmp::Reverse(g.degree(v as usize)), v));
    order.truncate(top_k.min(n));
    let mut is_hub = vec![false; n];
    for &h in &order {
        is_hub[h as usize] = true;
    }

    let mut seen: std::collections::HashSet<(u32, u32)> = std::collections::HashSet::new();
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    'outer: for &h in &order {
        let h_us = h as usize;
        let mut nbrs = g.neighbors(h_us).iter().copied().peekable();
        for j in 0..n as u32 {
            if j == h {
                continue;
            }
            while nbrs.peek().is_some_and(|&x| x < j) {
                nbrs.next();
            }
            if nbrs.peek() == Some(&j) {
                continue; // existing edge
            }
            let pair = (h.min(j), h.max(j));
            // avoid double-insert when both endpoints are hubs
            if is_hub[j as usize] && seen.contains(&pair) {
                continue;
            }
            if is_hub[j as usize] {
                seen.insert(pair);
            }
            pairs.push(pair);
            if pairs.len() >= cap {
                break 'outer;
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    CandidateSet { pairs }
}

/// Randomly partitions the edges into train/val/test by the given fractions.
/// Sizes follow the floor-then-remainder-to-train rule: val and test take
/// `floor(fraction * m)` edges each and train receives the rest.
pub fn split_edges(g: &Graph, ratios: (f64, f64, f64), seed: u64) -> Result<Graph> {
    let (tr, va, te) = ratios;
    if tr < 0.0 || va < 0.0 || te < 0.0 || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be nonnegative and sum to 1, got {tr}/{va}/{te}"
        )));
    }
    let m = g.n_edges();
    let n_val = (va * m as f64).floor() as usize;
    let n_test = (te * m as f64).floor() as usize;
    let n_train = m - n_val - n_test;

    let mut idx: Vec<u32> = (0..m as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle(&mut rng, &mut idx);
    let mut train: Vec<u32> = idx[..n_train].to_vec();
    let mut val: Vec<u32> = idx[n_train..n_train + n_val].to_vec();
    let mut test: Vec<u32> = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let mut out = g.clone();
    out.set_splits(Splits::Edges(EdgeSplit {
        train,
        val,
        test,
        seed,
    }));

    // nodes that lose every train edge are permitted, but worth a note
    let tv = out.train_view();
    let isolated = (0..tv.n_nodes()).filter(|&v| tv.degree(v) == 0 && g.degree(v) > 0).count();
    if isolated > 0 {
        log::info!("edge split left {isolated} node(s) without train edges");
    }
    Ok(out)
}

/// Per-class node split: `train_per_class` training nodes from every class,
/// then up to `val_max` validation nodes, remainder test.
pub fn split_nodes_per_class(
    g: &Graph,
    train_per_class: usize,
    val_max: usize,
    seed: u64,
) -> Result<Graph> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::Config("node split requires labels".into()))?
        .to_vec();
    let n_classes = g.n_classes();
    let mut per_class: Vec<Vec<u32>> = vec![Vec::new(); n_classes];
    for (v, &c) in labels.iter().enumerate() {
        per_class[c as usize].push(v as u32);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for nodes in per_class.iter_mut() {
        shuffle(&mut rng, nodes);
        let k = train_per_class.min(nodes.len().saturating_sub(1));
        train.extend_from_slice(&nodes[..k]);
        rest.extend_from_slice(&nodes[k..]);
    }
    shuffle(&mut rng, &mut rest);
    let n_val = val_max.min(rest.len() / 2);
    let mut val: Vec<u32> = rest[..n_val].to_vec();
    let mut test: Vec<u32> = rest[n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    let provenance = format!(
        "per-class-{train_per_class}/val-{}/test-{} seed {seed}",
        val.len(),
        test.len()
    );
    let mut out = g.clone();
    out.set_splits(Splits::Nodes(NodeSplit {
        train,
        val,
        test,
        seed,
        provenance,
    }));
    Ok(out)
}
