//! The joint training loop: G-Steps update the view generator, D-Steps the
//! view discriminator, E-Steps the shared embedding table, iterated until
//! convergence or the iteration budget runs out. The trainer owns the rng,
//! the optimizer state, and checkpointing; exactly one parameter group
//! changes per step kind.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::diff::{SparseMatrix, Tape, Tensor, Var};
use crate::discriminator::{adversarial_loss, bce_loss, discriminate, pool_graph, MlpParams};
use crate::encoder::{encode, encode_pairs, normalize_adjacency, normalize_pairs, EmbeddingTable};
use crate::error::{Error, Result};
use crate::generator::{
    edge_count_loss_on_tape, new_edge_loss_on_tape, regularization_loss_on_tape, relaxed_probs,
    GeneratorParams, RelaxedView,
};
use crate::graph::{build_candidate_set, split_edges, split_nodes_per_class, CandidateSet, Graph};
use crate::rng::{below, uniform01, RngHub, Stream};
use crate::scalar::Scalar;
use crate::ssl::{contrastive_loss, contrastive_loss_pooled, sample_triples, ssl_loss, bpr_loss};
use crate::optim::Adam;

/// Node count above which the contrastive denominator switches from
/// full-batch to a sampled negative pool.
pub const FULL_SOFTMAX_NODE_LIMIT: usize = 20_000;

/// Ablation variants; each maps to configuration toggles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Full,
    WoReg,
    WoGan,
    WoSsl,
    WoGcl,
    WoBpr,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::WoReg,
        Variant::WoGan,
        Variant::WoSsl,
        Variant::WoGcl,
        Variant::WoBpr,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "wo_reg" => Ok(Variant::WoReg),
            "wo_gan" => Ok(Variant::WoGan),
            "wo_ssl" => Ok(Variant::WoSsl),
            "wo_gcl" => Ok(Variant::WoGcl),
            "wo_bpr" => Ok(Variant::WoBpr),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Full => "full",
            Variant::WoReg => "wo_reg",
            Variant::WoGan => "wo_gan",
            Variant::WoSsl => "wo_ssl",
            Variant::WoGcl => "wo_gcl",
            Variant::WoBpr => "wo_bpr",
        };
        f.write_str(s)
    }
}

/// Which downstream protocol drives splits and validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Task {
    /// Classification when labels are present, link prediction otherwise.
    #[default]
    Auto,
    Link,
    Class,
}

impl Task {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Task::Auto),
            "link" => Ok(Task::Link),
            "class" => Ok(Task::Class),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }

    pub fn resolve(self, g: &Graph) -> ResolvedTask {
        match self {
            Task::Auto => {
                if g.labels().is_some() {
                    ResolvedTask::Class
                } else {
                    ResolvedTask::Link
                }
            }
            Task::Link => ResolvedTask::Link,
            Task::Class => ResolvedTask::Class,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Task::Auto => "auto",
            Task::Link => "link",
            Task::Class => "class",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolvedTask {
    Link,
    Class,
}

/// Every knob of a run; flat `key=value` text form with keys matching the
/// field names.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub tau_g: f64,
    pub lambda_g: f64,
    pub lambda_cnt: f64,
    pub lambda_new: f64,
    pub lambda_adv: f64,
    pub gamma: f64,
    pub top_k: usize,
    pub candidate_cap_factor: usize,
    pub tau_f: f64,
    pub lambda_gcl: f64,
    pub lambda_bpr: f64,
    pub negative_pool: usize,
    pub mlp_layers: usize,
    pub views_per_d_step: usize,
    /// Edge-dropout keep rate for predefined views; `None` follows `lambda_g`.
    pub dropout_keep: Option<f64>,
    pub lr: f64,
    pub n_g: usize,
    pub n_d: usize,
    pub n_e: usize,
    pub max_iters: usize,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub task: Task,
    pub split_seed: u64,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub probe_train_per_class: usize,
    pub probe_val_nodes: usize,
    pub probe_inits: usize,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            layers: 2,
            tau_g: 1e-4,
            lambda_g: 0.5,
            lambda_cnt: 1.0,
            lambda_new: 0.5,
            lambda_adv: 1.0,
            gamma: 0.75,
            top_k: 2000,
            candidate_cap_factor: 50,
            tau_f: 0.5,
            lambda_gcl: 1.0,
            lambda_bpr: 1e-4,
            negative_pool: 4096,
            mlp_layers: 2,
            views_per_d_step: 4,
            dropout_keep: None,
            lr: 1e-3,
            n_g: 1,
            n_d: 1,
            n_e: 1,
            max_iters: 5000,
            patience: 10,
            eval_every: 50,
            seed: 0,
            task: Task::Auto,
            split_seed: 0,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            probe_train_per_class: 20,
            probe_val_nodes: 500,
            probe_inits: 10,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn effective_dropout_keep(&self) -> f64 {
        self.dropout_keep.unwrap_or(self.lambda_g)
    }

    /// Applies one `key=value` assignment. Unknown keys are an error naming
    /// the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for key `{key}`")))
        }
        match key {
            "dim" => self.dim = p(key, value)?,
            "layers" => self.layers = p(key, value)?,
            "tau_g" => self.tau_g = p(key, value)?,
            "lambda_g" => self.lambda_g = p(key, value)?,
            "lambda_cnt" => self.lambda_cnt = p(key, value)?,
            "lambda_new" => self.lambda_new = p(key, value)?,
            "lambda_adv" => self.lambda_adv = p(key, value)?,
            "gamma" => self.gamma = p(key, value)?,
            "top_k" => self.top_k = p(key, value)?,
            "candidate_cap_factor" => self.candidate_cap_factor = p(key, value)?,
            "tau_f" => self.tau_f = p(key, value)?,
            "lambda_gcl" => self.lambda_gcl = p(key, value)?,
            "lambda_bpr" => self.lambda_bpr = p(key, value)?,
            "negative_pool" => self.negative_pool = p(key, value)?,
            "mlp_layers" => self.mlp_layers = p(key, value)?,
            "views_per_d_step" => self.views_per_d_step = p(key, value)?,
            "dropout_keep" => self.dropout_keep = Some(p(key, value)?),
            "lr" => self.lr = p(key, value)?,
            "n_g" => self.n_g = p(key, value)?,
            "n_d" => self.n_d = p(key, value)?,
            "n_e" => self.n_e = p(key, value)?,
            "max_iters" => self.max_iters = p(key, value)?,
            "patience" => self.patience = p(key, value)?,
            "eval_every" => self.eval_every = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "task" => self.task = Task::parse(value)?,
            "split_seed" => self.split_seed = p(key, value)?,
            "split_train" => self.split_train = p(key, value)?,
            "split_val" => self.split_val = p(key, value)?,
            "split_test" => self.split_test = p(key, value)?,
            "probe_train_per_class" => self.probe_train_per_class = p(key, value)?,
            "probe_val_nodes" => self.probe_val_nodes = p(key, value)?,
            "probe_inits" => self.probe_inits = p(key, value)?,
            "variant" => self.variant = Variant::parse(value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses flat `key=value` text; `#` lines are comments.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_kv(text)?;
        Ok(cfg)
    }

    pub fn merge_kv(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Serializes every field as `key=value`, one per line, fixed order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("dim", self.dim.to_string());
        kv("layers", self.layers.to_string());
        kv("tau_g", self.tau_g.to_string());
        kv("lambda_g", self.lambda_g.to_string());
        kv("lambda_cnt", self.lambda_cnt.to_string());
        kv("lambda_new", self.lambda_new.to_string());
        kv("lambda_adv", self.lambda_adv.to_string());
        kv("gamma", self.gamma.to_string());
        kv("top_k", self.top_k.to_string());
        kv("candidate_cap_factor", self.candidate_cap_factor.to_string());
        kv("tau_f", self.tau_f.to_string());
        kv("lambda_gcl", self.lambda_gcl.to_string());
        kv("lambda_bpr", self.lambda_bpr.to_string());
        kv("negative_pool", self.negative_pool.to_string());
        kv("mlp_layers", self.mlp_layers.to_string());
        kv("views_per_d_step", self.views_per_d_step.to_string());
        kv("dropout_keep", self.effective_dropout_keep().to_string());
        kv("lr", self.lr.to_string());
        kv("n_g", self.n_g.to_string());
        kv("n_d", self.n_d.to_string());
        kv("n_e", self.n_e.to_string());
        kv("max_iters", self.max_iters.to_string());
        kv("patience", self.patience.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("seed", self.seed.to_string());
        kv("task", self.task.to_string());
        kv("split_seed", self.split_seed.to_string());
        kv("split_train", self.split_train.to_string());
        kv("split_val", self.split_val.to_string());
        kv("split_test", self.split_test.to_string());
        kv("probe_train_per_class", self.probe_train_per_class.to_string());
        kv("probe_val_nodes", self.probe_val_nodes.to_string());
        kv("probe_inits", self.probe_inits.to_string());
        kv("variant", self.variant.to_string());
        out
    }

    /// Rewrites the numeric toggles implied by the variant field.
    pub fn apply_variant(&mut self, variant: Variant) {
        self.variant = variant;
        match variant {
            Variant::Full => {}
            Variant::WoReg => {
                self.lambda_cnt = 0.0;
                self.lambda_new = 0.0;
            }
            Variant::WoGan => {
                self.n_g = 0;
                self.n_d = 0;
            }
            Variant::WoSsl => {
                self.n_e = 0;
            }
            Variant::WoGcl => {
                self.lambda_gcl = 0.0;
            }
            Variant::WoBpr => {
                self.lambda_bpr = 0.0;
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 1 {
            return Err(Error::Config("dim must be >= 1".into()));
        }
        if !(self.tau_g > 0.0 && self.tau_g <= 1.0) {
            return Err(Error::Config("tau_g must lie in (0, 1]".into()));
        }
        if self.tau_f <= 0.0 {
            return Err(Error::Config("tau_f must be positive".into()));
        }
        for (name, v) in [
            ("lambda_g", self.lambda_g),
            ("lambda_cnt", self.lambda_cnt),
            ("lambda_new", self.lambda_new),
            ("lambda_adv", self.lambda_adv),
            ("lambda_gcl", self.lambda_gcl),
            ("lambda_bpr", self.lambda_bpr),
        ] {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be nonnegative")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1]".into()));
        }
        let keep = self.effective_dropout_keep();
        if !(0.0..=1.0).contains(&keep) {
            return Err(Error::Config("dropout_keep must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// The three trainable parameter groups.
pub struct ParamStore<T> {
    pub generator: GeneratorParams<T>,
    pub mlp: MlpParams<T>,
    pub embedding: EmbeddingTable<T>,
}

/// An edge subset produced by predefined augmentation (edge dropout).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteView {
    pub kept: Vec<(u32, u32)>,
}

/// One line of the run history: per-step losses or per-evaluation metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRecord {
    pub iter: usize,
    pub phase: &'static str,
    pub values: Vec<(&'static str, f64)>,
}

impl HistoryRecord {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == key).map(|&(_, v)| v)
    }

    pub fn to_line(&self) -> String {
        let mut s = format!("iter={} phase={}", self.iter, self.phase);
        for (k, v) in &self.values {
            s.push_str(&format!(" {k}={v}"));
        }
        s
    }
}

/// Result of a training run.
pub struct TrainOutput<T> {
    /// Readout of the clean training graph under the final table, one row
    /// per node.
    pub embeddings: Tensor<T>,
    pub history: Vec<HistoryRecord>,
    pub iters_run: usize,
    pub best_val_metric: Option<f64>,
}

pub struct Trainer<T: Scalar> {
    cfg: TrainConfig,
    graph: Graph,
    train_graph: Graph,
    candidates: CandidateSet,
    params: ParamStore<T>,
    opt_w: Adam<T>,
    opt_table: Adam<T>,
    opt_mlp: Vec<(Adam<T>, Adam<T>)>,
    hub: RngHub,
    noise_draws: u64,
    train_adj_norm: Arc<SparseMatrix<T>>,
    gg_replacement_rate: Option<f64>,
    history: Vec<HistoryRecord>,
    checkpoint_dir: Option<PathBuf>,
    iter: usize,
    task: ResolvedTask,
}

impl<T: Scalar> Trainer<T> {
    /// Builds a trainer over a graph, splitting it per the config when it
    /// carries no splits yet.
    pub fn new(graph: Graph, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let task = cfg.task.resolve(&graph);
        let graph = match task {
            ResolvedTask::Link if graph.edge_split().is_none() => split_edges(
                &graph,
                (cfg.split_train, cfg.split_val, cfg.split_test),
                cfg.split_seed,
            )?,
            ResolvedTask::Class if graph.node_split().is_none() => split_nodes_per_class(
                &graph,
                cfg.probe_train_per_class,
                cfg.probe_val_nodes,
                cfg.split_seed,
            )?,
            _ => graph,
        };
        let train_graph = graph.train_view();
        if train_graph.n_edges() == 0 {
            return Err(Error::EmptyGraph("training graph has no edges".into()));
        }
        let candidates = build_candidate_set(&train_graph, cfg.top_k, cfg.candidate_cap_factor);
        let mut hub = RngHub::new(cfg.seed);

        let embedding = match train_graph.features() {
            Some(f) => EmbeddingTable::init_from_features(f, cfg.dim, hub.stream(Stream::Init)),
            None => EmbeddingTable::init_random(train_graph.n_nodes(), cfg.dim, hub.stream(Stream::Init)),
        };
        let generator = GeneratorParams::init(
            &train_graph,
            &candidates,
            T::cast(cfg.lambda_g),
            T::cast(cfg.gamma),
            T::cast(cfg.tau_g),
        )?;
        let mlp = MlpParams::init_random(2 * cfg.dim, 2 * cfg.dim, cfg.mlp_layers, hub.stream(Stream::Init));

        let lr = T::cast(cfg.lr);
        let opt_w = Adam::new(generator.weights().len(), lr);
        let opt_table = Adam::new(embedding.tensor().len(), lr);
        let opt_mlp = mlp
            .layers()
            .iter()
            .map(|(w, b)| (Adam::new(w.len(), lr), Adam::new(b.len(), lr)))
            .collect();

        let train_adj_norm = Arc::new(normalize_adjacency(&train_graph.adjacency::<T>()));

        Ok(Self {
            cfg,
            graph,
            train_graph,
            candidates,
            params: ParamStore {
                generator,
                mlp,
                embedding,
            },
            opt_w,
            opt_table,
            opt_mlp,
            hub,
            noise_draws: 0,
            train_adj_norm,
            gg_replacement_rate: None,
            history: Vec::new(),
            checkpoint_dir: None,
            iter: 0,
            task,
        })
    }

    /// Turns the generator-side view into a dropout view whose kept edges
    /// are partially replaced: a `rate` fraction is dropped and the same
    /// count of uniformly random non-edges added. At rate 0 the view is a
    /// plain dropout view. Used by the edge-replacement experiment.
    pub fn set_edge_replacement_rate(&mut self, rate: Option<f64>) {
        if let Some(r) = rate {
            assert!((0.0..1.0).contains(&r), "replacement rate must lie in [0, 1)");
        }
        self.gg_replacement_rate = rate;
    }

    pub fn set_checkpoint_dir(&mut self, dir: Option<PathBuf>) {
        self.checkpoint_dir = dir;
    }

    /// Swaps in an externally built parameter store (tests use zero-init
    /// discriminators, for instance). Optimizer state is reset to match.
    pub fn replace_params(&mut self, params: ParamStore<T>) {
        let lr = T::cast(self.cfg.lr);
        self.opt_w = Adam::new(params.generator.weights().len(), lr);
        self.opt_table = Adam::new(params.embedding.tensor().len(), lr);
        self.opt_mlp = params
            .mlp
            .layers()
            .iter()
            .map(|(w, b)| (Adam::new(w.len(), lr), Adam::new(b.len(), lr)))
            .collect();
        self.params = params;
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn train_graph(&self) -> &Graph {
        &self.train_graph
    }

    pub fn task(&self) -> ResolvedTask {
        self.task
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    /// Readout of the clean training graph under the current table.
    pub fn current_embeddings(&self) -> Tensor<T> {
        let mut tape = Tape::new();
        let table = tape.constant(self.params.embedding.tensor().detached());
        let out = encode(&mut tape, table, &self.train_adj_norm, self.cfg.layers);
        tape.value(out.readout).detached()
    }

    fn next_draw_id(&mut self) -> u64 {
        let id = self.noise_draws;
        self.noise_draws += 1;
        id
    }

    /// Edge dropout over the training edges: keeps each edge independently
    /// with the configured keep rate.
    pub fn sample_dropout_view(&mut self) -> DiscreteView {
        let keep = self.cfg.effective_dropout_keep();
        let rng = self.hub.stream(Stream::Dropout);
        let kept = self
            .train_graph
            .edges()
            .iter()
            .copied()
            .filter(|_| uniform01(rng) < keep)
            .collect();
        DiscreteView { kept }
    }

    fn adj_norm_of_discrete(&self, view: &DiscreteView) -> Arc<SparseMatrix<T>> {
        let weights = vec![T::one(); view.kept.len()];
        let adj =
            SparseMatrix::symmetric_from_pairs(self.train_graph.n_nodes(), &view.kept, &weights);
        Arc::new(normalize_adjacency(&adj))
    }

    fn adj_norm_of_relaxed(&self, view: &RelaxedView<T>) -> Arc<SparseMatrix<T>> {
        Arc::new(normalize_adjacency(&view.support.to_sparse(&view.probs)))
    }

    /// A detached generator-side view for D- and E-Steps: a partially
    /// replaced dropout view in edge-replacement mode, an extra dropout view
    /// under `wo_gan`, otherwise a fresh relaxed view from the current
    /// weights.
    fn generator_side_adj(&mut self) -> Arc<SparseMatrix<T>> {
        if let Some(rate) = self.gg_replacement_rate {
            let view = self.sample_replaced_view(rate);
            return self.adj_norm_of_discrete(&view);
        }
        if self.cfg.variant == Variant::WoGan {
            let view = self.sample_dropout_view();
            return self.adj_norm_of_discrete(&view);
        }
        let id = self.next_draw_id();
        let view = self
            .params
            .generator
            .sample_view(self.hub.stream(Stream::Noise), id);
        self.adj_norm_of_relaxed(&view)
    }

    /// Dropout view with a `rate` fraction of its kept edges swapped for
    /// uniformly random non-edges of the training graph.
    fn sample_replaced_view(&mut self, rate: f64) -> DiscreteView {
        let mut view = self.sample_dropout_view();
        let n = self.train_graph.n_nodes();
        let swap = (rate * view.kept.len() as f64).floor() as usize;
        let rng = self.hub.stream(Stream::Dropout);
        for _ in 0..swap {
            if view.kept.is_empty() {
                break;
            }
            let victim = below(rng, view.kept.len());
            view.kept.swap_remove(victim);
        }
        let mut added = 0usize;
        let mut guard = 0usize;
        while added < swap && guard < 100 * swap.max(1) {
            guard += 1;
            let a = below(rng, n) as u32;
            let b = below(rng, n) as u32;
            if a == b {
                continue;
            }
            let pair = (a.min(b), a.max(b));
            if self.train_graph.has_edge(pair.0, pair.1) || view.kept.contains(&pair) {
                continue;
            }
            view.kept.push(pair);
            added += 1;
        }
        view.kept.sort_unstable();
        view
    }

    fn abort_with_checkpoint(&mut self, op: &'static str) -> Error {
        log::error!("non-finite value in `{op}` at iteration {}; writing diagnostic checkpoint", self.iter);
        if let Some(dir) = self.checkpoint_dir.clone() {
            let _ = self.save_checkpoint(&dir.join("diagnostic"));
        }
        Error::NonFinite { op }
    }

    /// One generator update: sample a relaxed view, score it against the
    /// frozen discriminator, combine with the structural regularizers, and
    /// step the edge weights.
    pub fn g_step(&mut self) -> Result<HistoryRecord> {
        let id = self.next_draw_id();
        let noise = self
            .params
            .generator
            .sample_noise(self.hub.stream(Stream::Noise));
        let tau = self.params.generator.tau_g();
        let lambda_g = T::cast(self.cfg.lambda_g);

        let mut tape: Tape<T> = Tape::new();
        let w = tape.leaf(self.params.generator.weights());
        let probs = relaxed_probs(&mut tape, w, &noise, tau);
        let cnt = edge_count_loss_on_tape(&mut tape, probs, self.params.generator.n_edges(), lambda_g);
        let mask = tape.constant(self.params.generator.candidate_mask());
        let new = new_edge_loss_on_tape(&mut tape, probs, mask);
        let reg = regularization_loss_on_tape(
            &mut tape,
            cnt,
            new,
            T::cast(self.cfg.lambda_cnt),
            T::cast(self.cfg.lambda_new),
        );

        let (loss, l_adv) = if self.cfg.lambda_adv > 0.0 {
            let sid = tape.support(Arc::clone(self.params.generator.support()));
            let norm_vals = normalize_pairs(&mut tape, sid, probs);
            let table = tape.constant(self.params.embedding.tensor().detached());
            let enc = encode_pairs(&mut tape, table, sid, norm_vals, self.cfg.layers);
            let pooled = pool_graph(&mut tape, enc.readout);
            let mlp_vars: Vec<(Var, Var)> = self
                .params
                .mlp
                .layers()
                .iter()
                .map(|(wt, b)| {
                    let wv = tape.constant(wt.detached());
                    let bv = tape.constant(b.detached());
                    (wv, bv)
                })
                .collect();
            let p_g = discriminate(&mut tape, pooled, &mlp_vars);
            let adv = adversarial_loss(&mut tape, p_g);
            let weighted = tape.scale(adv, T::cast(self.cfg.lambda_adv));
            let total = tape.add(reg, weighted);
            (total, tape.value(adv).item().as_f64())
        } else {
            (reg, 0.0)
        };

        if let Some(op) = tape.poisoned() {
            return Err(self.abort_with_checkpoint(op));
        }
        tape.backward(loss);
        let grad = tape.grad(w);
        self.params.generator.weights_mut().accumulate_grad(&grad);
        self.opt_w.step(self.params.generator.weights_mut());

        let record = HistoryRecord {
            iter: self.iter,
            phase: "g",
            values: vec![
                ("draw", id as f64),
                ("l_cnt", tape.value(cnt).item().as_f64()),
                ("l_new", tape.value(new).item().as_f64()),
                ("l_adv", l_adv),
                ("total", tape.value(loss).item().as_f64()),
                ("sum_p", tape.value(probs).as_slice().iter().copied().sum::<T>().as_f64()),
            ],
        };
        self.history.push(record.clone());
        Ok(record)
    }

    /// One discriminator update over a balanced batch: dropout views labeled
    /// 1, generator views labeled 0; only the MLP parameters move.
    pub fn d_step(&mut self) -> Result<HistoryRecord> {
        let k = self.cfg.views_per_d_step.max(1);
        let mut tape: Tape<T> = Tape::new();
        let mlp_vars = self.params.mlp.leaves(&mut tape);
        let table = tape.constant(self.params.embedding.tensor().detached());

        let mut total: Option<Var> = None;
        let mut correct = 0usize;
        for label in [T::one(), T::zero()] {
            for _ in 0..k {
                let adj = if label == T::one() {
                    let view = self.sample_dropout_view();
                    self.adj_norm_of_discrete(&view)
                } else {
                    self.generator_side_adj()
                };
                let enc = encode(&mut tape, table, &adj, self.cfg.layers);
                let pooled = pool_graph(&mut tape, enc.readout);
                let p = discriminate(&mut tape, pooled, &mlp_vars);
                let pv = tape.value(p).item();
                let predicted_real = pv > T::cast(0.5);
                if predicted_real == (label == T::one()) {
                    correct += 1;
                }
                let l = bce_loss(&mut tape, p, label);
                total = Some(match total {
                    Some(acc) => tape.add(acc, l),
                    None => l,
                });
            }
        }
        let total = total.expect("at least one view per side");
        let loss = tape.scale(total, T::cast(1.0 / (2 * k) as f64));
        if let Some(op) = tape.poisoned() {
            return Err(self.abort_with_checkpoint(op));
        }
        tape.backward(loss);
        for (li, &(wv, bv)) in mlp_vars.iter().enumerate() {
            let gw = tape.grad(wv);
            let gb = tape.grad(bv);
            let (w, b) = &mut self.params.mlp.layers_mut()[li];
            w.accumulate_grad(&gw);
            b.accumulate_grad(&gb);
            self.opt_mlp[li].0.step(w);
            self.opt_mlp[li].1.step(b);
        }
        let record = HistoryRecord {
            iter: self.iter,
            phase: "d",
            values: vec![
                ("bce", tape.value(loss).item().as_f64()),
                ("accuracy", correct as f64 / (2 * k) as f64),
            ],
        };
        self.history.push(record.clone());
        Ok(record)
    }

    /// One encoder update: contrastive loss between a dropout view and a
    /// generator view, BPR on the clean training graph, combined; only the
    /// embedding table moves.
    pub fn e_step(&mut self) -> Result<HistoryRecord> {
        if self.cfg.lambda_gcl == 0.0 && self.cfg.lambda_bpr == 0.0 {
            let record = HistoryRecord {
                iter: self.iter,
                phase: "e",
                values: vec![("gcl", 0.0), ("bpr", 0.0), ("total", 0.0)],
            };
            self.history.push(record.clone());
            return Ok(record);
        }

        let mut tape: Tape<T> = Tape::new();
        let table = tape.leaf(self.params.embedding.tensor());

        let gcl = if self.cfg.lambda_gcl > 0.0 {
            let dp_view = self.sample_dropout_view();
            let adj_p = self.adj_norm_of_discrete(&dp_view);
            let adj_g = self.generator_side_adj();
            let enc_p = encode(&mut tape, table, &adj_p, self.cfg.layers);
            let enc_g = encode(&mut tape, table, &adj_g, self.cfg.layers);
            let n = self.train_graph.n_nodes();
            if self.cfg.negative_pool > 0 && n > FULL_SOFTMAX_NODE_LIMIT {
                let rng = self.hub.stream(Stream::NegPool);
                let pool: Vec<usize> =
                    (0..self.cfg.negative_pool).map(|_| below(rng, n)).collect();
                contrastive_loss_pooled(
                    &mut tape,
                    enc_p.readout,
                    enc_g.readout,
                    T::cast(self.cfg.tau_f),
                    &pool,
                )
            } else {
                contrastive_loss(&mut tape, enc_p.readout, enc_g.readout, T::cast(self.cfg.tau_f))
            }
        } else {
            tape.constant_scalar(T::zero())
        };

        let bpr = if self.cfg.lambda_bpr > 0.0 {
            let count = self.train_graph.n_edges();
            let triples = sample_triples(&self.train_graph, count, self.hub.stream(Stream::Triples));
            if triples.is_empty() {
                log::debug!("no BPR triples available; skipping ranking term");
                tape.constant_scalar(T::zero())
            } else {
                let enc = encode(&mut tape, table, &self.train_adj_norm, self.cfg.layers);
                bpr_loss(&mut tape, enc.readout, &triples)
            }
        } else {
            tape.constant_scalar(T::zero())
        };

        let loss = ssl_loss(
            &mut tape,
            gcl,
            bpr,
            T::cast(self.cfg.lambda_gcl),
            T::cast(self.cfg.lambda_bpr),
        );
        if let Some(op) = tape.poisoned() {
            return Err(self.abort_with_checkpoint(op));
        }
        tape.backward(loss);
        let grad = tape.grad(table);
        self.params.embedding.tensor_mut().accumulate_grad(&grad);
        self.opt_table.step(self.params.embedding.tensor_mut());

        let record = HistoryRecord {
            iter: self.iter,
            phase: "e",
            values: vec![
                ("gcl", tape.value(gcl).item().as_f64()),
                ("bpr", tape.value(bpr).item().as_f64()),
                ("total", tape.value(loss).item().as_f64()),
            ],
        };
        self.history.push(record.clone());
        Ok(record)
    }

    /// Validation metric under the current embeddings: macro F1 of a
    /// single-init linear probe on the val nodes (classification) or MRR
    /// over the val edges (link prediction).
    pub fn validation_metric(&mut self) -> f64 {
        let emb = self.current_embeddings();
        match self.task {
            ResolvedTask::Class => {
                crate::eval::probe_f1_on(&emb, &self.graph, crate::eval::ProbeTarget::Val, 1, self.hub.stream(Stream::Probe))
            }
            ResolvedTask::Link => {
                crate::eval::mrr_on_split(&emb, &self.graph, crate::eval::RankTarget::Val)
            }
        }
    }

    /// Runs the full loop: `n_g` G-Steps, `n_d` D-Steps, `n_e` E-Steps per
    /// outer iteration, with periodic validation and early stopping.
    pub fn train(&mut self) -> Result<TrainOutput<T>> {
        let mut best: Option<f64> = None;
        let mut stale = 0usize;
        while self.iter < self.cfg.max_iters {
            for _ in 0..self.cfg.n_g {
                self.g_step()?;
            }
            for _ in 0..self.cfg.n_d {
                self.d_step()?;
            }
            for _ in 0..self.cfg.n_e {
                self.e_step()?;
            }
            self.iter += 1;

            if self.cfg.eval_every > 0 && self.iter % self.cfg.eval_every == 0 {
                let metric = self.validation_metric();
                let record = HistoryRecord {
                    iter: self.iter,
                    phase: "eval",
                    values: vec![("val_metric", metric)],
                };
                self.history.push(record);
                if let Some(dir) = self.checkpoint_dir.clone() {
                    self.save_checkpoint(&dir)?;
                }
                let improved = best.map_or(true, |b| metric > b + 1e-12);
                if improved {
                    best = Some(metric);
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= self.cfg.patience {
                        log::info!(
                            "early stop at iteration {} (no improvement in {} evaluations)",
                            self.iter,
                            stale
                        );
                        break;
                    }
                }
            }
        }
        if let Some(dir) = self.checkpoint_dir.clone() {
            self.save_checkpoint(&dir)?;
        }
        Ok(TrainOutput {
            embeddings: self.current_embeddings(),
            history: self.history.clone(),
            iters_run: self.iter,
            best_val_metric: best,
        })
    }

    // ---- checkpointing -------------------------------------------------------

    /// Writes {generator, discriminator, embeddings, optimizer, rng-state}
    /// files plus a manifest with the iteration count. Each file is written
    /// to a temp path and renamed into place.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;

        // generator: header then one `i j w` line per support pair
        let gen = &self.params.generator;
        let mut g_text = format!(
            "n_nodes={} n_edges={} n_candidates={} tau_g={} lambda_g={} gamma={}\n",
            gen.support().n_nodes(),
            gen.n_edges(),
            gen.n_candidates(),
            gen.tau_g().as_f64(),
            gen.lambda_g().as_f64(),
            gen.gamma().as_f64(),
        );
        for (e, &(i, j)) in gen.support().pairs().iter().enumerate() {
            g_text.push_str(&format!("{i} {j} {}\n", gen.weights().as_slice()[e].as_f64()));
        }
        write_atomic(&dir.join("generator.txt"), &g_text)?;

        // discriminator: layer shapes then row-major values
        let mut d_text = String::new();
        d_text.push_str(&format!("layers={}\n", self.params.mlp.n_layers()));
        for (w, b) in self.params.mlp.layers() {
            d_text.push_str(&format!("shape {} {}\n", w.rows(), w.cols()));
            d_text.push_str(&join_values(w.as_slice()));
            d_text.push('\n');
            d_text.push_str(&join_values(b.as_slice()));
            d_text.push('\n');
        }
        write_atomic(&dir.join("discriminator.txt"), &d_text)?;

        // embedding table
        let t = self.params.embedding.tensor();
        let mut e_text = format!("shape {} {}\n", t.rows(), t.cols());
        for r in 0..t.rows() {
            e_text.push_str(&join_values(t.row(r)));
            e_text.push('\n');
        }
        write_atomic(&dir.join("embeddings.txt"), &e_text)?;

        // optimizer moments
        let mut o_text = String::new();
        let dump = |name: &str, opt: &Adam<T>, out: &mut String| {
            let (m, v, step) = opt.state();
            out.push_str(&format!("group={name} step={step}\n"));
            out.push_str(&join_values(m));
            out.push('\n');
            out.push_str(&join_values(v));
            out.push('\n');
        };
        dump("w", &self.opt_w, &mut o_text);
        dump("table", &self.opt_table, &mut o_text);
        for (li, (ow, ob)) in self.opt_mlp.iter().enumerate() {
            dump(&format!("mlp{li}_w"), ow, &mut o_text);
            dump(&format!("mlp{li}_b"), ob, &mut o_text);
        }
        write_atomic(&dir.join("optimizer.txt"), &o_text)?;

        // rng stream positions and the view-draw counter
        let mut r_text = format!("seed={} draws={}\n", self.hub.seed(), self.noise_draws);
        for pos in self.hub.positions() {
            r_text.push_str(&format!("{pos}\n"));
        }
        write_atomic(&dir.join("rng_state.txt"), &r_text)?;

        write_atomic(
            &dir.join("manifest.txt"),
            &format!("iteration={}\nseed={}\n", self.iter, self.cfg.seed),
        )?;
        Ok(())
    }
}

fn join_values<T: Scalar>(vals: &[T]) -> String {
    let mut s = String::new();
    for (k, v) in vals.iter().enumerate() {
        if k > 0 {
            s.push(' ');
        }
        s.push_str(&v.as_f64().to_string());
    }
    s
}

/// Write-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use std::f64::consts::LN_2;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            dim: 8,
            layers: 2,
            tau_g: 0.1,
            lambda_g: 0.5,
            gamma: 0.5,
            top_k: 10,
            lr: 0.01,
            lambda_bpr: 0.1,
            max_iters: 3,
            eval_every: 0,
            views_per_d_step: 2,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn small_graph() -> Graph {
        synth::gnm_random(20, 40, 3)
    }

    #[test]
    fn config_kv_roundtrip_and_unknown_key() {
        let cfg = small_cfg();
        let text = cfg.to_kv();
        let parsed = TrainConfig::parse_kv(&text).unwrap();
        // dropout_keep serializes resolved, so compare resolved forms
        assert_eq!(parsed.to_kv(), text);
        let err = TrainConfig::parse_kv("no_such_key=1").unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
    }

    fn group_bytes<T: Scalar>(t: &Trainer<T>) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let w = t.params().generator.weights().value_bytes();
        let mut mlp = Vec::new();
        for (wt, b) in t.params().mlp.layers() {
            mlp.extend(wt.value_bytes());
            mlp.extend(b.value_bytes());
        }
        let table = t.params().embedding.tensor().value_bytes();
        (w, mlp, table)
    }

    #[test]
    fn each_step_touches_exactly_one_parameter_group() {
        let mut t: Trainer<f64> = Trainer::new(small_graph(), small_cfg()).unwrap();

        let (w0, mlp0, table0) = group_bytes(&t);
        t.g_step().unwrap();
        let (w1, mlp1, table1) = group_bytes(&t);
        assert_ne!(w0, w1, "g_step must move the generator weights");
        assert_eq!(mlp0, mlp1, "g_step must not touch the MLP");
        assert_eq!(table0, table1, "g_step must not touch the table");

        t.d_step().unwrap();
        let (w2, mlp2, table2) = group_bytes(&t);
        assert_eq!(w1, w2, "d_step must not touch the generator");
        assert_ne!(mlp1, mlp2, "d_step must move the MLP");
        assert_eq!(table1, table2, "d_step must not touch the table");

        t.e_step().unwrap();
        let (w3, mlp3, table3) = group_bytes(&t);
        assert_eq!(w2, w3, "e_step must not touch the generator");
        assert_eq!(mlp2, mlp3, "e_step must not touch the MLP");
        assert_ne!(table2, table3, "e_step must move the table");
    }

    #[test]
    fn same_seed_gives_bitwise_identical_history() {
        let run = || {
            let mut t: Trainer<f64> = Trainer::new(small_graph(), small_cfg()).unwrap();
            let out = t.train().unwrap();
            let lines: Vec<String> = out.history.iter().map(HistoryRecord::to_line).collect();
            (lines, out.embeddings.value_bytes())
        };
        let (h1, e1) = run();
        let (h2, e2) = run();
        assert_eq!(h1, h2);
        assert_eq!(e1, e2);
        assert!(!h1.is_empty());
    }

    #[test]
    fn zero_iterations_returns_initial_embeddings_and_empty_history() {
        let mut cfg = small_cfg();
        cfg.max_iters = 0;
        let mut t: Trainer<f64> = Trainer::new(small_graph(), cfg).unwrap();
        let before = t.current_embeddings().value_bytes();
        let out = t.train().unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.iters_run, 0);
        assert_eq!(out.embeddings.value_bytes(), before);
    }

    #[test]
    fn constant_discriminator_blocks_generator_gradient() {
        // zero-init MLP scores 0.5 for everything; with the regularizers off
        // the g-step loss is exactly ln 2 and the weights do not move
        let mut cfg = small_cfg();
        cfg.lambda_cnt = 0.0;
        cfg.lambda_new = 0.0;
        let mut t: Trainer<f64> = Trainer::new(small_graph(), cfg).unwrap();
        let zeros = MlpParams::zeros(2 * 8, 2 * 8, 2);
        let params = ParamStore {
            generator: GeneratorParams::init(
                t.train_graph(),
                t.candidates(),
                0.5,
                0.5,
                0.1,
            )
            .unwrap(),
            mlp: zeros,
            embedding: EmbeddingTable::from_tensor(t.params().embedding.tensor().clone()),
        };
        t.replace_params(params);
        let before = t.params().generator.weights().value_bytes();
        let rec = t.g_step().unwrap();
        assert!((rec.get("total").unwrap() - LN_2).abs() < 1e-12);
        assert_eq!(t.params().generator.weights().value_bytes(), before);
    }

    #[test]
    fn large_new_edge_penalty_shrinks_candidate_mass_every_step() {
        let mut cfg = small_cfg();
        cfg.lambda_cnt = 0.0;
        cfg.lambda_new = 10.0;
        cfg.lambda_adv = 0.0;
        cfg.tau_g = 0.2;
        cfg.lr = 0.05;
        let mut t: Trainer<f64> = Trainer::new(small_graph(), cfg).unwrap();
        let candidate_sum = |t: &Trainer<f64>| -> f64 {
            t.params().generator.weights().as_slice()[t.params().generator.n_edges()..]
                .iter()
                .sum()
        };
        let mut prev = candidate_sum(&t);
        for step in 0..10 {
            t.g_step().unwrap();
            let cur = candidate_sum(&t);
            assert!(cur < prev, "step {step}: candidate mass rose {prev} -> {cur}");
            prev = cur;
        }
    }

    #[test]
    fn zero_init_discriminator_first_batch_loss_is_ln_two() {
        let mut t: Trainer<f64> = Trainer::new(small_graph(), small_cfg()).unwrap();
        let params = ParamStore {
            generator: GeneratorParams::init(t.train_graph(), t.candidates(), 0.5, 0.5, 0.1)
                .unwrap(),
            mlp: MlpParams::zeros(2 * 8, 2 * 8, 2),
            embedding: EmbeddingTable::from_tensor(t.params().embedding.tensor().clone()),
        };
        t.replace_params(params);
        let rec = t.d_step().unwrap();
        assert!((rec.get("bce").unwrap() - LN_2).abs() < 1e-12);
    }

    #[test]
    fn e_step_with_zero_weights_is_a_no_op() {
        let mut cfg = small_cfg();
        cfg.lambda_gcl = 0.0;
        cfg.lambda_bpr = 0.0;
        let mut t: Trainer<f64> = Trainer::new(small_graph(), cfg).unwrap();
        let before = t.params().embedding.tensor().value_bytes();
        let rec = t.e_step().unwrap();
        assert_eq!(rec.get("total").unwrap(), 0.0);
        assert_eq!(t.params().embedding.tensor().value_bytes(), before);
    }

    #[test]
    fn gan_free_iteration_counts_still_sample_generator_views() {
        // n_g = n_d = 0 with the full variant keeps drawing generator-side
        // views from the frozen initialized weights
        let mut cfg = small_cfg();
        cfg.n_g = 0;
        cfg.n_d = 0;
        cfg.max_iters = 2;
        let mut t: Trainer<f64> = Trainer::new(small_graph(), cfg).unwrap();
        let w_before = t.params().generator.weights().value_bytes();
        let out = t.train().unwrap();
        assert_eq!(t.params().generator.weights().value_bytes(), w_before);
        assert!(out.history.iter().all(|r| r.phase != "g" && r.phase != "d"));
        assert!(out.history.iter().any(|r| r.phase == "e"));
    }

    #[test]
    fn checkpoint_roundtrip_restores_generator_weights() {
        let dir = tempfile::tempdir().unwrap();
        let mut t: Trainer<f64> = Trainer::new(small_graph(), small_cfg()).unwrap();
        t.g_step().unwrap();
        t.save_checkpoint(dir.path()).unwrap();
        let (pairs, weights, n_edges) =
            load_generator_weights(&dir.path().join("generator.txt")).unwrap();
        assert_eq!(pairs, t.params().generator.support().pairs());
        assert_eq!(n_edges, t.params().generator.n_edges());
        for (a, b) in weights.iter().zip(t.params().generator.weights().as_slice()) {
            assert_eq!(*a, *b, "weights must roundtrip exactly through text");
        }
        for f in [
            "generator.txt",
            "discriminator.txt",
            "embeddings.txt",
            "optimizer.txt",
            "rng_state.txt",
            "manifest.txt",
        ] {
            assert!(dir.path().join(f).exists(), "missing checkpoint file {f}");
        }
    }
}

/// Reads a generator checkpoint back into weights over its recorded support.
pub fn load_generator_weights(path: &Path) -> Result<(Vec<(u32, u32)>, Vec<f64>, usize)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Checkpoint("empty generator file".into()))?;
    let mut n_edges = None;
    for field in header.split_whitespace() {
        if let Some(v) = field.strip_prefix("n_edges=") {
            n_edges = v.parse().ok();
        }
    }
    let n_edges =
        n_edges.ok_or_else(|| Error::Checkpoint("generator header lacks n_edges".into()))?;
    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    for (ln, line) in lines.enumerate() {
        let mut it = line.split_whitespace();
        let (Some(i), Some(j), Some(w)) = (it.next(), it.next(), it.next()) else {
            return Err(Error::Checkpoint(format!("generator line {} malformed", ln + 2)));
        };
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Checkpoint(format!("bad number `{s}`")))
        };
        pairs.push((parse(i)? as u32, parse(j)? as u32));
        weights.push(parse(w)?);
    }
    Ok((pairs, weights, n_edges))
}
