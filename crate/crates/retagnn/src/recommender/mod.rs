//! Full model assembly: primitive embeddings, long/short-term message
//! passing and self-attention pipelines, embedding fusion, scoring, and the
//! training loss.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CheckpointHeader};
pub use config::{AblationFlags, ConfigError, ModelConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{GraphCache, NodeKind, NodeRef};
use crate::numkernel::{Tape, Tensor, TensorMap, Var};
use crate::ragnn::{stack_forward, LayerVars, StackOptions, StackVars, Topology};
use crate::ssa::{ssa_forward, SsaVars};
use crate::subgraph::{extract_for_sample, EnclosingSubgraph, ExtractOptions};
use crate::ingest::TrainingSample;

/// Frozen random base vectors, derived on demand from (seed, kind, index) so
/// unseen nodes and foreign catalogs get embeddings without any stored state.
#[derive(Debug, Clone, Copy)]
pub struct PrimitiveBases {
    seed: u64,
    dim: usize,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl PrimitiveBases {
    pub fn new(seed: u64, dim: usize) -> Self {
        PrimitiveBases { seed, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fill(&self, node: NodeRef, out: &mut [f64]) {
        let kind_tag = match node.kind {
            NodeKind::User => 1u64,
            NodeKind::Item => 2,
            NodeKind::Attr => 3,
        };
        let stream = splitmix(self.seed ^ splitmix((kind_tag << 32) | node.index as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let half = 0.5;
        for v in out.iter_mut() {
            *v = rand::Rng::random_range(&mut rng, -half..half);
        }
    }

    pub fn vector(&self, node: NodeRef) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.fill(node, &mut out);
        out
    }

    pub fn matrix(&self, nodes: &[NodeRef]) -> Vec<f64> {
        let mut out = vec![0.0; nodes.len() * self.dim];
        for (row, &node) in nodes.iter().enumerate() {
            self.fill(node, &mut out[row * self.dim..(row + 1) * self.dim]);
        }
        out
    }

    pub fn item_matrix(&self, n_items: usize) -> Vec<f64> {
        let nodes: Vec<NodeRef> = (0..n_items as u32).map(NodeRef::item).collect();
        self.matrix(&nodes)
    }
}

/// The transferable parameter set: every learnable tensor, keyed by name.
/// No shape depends on catalog sizes, which is what makes the set portable
/// across users and datasets.
#[derive(Debug, Clone)]
pub struct ParamSet {
    tensors: TensorMap,
}

impl ParamSet {
    /// Names and shapes, in creation order, for a given configuration.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let d = config.dim;
        let pi = config.subsession_count();
        let fused = d * (1 + pi);
        let mut shapes = Vec::new();
        let ffn = |shapes: &mut Vec<(String, Vec<usize>)>, prefix: &str, input: usize| {
            shapes.push((format!("{prefix}.w1"), vec![d, input]));
            shapes.push((format!("{prefix}.b1"), vec![d]));
            shapes.push((format!("{prefix}.w2"), vec![d, d]));
            shapes.push((format!("{prefix}.b2"), vec![d]));
        };
        ffn(&mut shapes, "embed", d);
        for (stack, depth) in [("long", config.long_layers), ("short", config.short_layers)] {
            for l in 0..depth {
                shapes.push((format!("{stack}.layer{l}.w_self"), vec![d, d]));
                for r in 0..4 {
                    shapes.push((format!("{stack}.layer{l}.w_rel{r}"), vec![d, d]));
                }
                shapes.push((format!("{stack}.layer{l}.attn"), vec![2 * d]));
            }
        }
        for term in ["long", "short"] {
            for proj in ["w_que", "w_key", "w_val"] {
                shapes.push((format!("ssa.{term}.{proj}"), vec![d, d]));
            }
        }
        ffn(&mut shapes, "fuse.user", fused);
        ffn(&mut shapes, "fuse.item", fused);
        shapes
    }

    pub fn init<R: rand::Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut tensors = TensorMap::new();
        for (name, shape) in Self::expected_shapes(config) {
            let tensor = match shape.len() {
                2 => Tensor::glorot(shape[0], shape[1], rng),
                1 if name.ends_with(".attn") => {
                    let bound = (6.0 / (shape[0] + 1) as f64).sqrt();
                    Tensor::uniform(shape, -bound, bound, rng)
                }
                _ => Tensor::zeros(shape),
            };
            tensors.insert(name, tensor.with_grad());
        }
        ParamSet { tensors }
    }

    pub fn from_tensors(tensors: TensorMap, config: &ModelConfig) -> Result<Self, CheckpointError> {
        for (name, shape) in Self::expected_shapes(config) {
            match tensors.get(&name) {
                None => return Err(CheckpointError::MissingTensor(name)),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(CheckpointError::ShapeMismatch {
                        name,
                        expected: shape,
                        got: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(ParamSet { tensors })
    }

    pub fn tensors(&self) -> &TensorMap {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut TensorMap {
        &mut self.tensors
    }

    /// Every extent must be a function of (d, pi) alone; any tensor sized by
    /// user, item, or attribute counts would break the inductive and transfer
    /// contracts.
    pub fn assert_catalog_free(&self, config: &ModelConfig) {
        let d = config.dim;
        let allowed = [d, 2 * d, d * (1 + config.subsession_count())];
        for (name, tensor) in self.tensors.iter() {
            for &extent in tensor.shape() {
                assert!(
                    allowed.contains(&extent),
                    "tensor `{name}` has catalog-sized extent {extent}"
                );
            }
        }
    }
}

/// Tape handles for one FFN: `y = leaky(x W1^T + b1) W2^T + b2`.
#[derive(Debug, Clone, Copy)]
pub struct FfnVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl FfnVars {
    /// Leaf only the primitive-embedding FFN, for catalog-wide embedding
    /// passes that need no other parameters.
    pub fn leaf_embed(tape: &mut Tape, params: &TensorMap) -> Self {
        FfnVars::leaf(tape, params, "embed")
    }

    fn leaf(tape: &mut Tape, params: &TensorMap, prefix: &str) -> Self {
        FfnVars {
            w1: tape.leaf(format!("{prefix}.w1"), params.expect(&format!("{prefix}.w1"))),
            b1: tape.leaf(format!("{prefix}.b1"), params.expect(&format!("{prefix}.b1"))),
            w2: tape.leaf(format!("{prefix}.w2"), params.expect(&format!("{prefix}.w2"))),
            b2: tape.leaf(format!("{prefix}.b2"), params.expect(&format!("{prefix}.b2"))),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, slope: f64) -> Var {
        let w1t = tape.transpose(self.w1);
        let pre = tape.matmul(x, w1t);
        let pre = tape.add_row(pre, self.b1);
        let hidden = tape.leaky_relu(pre, slope);
        let w2t = tape.transpose(self.w2);
        let out = tape.matmul(hidden, w2t);
        tape.add_row(out, self.b2)
    }
}

/// All parameters leafed onto one tape.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub embed: FfnVars,
    pub long_stack: StackVars,
    pub short_stack: StackVars,
    pub ssa_long: SsaVars,
    pub ssa_short: SsaVars,
    pub fuse_user: FfnVars,
    pub fuse_item: FfnVars,
}

impl ModelVars {
    pub fn leaf(tape: &mut Tape, params: &ParamSet, config: &ModelConfig) -> Self {
        let tensors = params.tensors();
        let stack = |tape: &mut Tape, name: &str, depth: usize| StackVars {
            layers: (0..depth)
                .map(|l| {
                    let key = |part: &str| format!("{name}.layer{l}.{part}");
                    LayerVars {
                        w_self: tape.leaf(key("w_self"), tensors.expect(&key("w_self"))),
                        w_rel: [0, 1, 2, 3].map(|r| {
                            let k = key(&format!("w_rel{r}"));
                            tape.leaf(k.clone(), tensors.expect(&k))
                        }),
                        attn: tape.leaf(key("attn"), tensors.expect(&key("attn"))),
                    }
                })
                .collect(),
        };
        let ssa = |tape: &mut Tape, term: &str| SsaVars {
            w_que: tape.leaf(
                format!("ssa.{term}.w_que"),
                tensors.expect(&format!("ssa.{term}.w_que")),
            ),
            w_key: tape.leaf(
                format!("ssa.{term}.w_key"),
                tensors.expect(&format!("ssa.{term}.w_key")),
            ),
            w_val: tape.leaf(
                format!("ssa.{term}.w_val"),
                tensors.expect(&format!("ssa.{term}.w_val")),
            ),
        };
        ModelVars {
            embed: FfnVars::leaf(tape, tensors, "embed"),
            long_stack: stack(tape, "long", config.long_layers),
            short_stack: stack(tape, "short", config.short_layers),
            ssa_long: ssa(tape, "long"),
            ssa_short: ssa(tape, "short"),
            fuse_user: FfnVars::leaf(tape, tensors, "fuse.user"),
            fuse_item: FfnVars::leaf(tape, tensors, "fuse.item"),
        }
    }

    fn ffn_vars(&self) -> [FfnVars; 3] {
        [self.embed, self.fuse_user, self.fuse_item]
    }

    /// All parameter handles, for the L2 term.
    pub fn all_vars(&self) -> Vec<Var> {
        let mut vars = Vec::new();
        for f in self.ffn_vars() {
            vars.extend([f.w1, f.b1, f.w2, f.b2]);
        }
        for stack in [&self.long_stack, &self.short_stack] {
            for layer in &stack.layers {
                vars.push(layer.w_self);
                vars.extend(layer.w_rel);
                vars.push(layer.attn);
            }
        }
        for s in [self.ssa_long, self.ssa_short] {
            vars.extend([s.w_que, s.w_key, s.w_val]);
        }
        vars
    }
}

/// Split a history of length `t` into consecutive windows of length `tau`
/// (the last window may be shorter). Returns `[start, end)` offsets.
pub fn subsessions(t: usize, tau: usize) -> Vec<(usize, usize)> {
    assert!(tau >= 1, "subsession length must be at least 1");
    let mut spans = Vec::new();
    let mut start = 0;
    while start < t {
        let end = usize::min(start + tau, t);
        spans.push((start, end));
        start = end;
    }
    spans
}

/// Cached per-sample extraction context for one pipeline (long or one
/// subsession).
#[derive(Debug, Clone)]
pub struct SubgraphCtx {
    pub sub: EnclosingSubgraph,
    pub topo: Topology,
    pub user_row: usize,
    /// Local rows of the pipeline's item sequence, in session order.
    pub item_rows: Vec<usize>,
    /// History-relative span `[start, end)` this pipeline covers.
    pub span: (usize, usize),
}

/// All subgraphs one sample needs: the long window plus one per subsession.
#[derive(Debug, Clone)]
pub struct SampleGraphs {
    pub long: Option<SubgraphCtx>,
    pub shorts: Vec<SubgraphCtx>,
    pub history_len: usize,
}

/// The windows a sample's pipelines draw graphs from, honoring ablations.
pub fn sample_windows(sample: &TrainingSample, config: &ModelConfig) -> Vec<(usize, usize)> {
    let (a, b) = sample.window;
    let mut windows = Vec::new();
    if !config.ablation.no_long {
        windows.push((a, b));
    }
    if !config.ablation.no_short {
        for (s, e) in subsessions(sample.history.len(), config.subsession_len) {
            windows.push((a + s, a + e - 1));
        }
    }
    windows
}

fn build_ctx(
    cache: &GraphCache,
    sample: &TrainingSample,
    span: (usize, usize),
    window: (usize, usize),
    config: &ModelConfig,
) -> SubgraphCtx {
    let items = &sample.history[span.0..span.1];
    let parent = cache.get(window);
    let opts = ExtractOptions {
        max_nodes_per_hop: config.max_nodes_per_hop,
    };
    let sub = extract_for_sample(parent, sample.user, items, config.hops, opts);
    let user_row = sub
        .local_of(NodeRef::user(sample.user))
        .expect("seed user always retained");
    let item_rows = items
        .iter()
        .map(|&v| {
            sub.local_of(NodeRef::item(v))
                .expect("seed items always retained")
        })
        .collect();
    let topo = Topology::from_subgraph(&sub);
    SubgraphCtx {
        sub,
        topo,
        user_row,
        item_rows,
        span,
    }
}

/// Extract and cache everything [`embed_sample`] needs for one sample.
pub fn prepare_sample(
    cache: &GraphCache,
    sample: &TrainingSample,
    config: &ModelConfig,
) -> SampleGraphs {
    let (a, b) = sample.window;
    let t = sample.history.len();
    let long = if config.ablation.no_long {
        None
    } else {
        Some(build_ctx(cache, sample, (0, t), (a, b), config))
    };
    let shorts = if config.ablation.no_short {
        Vec::new()
    } else {
        subsessions(t, config.subsession_len)
            .into_iter()
            .map(|(s, e)| build_ctx(cache, sample, (s, e), (a + s, a + e - 1), config))
            .collect()
    };
    SampleGraphs {
        long,
        shorts,
        history_len: t,
    }
}

/// Final embeddings for one sample on a tape.
pub struct SampleEmbedding {
    /// Fused user embedding, `[d]`.
    pub user: Var,
    /// Fused per-history-item embeddings, `[t, d]`.
    pub items: Var,
    /// Long-term attention weights when that pipeline ran.
    pub long_beta: Option<Var>,
}

struct PipelineOut {
    user: Var,
    item_seq: Var,
    beta: Option<Var>,
}

fn run_pipeline(
    tape: &mut Tape,
    vars: &ModelVars,
    config: &ModelConfig,
    bases: &PrimitiveBases,
    ctx: &SubgraphCtx,
    stack: &StackVars,
    ssa: &SsaVars,
) -> PipelineOut {
    let d = config.dim;
    let n = ctx.sub.node_count();
    let base = bases.matrix(&ctx.sub.local_to_global);
    let base_c = tape.constant(vec![n, d], base);
    let x0 = vars.embed.forward(tape, base_c, config.leaky_slope);
    let h = if config.ablation.no_ragnn {
        x0
    } else {
        stack_forward(
            tape,
            stack,
            &ctx.topo,
            x0,
            StackOptions {
                leaky_slope: config.leaky_slope,
                use_attention: !config.ablation.no_rel_attention,
                inter_layer_activation: config.inter_layer_activation,
            },
        )
    };
    let user_mat = tape.gather_rows(h, &[ctx.user_row]);
    let user = tape.reshape(user_mat, vec![d]);
    let v_seq = tape.gather_rows(h, &ctx.item_rows);
    let (item_seq, beta) = if config.ablation.no_ssa {
        (v_seq, None)
    } else {
        let out = ssa_forward(tape, ssa, v_seq);
        (out.z, Some(out.beta))
    };
    PipelineOut {
        user,
        item_seq,
        beta,
    }
}

/// Run the long and short pipelines and fuse their outputs.
pub fn embed_sample(
    tape: &mut Tape,
    vars: &ModelVars,
    config: &ModelConfig,
    bases: &PrimitiveBases,
    graphs: &SampleGraphs,
) -> SampleEmbedding {
    let d = config.dim;
    let pi = config.subsession_count();
    let t = graphs.history_len;

    let long = graphs
        .long
        .as_ref()
        .map(|ctx| run_pipeline(tape, vars, config, bases, ctx, &vars.long_stack, &vars.ssa_long));
    let shorts: Vec<(usize, PipelineOut)> = graphs
        .shorts
        .iter()
        .map(|ctx| {
            (
                ctx.span.0,
                run_pipeline(tape, vars, config, bases, ctx, &vars.short_stack, &vars.ssa_short),
            )
        })
        .collect();

    let zeros_d = tape.zeros(vec![d]);

    // User fusion: [ u[L] (+) u_1[S] (+) ... (+) u_pi[S] ].
    let mut user_parts = Vec::with_capacity(1 + pi);
    user_parts.push(long.as_ref().map_or(zeros_d, |p| p.user));
    for j in 0..pi {
        user_parts.push(shorts.get(j).map_or(zeros_d, |(_, p)| p.user));
    }
    let user_in = tape.concat(&user_parts);
    let user_row = tape.reshape(user_in, vec![1, d * (1 + pi)]);
    let fused_user = vars.fuse_user.forward(tape, user_row, config.leaky_slope);
    let user = tape.reshape(fused_user, vec![d]);

    // Item fusion: the long SSA row plus the one subsession slot holding the
    // item; absent slots contribute zeros.
    let mut item_inputs = Vec::with_capacity(t);
    for i in 0..t {
        let mut parts = Vec::with_capacity(1 + pi);
        let long_row = long.as_ref().map_or(zeros_d, |p| {
            let row = tape.gather_rows(p.item_seq, &[i]);
            tape.reshape(row, vec![d])
        });
        parts.push(long_row);
        for j in 0..pi {
            let slot = shorts.get(j).and_then(|(start, p)| {
                let len = tape.shape(p.item_seq)[0];
                if i >= *start && i < start + len {
                    let row = tape.gather_rows(p.item_seq, &[i - start]);
                    Some(tape.reshape(row, vec![d]))
                } else {
                    None
                }
            });
            parts.push(slot.unwrap_or(zeros_d));
        }
        item_inputs.push(tape.concat(&parts));
    }
    let item_matrix = tape.stack_rows(&item_inputs);
    let items = vars.fuse_item.forward(tape, item_matrix, config.leaky_slope);

    SampleEmbedding {
        user,
        items,
        long_beta: long.and_then(|p| p.beta),
    }
}

/// `u + sum_i v_i`, the vector whose dot with a candidate's primitive
/// embedding is the candidate's score.
pub fn combined_profile(tape: &mut Tape, emb: &SampleEmbedding) -> Var {
    let t = tape.shape(emb.items)[0];
    let d = tape.shape(emb.items)[1];
    let ones = tape.constant(vec![1, t], vec![1.0; t]);
    let summed = tape.matmul(ones, emb.items);
    let summed = tape.reshape(summed, vec![d]);
    tape.add(emb.user, summed)
}

/// Primitive embedding of one candidate item on the tape.
pub fn candidate_embedding(
    tape: &mut Tape,
    vars: &ModelVars,
    config: &ModelConfig,
    bases: &PrimitiveBases,
    item: u32,
) -> Var {
    let d = config.dim;
    let base = bases.vector(NodeRef::item(item));
    let base_c = tape.constant(vec![1, d], base);
    let x = vars.embed.forward(tape, base_c, config.leaky_slope);
    tape.reshape(x, vec![d])
}

/// `y_uv = u . x_v + sum_i v_i . x_v`.
pub fn score(tape: &mut Tape, emb: &SampleEmbedding, candidate: Var) -> Var {
    let profile = combined_profile(tape, emb);
    tape.dot(profile, candidate)
}

/// One training pair: the sample's cached subgraphs plus a positive future
/// item and a sampled negative.
pub struct PairedSample<'a> {
    pub graphs: &'a SampleGraphs,
    pub pos_item: u32,
    pub neg_item: u32,
}

/// `-log sigma(y_pos - y_neg)` for one pair.
pub fn bpr_term(
    tape: &mut Tape,
    vars: &ModelVars,
    config: &ModelConfig,
    bases: &PrimitiveBases,
    pair: &PairedSample,
) -> Var {
    sample_bpr_terms(
        tape,
        vars,
        config,
        bases,
        pair.graphs,
        &[(pair.pos_item, pair.neg_item)],
    )
}

/// Sum of BPR terms for several (positive, negative) pairs sharing one
/// sample. The sample is embedded once; each extra pair only costs two dot
/// products.
pub fn sample_bpr_terms(
    tape: &mut Tape,
    vars: &ModelVars,
    config: &ModelConfig,
    bases: &PrimitiveBases,
    graphs: &SampleGraphs,
    pairs: &[(u32, u32)],
) -> Var {
    assert!(!pairs.is_empty(), "at least one ranking pair per sample");
    let emb = embed_sample(tape, vars, config, bases, graphs);
    let profile = combined_profile(tape, &emb);
    let mut total = None;
    for &(pos_item, neg_item) in pairs {
        let pos = candidate_embedding(tape, vars, config, bases, pos_item);
        let neg = candidate_embedding(tape, vars, config, bases, neg_item);
        let y_pos = tape.dot(profile, pos);
        let y_neg = tape.dot(profile, neg);
        let diff = tape.sub(y_pos, y_neg);
        let log_sig = tape.log_sigmoid(diff);
        let term = tape.scale(log_sig, -1.0);
        total = Some(match total {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    total.expect("non-empty pairs")
}

/// `lambda * RAR + eta * ||Theta||^2`: the relation-aware penalty ties each
/// relation's matrices in adjacent layers, per stack.
pub fn regularization(tape: &mut Tape, vars: &ModelVars, config: &ModelConfig) -> Var {
    let mut total = tape.constant_scalar(0.0);
    let lambda = if config.ablation.no_rar {
        0.0
    } else {
        config.rar_weight
    };
    if lambda != 0.0 {
        let mut rar = tape.constant_scalar(0.0);
        for stack in [&vars.long_stack, &vars.short_stack] {
            for pair in stack.layers.windows(2) {
                for r in 0..4 {
                    let diff = tape.sub(pair[1].w_rel[r], pair[0].w_rel[r]);
                    let sq = tape.frobenius_sq(diff);
                    rar = tape.add(rar, sq);
                }
            }
        }
        let weighted = tape.scale(rar, lambda);
        total = tape.add(total, weighted);
    }
    if config.l2_weight != 0.0 {
        let mut l2 = tape.constant_scalar(0.0);
        for v in vars.all_vars() {
            let sq = tape.frobenius_sq(v);
            l2 = tape.add(l2, sq);
        }
        let weighted = tape.scale(l2, config.l2_weight);
        total = tape.add(total, weighted);
    }
    total
}

/// The whole-batch objective on a single tape:
/// `sum_pairs -log sigma(y_pos - y_neg) + lambda RAR + eta ||Theta||^2`.
pub fn batch_loss(
    tape: &mut Tape,
    vars: &ModelVars,
    config: &ModelConfig,
    bases: &PrimitiveBases,
    batch: &[PairedSample<'_>],
) -> Var {
    let mut total = regularization(tape, vars, config);
    for pair in batch {
        let term = bpr_term(tape, vars, config, bases, pair);
        total = tape.add(total, term);
    }
    total
}

/// Model state: configuration, learnable parameters, and the base-vector
/// generator seed.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub bases: PrimitiveBases,
    pub seed: u64,
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamSet::init(&config, &mut rng);
        let bases = PrimitiveBases::new(seed, config.dim);
        Model {
            config,
            params,
            bases,
            seed,
        }
    }

    /// Rebind transferred parameters to a new catalog: fresh base vectors
    /// under the target seed, same learnable tensors.
    pub fn with_bases(mut self, seed: u64) -> Self {
        self.bases = PrimitiveBases::new(seed, self.config.dim);
        self.seed = seed;
        self
    }
}
