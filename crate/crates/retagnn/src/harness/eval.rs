//! Candidate ranking, the three evaluation protocols, and run reports.

use std::collections::{BTreeSet, HashMap};

use rand::seq::IteratorRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::graph::{GraphBuilder, GraphCache};
use crate::ingest::{Dataset, Split, TrainingSample, UserSequence};
use crate::numkernel::Tape;
use crate::par;
use crate::recommender::{
    combined_profile, embed_sample, prepare_sample, sample_windows, FfnVars, Model, ModelVars,
    SampleGraphs,
};

use super::metrics::{evaluate_ranking, MetricTriple};
use super::HarnessError;

/// Which items get scored for each test sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidatePolicy {
    /// Every catalog item except the user's train-split items.
    FullCatalog,
    /// The sample's future items plus this many sampled non-candidates.
    Sampled(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Csr,
    Isr,
    Tsr,
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Protocol::Csr => "csr",
            Protocol::Isr => "isr",
            Protocol::Tsr => "tsr",
        };
        f.write_str(name)
    }
}

/// Per-setting metric means plus enough metadata to reproduce the run.
#[derive(Debug, Clone, Serialize)]
pub struct RankingReport {
    pub setting: Protocol,
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub sample_count: usize,
    pub seed: u64,
    pub config: crate::recommender::ModelConfig,
}

impl RankingReport {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("setting={}\n", self.setting));
        out.push_str(&format!("k={}\n", self.k));
        out.push_str(&format!("precision={:?}\n", self.precision));
        out.push_str(&format!("recall={:?}\n", self.recall));
        out.push_str(&format!("ndcg={:?}\n", self.ndcg));
        out.push_str(&format!("sample_count={}\n", self.sample_count));
        out.push_str(&format!("seed={}\n", self.seed));
        for line in self.config.to_key_value().lines() {
            out.push_str(&format!("config.{line}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A sample together with its extracted subgraphs.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub sample: TrainingSample,
    pub graphs: SampleGraphs,
}

/// Warm the cache with every window the samples touch.
pub fn warm_windows(cache: &mut GraphCache, samples: &[TrainingSample], model: &Model) {
    let mut windows = BTreeSet::new();
    for s in samples {
        windows.extend(sample_windows(s, &model.config));
    }
    cache.warm(windows);
}

/// Extract subgraphs for all samples, in parallel when enabled.
pub fn prepare_all(
    cache: &GraphCache,
    samples: &[TrainingSample],
    model: &Model,
) -> Vec<PreparedSample> {
    par::map(samples, |s| PreparedSample {
        sample: s.clone(),
        graphs: prepare_sample(cache, s, &model.config),
    })
}

/// Primitive embeddings of the whole catalog under the current parameters,
/// as an `n_items x d` row-major matrix.
pub fn item_primitives(model: &Model, n_items: usize) -> Vec<f64> {
    let d = model.config.dim;
    if n_items == 0 {
        return Vec::new();
    }
    let mut tape = Tape::new();
    let embed = FfnVars::leaf_embed(&mut tape, model.params.tensors());
    let base = model.bases.item_matrix(n_items);
    let base_c = tape.constant(vec![n_items, d], base);
    let x = embed.forward(&mut tape, base_c, model.config.leaky_slope);
    tape.value(x).to_vec()
}

/// The fused scoring profile `u + sum_i v_i` for one sample.
pub fn sample_profile(model: &Model, graphs: &SampleGraphs) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = ModelVars::leaf(&mut tape, &model.params, &model.config);
    let emb = embed_sample(&mut tape, &vars, &model.config, &model.bases, graphs);
    let profile = combined_profile(&mut tape, &emb);
    tape.value(profile).to_vec()
}

/// Rank candidate items by `profile . x_v`, descending, ties broken by item
/// index. Panics on non-finite scores; rankings must be total orders.
pub fn rank_items(
    profile: &[f64],
    prims: &[f64],
    n_items: usize,
    exclude: &BTreeSet<u32>,
    candidates: Option<&BTreeSet<u32>>,
) -> Vec<u32> {
    let d = profile.len();
    let mut scored: Vec<(f64, u32)> = Vec::with_capacity(n_items);
    for v in 0..n_items as u32 {
        if exclude.contains(&v) {
            continue;
        }
        if let Some(cand) = candidates {
            if !cand.contains(&v) {
                continue;
            }
        }
        let row = &prims[v as usize * d..(v as usize + 1) * d];
        let score: f64 = row.iter().zip(profile).map(|(a, b)| a * b).sum();
        assert!(score.is_finite(), "non-finite score for item {v}");
        scored.push((score, v));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, v)| v).collect()
}

/// Items in the user's train-split coverage, used both for candidate
/// exclusion and negative sampling.
pub fn train_items_by_user(builder: &GraphBuilder) -> HashMap<u32, BTreeSet<u32>> {
    let mut map: HashMap<u32, BTreeSet<u32>> = HashMap::new();
    for (user, item) in builder.train_interactions() {
        map.entry(user).or_default().insert(item);
    }
    map
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct EvalInputs<'a> {
    pub model: &'a Model,
    pub prims: &'a [f64],
    pub n_items: usize,
    pub exclusions: &'a HashMap<u32, BTreeSet<u32>>,
    pub policy: CandidatePolicy,
}

static EMPTY: BTreeSet<u32> = BTreeSet::new();

/// Mean metrics over prepared samples under a read-only parameter snapshot.
pub fn mean_metrics(inputs: &EvalInputs<'_>, prepared: &[PreparedSample]) -> MetricTriple {
    if prepared.is_empty() {
        return MetricTriple::default();
    }
    let k = inputs.model.config.top_k;
    let indices: Vec<usize> = (0..prepared.len()).collect();
    let per_sample = par::map(&indices, |&i| {
        let p = &prepared[i];
        let exclude = inputs.exclusions.get(&p.sample.user).unwrap_or(&EMPTY);
        let relevant: BTreeSet<u32> = p.sample.future.iter().copied().collect();
        let candidates = match inputs.policy {
            CandidatePolicy::FullCatalog => None,
            CandidatePolicy::Sampled(extra) => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(splitmix(inputs.model.seed ^ (i as u64) << 17));
                let mut set = relevant.clone();
                let picks = (0..inputs.n_items as u32)
                    .filter(|v| !set.contains(v) && !exclude.contains(v))
                    .choose_multiple(&mut rng, extra);
                set.extend(picks);
                Some(set)
            }
        };
        let profile = sample_profile(inputs.model, &p.graphs);
        let ranked = rank_items(
            &profile,
            inputs.prims,
            inputs.n_items,
            exclude,
            candidates.as_ref(),
        );
        evaluate_ranking(&ranked, &relevant, k)
    });
    let mut total = MetricTriple::default();
    for m in &per_sample {
        total.precision += m.precision;
        total.recall += m.recall;
        total.ndcg += m.ndcg;
    }
    let n = per_sample.len() as f64;
    MetricTriple {
        precision: total.precision / n,
        recall: total.recall / n,
        ndcg: total.ndcg / n,
    }
}

fn policy_of(model: &Model) -> CandidatePolicy {
    match model.config.num_neg_eval {
        Some(n) => CandidatePolicy::Sampled(n),
        None => CandidatePolicy::FullCatalog,
    }
}

fn report(
    setting: Protocol,
    model: &Model,
    triple: MetricTriple,
    sample_count: usize,
) -> RankingReport {
    RankingReport {
        setting,
        k: model.config.top_k,
        precision: triple.precision,
        recall: triple.recall,
        ndcg: triple.ndcg,
        sample_count,
        seed: model.seed,
        config: model.config.clone(),
    }
}

/// Conventional protocol: rank the test windows of seen users against graphs
/// built from train-split coverage only.
pub fn eval_csr(
    model: &Model,
    dataset: &Dataset,
    samples: &[TrainingSample],
) -> Result<RankingReport, HarnessError> {
    let test: Vec<TrainingSample> = samples
        .iter()
        .filter(|s| s.split == Split::Test)
        .cloned()
        .collect();
    if test.is_empty() {
        return Err(HarnessError::NoSamples("test"));
    }
    let include_attrs = !model.config.ablation.no_attrs;
    let builder = GraphBuilder::new(&dataset.catalog, &dataset.sequences, samples, include_attrs);
    let exclusions = train_items_by_user(&builder);
    let mut cache = GraphCache::new(builder);
    warm_windows(&mut cache, &test, model);
    let prepared = prepare_all(&cache, &test, model);
    let prims = item_primitives(model, dataset.catalog.n_items());
    let triple = mean_metrics(
        &EvalInputs {
            model,
            prims: &prims,
            n_items: dataset.catalog.n_items(),
            exclusions: &exclusions,
            policy: policy_of(model),
        },
        &prepared,
    );
    Ok(report(Protocol::Csr, model, triple, prepared.len()))
}

/// Inductive protocol inputs: disjoint seen/unseen user sequences.
pub struct IsrSplit {
    pub train: Vec<UserSequence>,
    pub test: Vec<UserSequence>,
}

impl IsrSplit {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let train: BTreeSet<u32> = self.train.iter().map(|s| s.user).collect();
        let test: BTreeSet<u32> = self.test.iter().map(|s| s.user).collect();
        if !train.is_disjoint(&test) {
            return Err(HarnessError::ProtocolViolation(
                "inductive train and test user sets overlap".into(),
            ));
        }
        Ok(())
    }
}

/// Inductive protocol: score held-out users with zero parameter updates.
/// Their histories enter only at subgraph-extraction time, injected over a
/// graph built from seen-user train coverage.
pub fn eval_isr(
    model: &Model,
    dataset: &Dataset,
    split: &IsrSplit,
    train_samples: &[TrainingSample],
) -> Result<RankingReport, HarnessError> {
    split.validate()?;
    let config = &model.config;
    let mut test_samples = crate::ingest::make_csr_samples(
        &split.test,
        config.session_len,
        config.future_len,
        config.stride(),
    );
    for s in &mut test_samples {
        s.split = Split::Test;
    }
    if test_samples.is_empty() {
        return Err(HarnessError::NoSamples("inductive test"));
    }
    let include_attrs = !config.ablation.no_attrs;
    let builder = GraphBuilder::new(
        &dataset.catalog,
        &dataset.sequences,
        train_samples,
        include_attrs,
    );
    let exclusions = train_items_by_user(&builder);
    let mut cache = GraphCache::new(builder);
    warm_windows(&mut cache, &test_samples, model);
    let prepared = prepare_all(&cache, &test_samples, model);
    let prims = item_primitives(model, dataset.catalog.n_items());
    let triple = mean_metrics(
        &EvalInputs {
            model,
            prims: &prims,
            n_items: dataset.catalog.n_items(),
            exclusions: &exclusions,
            policy: policy_of(model),
        },
        &prepared,
    );
    Ok(report(Protocol::Isr, model, triple, prepared.len()))
}

/// Transferable protocol: zero-shot scoring of a disjoint target catalog.
/// The learnable tensors come from the source; base vectors are freshly
/// seeded for the target; attributes are disabled on both sides.
pub fn eval_tsr(
    source: &Model,
    target: &Dataset,
    target_seed: u64,
) -> Result<RankingReport, HarnessError> {
    let mut model = source.clone().with_bases(target_seed);
    model.config.ablation.no_attrs = true;
    model.params.assert_catalog_free(&model.config);
    let samples = super::config_samples(target, &model.config);
    eval_csr(&model, target, &samples).map(|mut r| {
        r.setting = Protocol::Tsr;
        r
    })
}

/// Ranks items by train-split interaction count; unseen items follow all
/// seen ones in index order.
#[derive(Debug, Clone)]
pub struct PopularityRanker {
    order: Vec<u32>,
}

impl PopularityRanker {
    pub fn new(builder: &GraphBuilder, n_items: usize) -> Self {
        let mut counts = vec![0usize; n_items];
        for (_, item) in builder.train_interactions() {
            counts[item as usize] += 1;
        }
        let mut order: Vec<u32> = (0..n_items as u32).collect();
        order.sort_by_key(|&v| (std::cmp::Reverse(counts[v as usize]), v));
        PopularityRanker { order }
    }

    pub fn rank(&self, exclude: &BTreeSet<u32>) -> Vec<u32> {
        self.order
            .iter()
            .copied()
            .filter(|v| !exclude.contains(v))
            .collect()
    }

    /// Mean metrics over samples, mirroring the model's exclusion rules.
    pub fn mean_metrics(
        &self,
        samples: &[TrainingSample],
        exclusions: &HashMap<u32, BTreeSet<u32>>,
        k: usize,
    ) -> MetricTriple {
        if samples.is_empty() {
            return MetricTriple::default();
        }
        let mut total = MetricTriple::default();
        for s in samples {
            let exclude = exclusions.get(&s.user).unwrap_or(&EMPTY);
            let ranked = self.rank(exclude);
            let relevant: BTreeSet<u32> = s.future.iter().copied().collect();
            let m = evaluate_ranking(&ranked, &relevant, k);
            total.precision += m.precision;
            total.recall += m.recall;
            total.ndcg += m.ndcg;
        }
        let n = samples.len() as f64;
        MetricTriple {
            precision: total.precision / n,
            recall: total.recall / n,
            ndcg: total.ndcg / n,
        }
    }
}

/// Long-term attention matrices for a sample set, for heatmap export.
/// Returns one flattened `t x t` matrix per sample.
pub fn collect_attention(
    model: &Model,
    prepared: &[PreparedSample],
) -> Result<Vec<Vec<f64>>, HarnessError> {
    if model.config.ablation.no_ssa || model.config.ablation.no_long {
        return Err(HarnessError::ProtocolViolation(
            "attention export needs the long-term self-attention pipeline".into(),
        ));
    }
    Ok(par::map(prepared, |p| {
        let mut tape = Tape::new();
        let vars = ModelVars::leaf(&mut tape, &model.params, &model.config);
        let emb = embed_sample(&mut tape, &vars, &model.config, &model.bases, &p.graphs);
        let beta = emb.long_beta.expect("long pipeline ran");
        tape.value(beta).to_vec()
    }))
}
