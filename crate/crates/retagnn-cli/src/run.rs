//! Subcommand implementations and error-to-exit-code mapping.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use retagnn::graph::GraphBuilder;
use retagnn::harness::{
    self, collect_attention, config_samples, eval_csr, eval_isr, eval_tsr, prepare_all,
    warm_windows, HarnessError, IsrSplit, RankingReport,
};
use retagnn::ingest::{self, Dataset, IngestError, Split};
use retagnn::recommender::{
    load_checkpoint, save_checkpoint, ConfigError, Model, ModelConfig,
};
use retagnn::ssa;
use retagnn::subgraph::ExtractOptions;

use crate::CommonOpts;

/// Exit code policy: 2 configuration, 3 data, 4 numeric divergence.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(harness) = cause.downcast_ref::<HarnessError>() {
            return match harness {
                HarnessError::Divergence { .. } | HarnessError::Kernel(_) => 4,
                HarnessError::Config(_) => 2,
                _ => 3,
            };
        }
        if let Some(ingest) = cause.downcast_ref::<IngestError>() {
            return match ingest {
                IngestError::MissingFile(_) => 2,
                _ => 3,
            };
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<retagnn::recommender::CheckpointError>().is_some() {
            return 3;
        }
    }
    3
}

/// Resolve the model configuration: defaults, then config file, then
/// `--set key=value` overrides.
fn resolve_config(common: &CommonOpts) -> Result<ModelConfig> {
    let mut config = ModelConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        config.apply_key_values(&text)?;
    }
    for entry in &common.set {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| anyhow!(ConfigError::Invalid(format!("expected KEY=VALUE, got `{entry}`"))))?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;
    Ok(config)
}

fn prepare_out(common: &CommonOpts, config: &ModelConfig) -> Result<()> {
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))?;
    retagnn::par::configure_workers(common.workers);
    let mut resolved = config.to_key_value();
    resolved.push_str(&format!("seed={}\n", common.seed));
    println!("resolved configuration:\n{resolved}");
    fs::write(common.out.join("run_config.txt"), resolved)?;
    Ok(())
}

fn load_dataset(bundle: &Path) -> Result<Dataset> {
    ingest::read_bundle(bundle)
        .with_context(|| format!("reading bundle {}", bundle.display()))
}

fn write_report(common: &CommonOpts, name: &str, report: &RankingReport) -> Result<()> {
    let text_path = common.out.join(format!("{name}.txt"));
    fs::write(&text_path, report.to_key_value())?;
    let json_path = common.out.join(format!("{name}.json"));
    fs::write(&json_path, report.to_json())?;
    println!(
        "{name}: precision={:.4} recall={:.4} ndcg={:.4} over {} samples",
        report.precision, report.recall, report.ndcg, report.sample_count
    );
    println!("wrote {} and {}", text_path.display(), json_path.display());
    Ok(())
}

pub fn ingest(
    common: &CommonOpts,
    kind: &str,
    input: &Path,
    threshold: Option<i32>,
) -> Result<()> {
    let config = resolve_config(common)?;
    prepare_out(common, &config)?;
    let (interactions, catalog, default_threshold, name) = match kind {
        "movielens" => {
            let (i, c) = ingest::load_movielens(input)?;
            (i, c, 4, "movielens")
        }
        "bookcrossing" => {
            let (i, c) = ingest::load_bookcrossing(input)?;
            (i, c, 9, "bookcrossing")
        }
        other => bail!(ConfigError::Invalid(format!(
            "unknown dataset kind `{other}` (expected movielens or bookcrossing)"
        ))),
    };
    let threshold = threshold.unwrap_or(default_threshold);
    let binarized = ingest::binarize(interactions, threshold);
    let (sequences, catalog, stats) =
        ingest::preprocess(&binarized, &catalog, config.min_interactions)?;
    let dataset = Dataset {
        name: name.to_string(),
        catalog,
        sequences,
    };
    ingest::write_bundle(&common.out, &dataset, &stats)?;
    println!(
        "bundle written to {}: {} users, {} items, {} interactions, density {:.4}",
        common.out.display(),
        stats.users,
        stats.items,
        stats.interactions,
        stats.density
    );
    Ok(())
}

/// Derive the protocol-appropriate samples and, for the inductive protocol,
/// the user split. The split is deterministic under (seed, train_frac), so
/// `train` and `eval` re-derive the same partition.
fn protocol_samples(
    dataset: &Dataset,
    config: &ModelConfig,
    protocol: &str,
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<retagnn::ingest::TrainingSample>, Option<IsrSplit>)> {
    match protocol {
        "csr" => Ok((config_samples(dataset, config), None)),
        "isr" => {
            let (train_seqs, test_seqs) =
                ingest::make_isr_split(&dataset.sequences, train_frac, seed);
            let samples = retagnn::ingest::make_csr_samples(
                &train_seqs,
                config.session_len,
                config.future_len,
                config.stride(),
            );
            Ok((
                samples,
                Some(IsrSplit {
                    train: train_seqs,
                    test: test_seqs,
                }),
            ))
        }
        other => bail!(ConfigError::Invalid(format!(
            "unknown protocol `{other}` (expected csr or isr)"
        ))),
    }
}

pub fn train(common: &CommonOpts, bundle: &Path, protocol: &str, train_frac: f64) -> Result<()> {
    let config = resolve_config(common)?;
    prepare_out(common, &config)?;
    let dataset = load_dataset(bundle)?;
    let (samples, _) = protocol_samples(&dataset, &config, protocol, train_frac, common.seed)?;
    let outcome = harness::train(&dataset, &samples, config.clone(), common.seed)?;
    let ckpt_path = common.out.join("model.ckpt");
    save_checkpoint(&ckpt_path, &outcome.model.params, &config, common.seed)?;
    fs::write(common.out.join("loss_curve.txt"), outcome.loss_curve_text())?;
    println!(
        "trained {} epochs (best validation epoch {}), {} optimizer steps",
        outcome.loss_curve.len(),
        outcome.best_epoch,
        outcome.adam_steps
    );
    println!("checkpoint written to {}", ckpt_path.display());
    Ok(())
}

fn model_from_checkpoint(path: &Path, seed: u64) -> Result<Model> {
    let (params, header) = load_checkpoint(path)?;
    let mut model = Model::init(header.config.clone(), header.seed);
    model.params = params;
    model.config = header.config;
    if seed != header.seed {
        model = model.with_bases(seed);
    }
    Ok(model)
}

pub fn eval(
    common: &CommonOpts,
    bundle: &Path,
    checkpoint: &Path,
    protocol: &str,
    train_frac: f64,
) -> Result<()> {
    let config = resolve_config(common)?;
    prepare_out(common, &config)?;
    let dataset = load_dataset(bundle)?;
    let model = model_from_checkpoint(checkpoint, common.seed)?;
    let (samples, isr) =
        protocol_samples(&dataset, &model.config, protocol, train_frac, common.seed)?;
    let report = match isr {
        None => eval_csr(&model, &dataset, &samples)?,
        Some(split) => eval_isr(&model, &dataset, &split, &samples)?,
    };
    write_report(common, "report", &report)
}

pub fn transfer(
    common: &CommonOpts,
    source: &Path,
    target: &Path,
    fine_tune_epochs: usize,
) -> Result<()> {
    let config = resolve_config(common)?;
    prepare_out(common, &config)?;
    let target_dataset = load_dataset(target)?;
    let mut model = model_from_checkpoint(source, common.seed)?;
    if fine_tune_epochs > 0 {
        let mut tune_config = model.config.clone();
        tune_config.max_epochs = fine_tune_epochs;
        tune_config.ablation.no_attrs = true;
        let samples = config_samples(&target_dataset, &tune_config);
        let outcome = harness::train(&target_dataset, &samples, tune_config, common.seed)?;
        model = outcome.model;
    }
    let report = eval_tsr(&model, &target_dataset, common.seed)?;
    write_report(common, "transfer_report", &report)
}

pub fn dump_subgraph(common: &CommonOpts, bundle: &Path, user: u32, start: usize) -> Result<()> {
    let config = resolve_config(common)?;
    prepare_out(common, &config)?;
    let dataset = load_dataset(bundle)?;
    let samples = config_samples(&dataset, &config);
    let sample = samples
        .iter()
        .find(|s| s.user == user && s.window.0 == start)
        .ok_or_else(|| {
            anyhow!(HarnessError::ProtocolViolation(format!(
                "no window starting at {start} for user {user}"
            )))
        })?;
    let builder = GraphBuilder::new(&dataset.catalog, &dataset.sequences, &samples, true);
    let parent = builder.build(sample.window);
    let sub = retagnn::subgraph::extract_for_sample(
        &parent,
        sample.user,
        &sample.history,
        config.hops,
        ExtractOptions {
            max_nodes_per_hop: config.max_nodes_per_hop,
        },
    );
    let path = common.out.join(format!("subgraph_u{user}_w{start}.txt"));
    let mut buf = Vec::new();
    sub.dump(&mut buf)?;
    fs::write(&path, buf)?;
    println!(
        "subgraph with {} nodes written to {}",
        sub.node_count(),
        path.display()
    );
    Ok(())
}

pub fn export_attention(common: &CommonOpts, bundle: &Path, checkpoint: &Path) -> Result<()> {
    let config = resolve_config(common)?;
    prepare_out(common, &config)?;
    let dataset = load_dataset(bundle)?;
    let model = model_from_checkpoint(checkpoint, common.seed)?;
    let samples = config_samples(&dataset, &model.config);
    let include_attrs = !model.config.ablation.no_attrs;
    let builder = GraphBuilder::new(&dataset.catalog, &dataset.sequences, &samples, include_attrs);
    let mut cache = retagnn::graph::GraphCache::new(builder);

    for (split, label) in [(Split::Train, "train"), (Split::Validation, "validation")] {
        let subset: Vec<_> = samples.iter().filter(|s| s.split == split).cloned().collect();
        if subset.is_empty() {
            println!("no {label} sessions; skipping");
            continue;
        }
        warm_windows(&mut cache, &subset, &model);
        let prepared = prepare_all(&cache, &subset, &model);
        let betas = collect_attention(&model, &prepared)?;
        let t = model.config.session_len;
        let mean = ssa::mean_attention(&betas, t)
            .map_err(|e| anyhow!(HarnessError::ProtocolViolation(e.to_string())))?;
        let path = common.out.join(format!("attention_{label}.txt"));
        let mut buf = Vec::new();
        ssa::write_matrix(&mut buf, t, &mean)?;
        fs::write(&path, buf)?;
        println!("mean {label} attention over {} sessions -> {}", betas.len(), path.display());
    }
    Ok(())
}
