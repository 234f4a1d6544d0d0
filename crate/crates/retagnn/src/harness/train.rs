//! Mini-batch training with fresh per-epoch negatives and early stopping on
//! validation NDCG.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{GraphBuilder, GraphCache};
use crate::ingest::{Dataset, Split, TrainingSample};
use crate::numkernel::{AdamState, Tape};
use crate::par;
use crate::recommender::{regularization, sample_bpr_terms, Model, ModelConfig, ModelVars};

use super::eval::{
    item_primitives, mean_metrics, prepare_all, train_items_by_user, warm_windows, EvalInputs,
    PreparedSample,
};
use super::HarnessError;

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    /// (epoch, mean batch loss).
    pub loss_curve: Vec<(usize, f64)>,
    /// (epoch, validation NDCG at k).
    pub val_curve: Vec<(usize, f64)>,
    pub adam_steps: u64,
    pub best_epoch: usize,
}

impl TrainOutcome {
    /// Two-column text: epoch and loss.
    pub fn loss_curve_text(&self) -> String {
        let mut out = String::new();
        for (epoch, loss) in &self.loss_curve {
            out.push_str(&format!("{epoch} {loss:?}\n"));
        }
        out
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draw one (positive, negative) pair per future item of each train sample.
/// Positives are the sample's future items; negatives are uniform over items
/// the user never touched in the train split.
fn draw_pairs(
    rng: &mut ChaCha8Rng,
    prepared: &[PreparedSample],
    train_items: &HashMap<u32, BTreeSet<u32>>,
    n_items: usize,
) -> Vec<Vec<(u32, u32)>> {
    static EMPTY: BTreeSet<u32> = BTreeSet::new();
    prepared
        .iter()
        .map(|p| {
            let owned = train_items.get(&p.sample.user).unwrap_or(&EMPTY);
            p.sample
                .future
                .iter()
                .map(|&pos| {
                    let neg = loop {
                        let cand = rng.random_range(0..n_items as u32);
                        if !owned.contains(&cand) {
                            break cand;
                        }
                    };
                    (pos, neg)
                })
                .collect()
        })
        .collect()
}

type NamedGrads = Vec<(String, Vec<f64>)>;

/// One sample's BPR loss value and parameter gradients on its own tape.
fn pair_gradients(
    model: &Model,
    prepared: &PreparedSample,
    pairs: &[(u32, u32)],
) -> Result<(f64, NamedGrads), HarnessError> {
    let mut tape = Tape::new();
    let vars = ModelVars::leaf(&mut tape, &model.params, &model.config);
    let term = sample_bpr_terms(
        &mut tape,
        &vars,
        &model.config,
        &model.bases,
        &prepared.graphs,
        pairs,
    );
    let value = tape.value_scalar(term);
    tape.backward(term)?;
    let grads = tape
        .leaf_grads()
        .map(|(name, g)| (name.to_string(), g.to_vec()))
        .collect();
    Ok((value, grads))
}

/// Train on the train split, early-stopping on validation NDCG, and return
/// the best-validation parameters.
pub fn train(
    dataset: &Dataset,
    samples: &[TrainingSample],
    config: ModelConfig,
    seed: u64,
) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    let mut model = Model::init(config.clone(), seed);

    let include_attrs = !config.ablation.no_attrs;
    let builder = GraphBuilder::new(&dataset.catalog, &dataset.sequences, samples, include_attrs);
    let train_items = train_items_by_user(&builder);
    let mut cache = GraphCache::new(builder);

    let train_samples: Vec<TrainingSample> = samples
        .iter()
        .filter(|s| s.split == Split::Train)
        .cloned()
        .collect();
    let val_samples: Vec<TrainingSample> = samples
        .iter()
        .filter(|s| s.split == Split::Validation)
        .cloned()
        .collect();
    if train_samples.is_empty() {
        return Err(HarnessError::NoSamples("train"));
    }
    warm_windows(&mut cache, &train_samples, &model);
    warm_windows(&mut cache, &val_samples, &model);
    let prepared_train = prepare_all(&cache, &train_samples, &model);
    let prepared_val = prepare_all(&cache, &val_samples, &model);

    let n_items = dataset.catalog.n_items();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x7a31_4159));
    let mut adam = AdamState::new(config.learning_rate);

    let mut loss_curve = Vec::new();
    let mut val_curve = Vec::new();
    let mut best_ndcg = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.params.clone();
    let mut stale_epochs = 0usize;

    for epoch in 0..config.max_epochs {
        let pairs = draw_pairs(&mut rng, &prepared_train, &train_items, n_items);
        let mut order: Vec<usize> = (0..prepared_train.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            model.params.tensors_mut().zero_grads();
            let results = par::map(chunk, |&i| {
                pair_gradients(&model, &prepared_train[i], &pairs[i])
            });
            let mut batch_loss = 0.0;
            for result in results {
                let (value, grads) = result?;
                batch_loss += value;
                for (name, grad) in grads {
                    model.params.tensors_mut().accumulate(&name, &grad)?;
                }
            }

            // Regularization once per batch, on its own tape.
            let mut reg_tape = Tape::new();
            let vars = ModelVars::leaf(&mut reg_tape, &model.params, &config);
            let reg = regularization(&mut reg_tape, &vars, &config);
            batch_loss += reg_tape.value_scalar(reg);
            reg_tape.backward(reg)?;
            for (name, grad) in reg_tape.leaf_grads() {
                let grad = grad.to_vec();
                model.params.tensors_mut().accumulate(name, &grad)?;
            }

            if !batch_loss.is_finite() {
                return Err(HarnessError::Divergence { epoch, batch_loss });
            }
            adam.step(model.params.tensors_mut())?;
            epoch_loss += batch_loss;
            batches += 1;
        }
        let mean_loss = epoch_loss / batches.max(1) as f64;
        loss_curve.push((epoch, mean_loss));

        let val_ndcg = if prepared_val.is_empty() {
            -mean_loss // fall back to training loss when no validation split exists
        } else {
            let prims = item_primitives(&model, n_items);
            mean_metrics(
                &EvalInputs {
                    model: &model,
                    prims: &prims,
                    n_items,
                    exclusions: &train_items,
                    policy: super::eval::CandidatePolicy::FullCatalog,
                },
                &prepared_val,
            )
            .ndcg
        };
        val_curve.push((epoch, val_ndcg));

        if val_ndcg > best_ndcg {
            best_ndcg = val_ndcg;
            best_epoch = epoch;
            best_params = model.params.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                break;
            }
        }
    }

    model.params = best_params;
    Ok(TrainOutcome {
        model,
        loss_curve,
        val_curve,
        adam_steps: adam.step_count(),
        best_epoch,
    })
}
