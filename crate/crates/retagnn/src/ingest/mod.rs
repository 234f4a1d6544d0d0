//! Dataset loading and preparation: implicit-feedback conversion, user
//! filtering, chronological sessions, and train/validation/test samples for
//! the three evaluation protocols.

mod bookcrossing;
mod bundle;
mod movielens;

pub use bookcrossing::load_bookcrossing;
pub use bundle::{read_bundle, write_bundle};
pub use movielens::load_movielens;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing dataset file: {0}")]
    MissingFile(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {malformed} of {total} lines malformed (over 1% tolerance)")]
    TooManyMalformed {
        path: String,
        malformed: usize,
        total: usize,
    },
    #[error("no data left after preprocessing")]
    EmptyAfterPreprocess,
    #[error("transfer source and target must be different datasets, both named `{0}`")]
    SameDomainTransfer(String),
    #[error("malformed bundle file {path}: {reason}")]
    BadBundle { path: String, reason: String },
}

/// One raw user-item event. Ratings keep the dataset's native scale until
/// [`binarize`]; datasets without timestamps carry per-user file-order
/// ordinals instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub rating: i32,
    pub timestamp: i64,
}

/// Dense-indexed universes of users, items, and attribute values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub attributes: Vec<String>,
    /// Attribute-value indices per item index; may be empty everywhere for a
    /// dataset without attributes.
    pub item_attrs: Vec<BTreeSet<u32>>,
}

impl Catalog {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.attributes.len()
    }

    pub fn has_attributes(&self) -> bool {
        !self.attributes.is_empty()
    }
}

/// A user's chronologically ordered item indices (ties broken by file order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user: u32,
    pub items: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One session window: `history` of length t at positions `window.0..=window.1`
/// of the user's sequence, followed by `future` of length g.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub user: u32,
    pub history: Vec<u32>,
    pub future: Vec<u32>,
    pub window: (usize, usize),
    pub split: Split,
}

/// A prepared dataset: catalog plus per-user sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub catalog: Catalog,
    pub sequences: Vec<UserSequence>,
}

/// Counts reported after preprocessing; `density` is
/// interactions / (users * items).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub attributes: usize,
    pub density: f64,
}

pub fn density(users: usize, items: usize, interactions: usize) -> f64 {
    if users == 0 || items == 0 {
        return 0.0;
    }
    interactions as f64 / (users as f64 * items as f64)
}

impl Stats {
    pub fn to_key_value(&self) -> String {
        format!(
            "users={}\nitems={}\ninteractions={}\nattributes={}\ndensity={:.6}\n",
            self.users, self.items, self.interactions, self.attributes, self.density
        )
    }
}

/// Keep interactions at or above `threshold` and collapse their ratings to 1.
pub fn binarize(interactions: Vec<Interaction>, threshold: i32) -> Vec<Interaction> {
    interactions
        .into_iter()
        .filter(|i| i.rating >= threshold)
        .map(|mut i| {
            i.rating = 1;
            i
        })
        .collect()
}

/// Drop attribute-less items (when the dataset has attributes at all) and
/// users with fewer than `min_interactions` events, then re-densify all
/// indices and build chronological sequences.
pub fn preprocess(
    interactions: &[Interaction],
    catalog: &Catalog,
    min_interactions: usize,
) -> Result<(Vec<UserSequence>, Catalog, Stats), IngestError> {
    let item_index: HashMap<&str, u32> = catalog
        .items
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i as u32))
        .collect();

    // Attribute filter first: user counts below are over attribute-bearing
    // items only, so both postconditions hold after one pass.
    let keep_item = |item_id: &str| -> bool {
        if !catalog.has_attributes() {
            return true;
        }
        match item_index.get(item_id) {
            Some(&idx) => !catalog.item_attrs[idx as usize].is_empty(),
            None => false,
        }
    };

    let mut per_user: BTreeMap<&str, Vec<(usize, &Interaction)>> = BTreeMap::new();
    for (file_order, inter) in interactions.iter().enumerate() {
        if keep_item(&inter.item_id) {
            per_user
                .entry(inter.user_id.as_str())
                .or_default()
                .push((file_order, inter));
        }
    }
    per_user.retain(|_, events| events.len() >= min_interactions);
    if per_user.is_empty() {
        return Err(IngestError::EmptyAfterPreprocess);
    }

    let mut users: Vec<String> = Vec::with_capacity(per_user.len());
    let mut items: Vec<String> = Vec::new();
    let mut new_item_index: HashMap<String, u32> = HashMap::new();
    let mut sequences = Vec::with_capacity(per_user.len());
    let mut interactions_kept = 0usize;

    for (user_id, mut events) in per_user {
        events.sort_by_key(|(file_order, inter)| (inter.timestamp, *file_order));
        let user_idx = users.len() as u32;
        users.push(user_id.to_string());
        let mut seq = Vec::with_capacity(events.len());
        for (_, inter) in events {
            let next = new_item_index.len() as u32;
            let idx = *new_item_index
                .entry(inter.item_id.clone())
                .or_insert_with(|| {
                    items.push(inter.item_id.clone());
                    next
                });
            seq.push(idx);
        }
        interactions_kept += seq.len();
        sequences.push(UserSequence {
            user: user_idx,
            items: seq,
        });
    }

    // Re-densify attributes over the retained items.
    let mut attributes: Vec<String> = Vec::new();
    let mut attr_index: HashMap<&str, u32> = HashMap::new();
    let mut item_attrs: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); items.len()];
    if catalog.has_attributes() {
        for (new_idx, item_id) in items.iter().enumerate() {
            let old_idx = item_index[item_id.as_str()];
            for &a in &catalog.item_attrs[old_idx as usize] {
                let attr_id = catalog.attributes[a as usize].as_str();
                let next = attr_index.len() as u32;
                let idx = *attr_index.entry(attr_id).or_insert_with(|| {
                    attributes.push(attr_id.to_string());
                    next
                });
                item_attrs[new_idx].insert(idx);
            }
        }
    }

    let stats = Stats {
        users: users.len(),
        items: items.len(),
        interactions: interactions_kept,
        attributes: attributes.len(),
        density: density(users.len(), items.len(), interactions_kept),
    };
    let catalog = Catalog {
        users,
        items,
        attributes,
        item_attrs,
    };
    Ok((sequences, catalog, stats))
}

/// Sliding windows of length `t + g` with the given stride, split 6:2:2 per
/// user in chronological order (train earliest). Users with fewer than five
/// windows put all but the last two in train, then one validation and one
/// test window as available.
pub fn make_csr_samples(
    sequences: &[UserSequence],
    t: usize,
    g: usize,
    stride: usize,
) -> Vec<TrainingSample> {
    assert!(t >= 2 && g >= 1 && stride >= 1, "invalid window parameters");
    let mut samples = Vec::new();
    for seq in sequences {
        let total = t + g;
        if seq.items.len() < total {
            continue;
        }
        let n_windows = (seq.items.len() - total) / stride + 1;
        let (n_train, n_val) = if n_windows >= 5 {
            let n_val = n_windows / 5;
            let n_test = n_windows / 5;
            (n_windows - n_val - n_test, n_val)
        } else {
            let n_train = n_windows.saturating_sub(2);
            let n_val = usize::min(1, n_windows - n_train);
            (n_train, n_val)
        };
        for w in 0..n_windows {
            let start = w * stride;
            let split = if w < n_train {
                Split::Train
            } else if w < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            samples.push(TrainingSample {
                user: seq.user,
                history: seq.items[start..start + t].to_vec(),
                future: seq.items[start + t..start + total].to_vec(),
                window: (start, start + t - 1),
                split,
            });
        }
    }
    samples
}

/// Deterministic disjoint user partition for inductive evaluation.
pub fn make_isr_split(
    sequences: &[UserSequence],
    train_user_fraction: f64,
    seed: u64,
) -> (Vec<UserSequence>, Vec<UserSequence>) {
    assert!(
        train_user_fraction > 0.0 && train_user_fraction < 1.0,
        "train fraction must lie in (0, 1)"
    );
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_train = ((sequences.len() as f64 * train_user_fraction).round() as usize)
        .clamp(1, sequences.len().saturating_sub(1).max(1));
    let mut train_idx: Vec<usize> = order[..n_train].to_vec();
    let mut test_idx: Vec<usize> = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train = train_idx.iter().map(|&i| sequences[i].clone()).collect();
    let test = test_idx.iter().map(|&i| sequences[i].clone()).collect();
    (train, test)
}

/// Descriptor for a source-to-target transfer run. Attribute nodes are
/// excluded on both sides: the target side may lack attributes entirely, so
/// relation weights for attribute edges would never fire consistently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferJob {
    pub source: String,
    pub target: String,
    pub attributes_disabled: bool,
}

pub fn make_tsr_pair(source: &Dataset, target: &Dataset) -> Result<TransferJob, IngestError> {
    if source.name == target.name {
        return Err(IngestError::SameDomainTransfer(source.name.clone()));
    }
    Ok(TransferJob {
        source: source.name.clone(),
        target: target.name.clone(),
        attributes_disabled: true,
    })
}
