//! Planted-preference dataset generator for end-to-end checks and benches.
//!
//! Users belong to latent clusters; each cluster prefers a two-attribute
//! bundle, with emphasis drifting from the bundle's first attribute toward
//! the second over the course of a sequence. Popularity is nearly flat
//! across the catalog, so ranking above a popularity baseline requires
//! learning the cluster structure.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::{Catalog, Dataset, UserSequence};

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub name: String,
    pub users: usize,
    pub items: usize,
    /// Must be twice the cluster count: clusters map to attribute bundles.
    pub attrs: usize,
    pub clusters: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability of a uniformly random (off-preference) item per position.
    pub noise: f64,
    /// Probability that a position re-consumes one of the user's last five
    /// distinct items instead of drawing fresh from the cluster pool.
    pub repeat_prob: f64,
    /// Within-pool popularity skew: draw weights follow 1/(rank+1)^s. Zero
    /// means uniform; positive values create a long tail of rarely seen
    /// items that only graph structure can place.
    pub zipf_exponent: f64,
}

impl SyntheticSpec {
    pub fn new(name: &str) -> Self {
        SyntheticSpec {
            name: name.to_string(),
            users: 300,
            items: 200,
            attrs: 8,
            clusters: 4,
            min_len: 20,
            max_len: 40,
            noise: 0.1,
            repeat_prob: 0.0,
            zipf_exponent: 1.1,
        }
    }
}

pub fn planted_dataset(spec: &SyntheticSpec, seed: u64) -> Dataset {
    assert_eq!(
        spec.attrs,
        2 * spec.clusters,
        "each cluster prefers a two-attribute bundle"
    );
    assert!(spec.min_len <= spec.max_len && spec.min_len >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Items: primary attribute round-robin, sometimes the bundle partner too.
    let mut item_attrs: Vec<BTreeSet<u32>> = Vec::with_capacity(spec.items);
    let mut pools: Vec<Vec<u32>> = vec![Vec::new(); spec.attrs];
    for item in 0..spec.items {
        let primary = (item % spec.attrs) as u32;
        let mut attrs = BTreeSet::new();
        attrs.insert(primary);
        if rng.random_bool(0.4) {
            attrs.insert(primary ^ 1);
        }
        for &a in &attrs {
            pools[a as usize].push(item as u32);
        }
        item_attrs.push(attrs);
    }

    // Cumulative Zipf weights per pool for skewed within-pool draws.
    let pool_cdf: Vec<Vec<f64>> = pools
        .iter()
        .map(|pool| {
            let mut acc = 0.0;
            pool.iter()
                .enumerate()
                .map(|(rank, _)| {
                    acc += 1.0 / ((rank + 1) as f64).powf(spec.zipf_exponent);
                    acc
                })
                .collect()
        })
        .collect();
    let draw_from_pool = |rng: &mut ChaCha8Rng, attr: usize| -> u32 {
        let cdf = &pool_cdf[attr];
        let total = *cdf.last().expect("non-empty pool");
        let x = rng.random_range(0.0..total);
        let idx = cdf.partition_point(|&c| c < x).min(cdf.len() - 1);
        pools[attr][idx]
    };

    let mut sequences = Vec::with_capacity(spec.users);
    for user in 0..spec.users {
        let cluster = user % spec.clusters;
        let bundle = [(2 * cluster) as u32, (2 * cluster + 1) as u32];
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut items = Vec::with_capacity(len);
        for pos in 0..len {
            let recent: Vec<u32> = {
                let mut seen = Vec::new();
                for &it in items.iter().rev() {
                    if !seen.contains(&it) {
                        seen.push(it);
                    }
                    if seen.len() == 5 {
                        break;
                    }
                }
                seen
            };
            let item = if !recent.is_empty() && rng.random_bool(spec.repeat_prob) {
                recent[rng.random_range(0..recent.len())]
            } else if rng.random_bool(spec.noise) {
                rng.random_range(0..spec.items as u32)
            } else {
                let progress = pos as f64 / (len.max(2) - 1) as f64;
                let drift = 0.15 + 0.7 * progress;
                let attr = bundle[usize::from(rng.random_bool(drift))];
                draw_from_pool(&mut rng, attr as usize)
            };
            items.push(item);
        }
        sequences.push(UserSequence {
            user: user as u32,
            items,
        });
    }

    Dataset {
        name: spec.name.clone(),
        catalog: Catalog {
            users: (0..spec.users).map(|u| format!("u{u}")).collect(),
            items: (0..spec.items).map(|i| format!("i{i}")).collect(),
            attributes: (0..spec.attrs).map(|a| format!("a{a}")).collect(),
            item_attrs,
        },
        sequences,
    }
}
