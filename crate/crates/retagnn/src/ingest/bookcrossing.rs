//! Book-Crossing loader: `BX-Book-Ratings.csv` with `;`-separated quoted
//! fields. The dump carries no timestamps, so chronology is per-user file
//! order, and no item attributes exist.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::{Catalog, IngestError, Interaction};

const RATING_MIN: i32 = 0;
const RATING_MAX: i32 = 10;

pub fn load_bookcrossing(dir: &Path) -> Result<(Vec<Interaction>, Catalog), IngestError> {
    let path = dir.join("BX-Book-Ratings.csv");
    if !path.exists() {
        return Err(IngestError::MissingFile(path.display().to_string()));
    }
    let bytes = std::fs::read(&path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    // latin-1: byte-for-byte code points, keeps the csv reader happy
    let text: String = bytes.iter().map(|&b| b as char).collect();

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .quote(b'"')
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut interactions = Vec::new();
    let mut seen = BTreeSet::new();
    let mut next_ordinal: HashMap<String, i64> = HashMap::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for record in reader.records() {
        total += 1;
        let parsed = record.ok().and_then(|rec| {
            if rec.len() != 3 {
                return None;
            }
            let user = rec.get(0)?.trim().to_string();
            let item = rec.get(1)?.trim().to_string();
            let rating: i32 = rec.get(2)?.trim().parse().ok()?;
            if user.is_empty() || item.is_empty() || !(RATING_MIN..=RATING_MAX).contains(&rating)
            {
                return None;
            }
            Some((user, item, rating))
        });
        match parsed {
            Some((user, item, rating)) => {
                let ordinal = next_ordinal.entry(user.clone()).or_insert(0);
                let inter = Interaction {
                    user_id: user,
                    item_id: item,
                    rating,
                    timestamp: *ordinal,
                };
                *ordinal += 1;
                if seen.insert((
                    inter.user_id.clone(),
                    inter.item_id.clone(),
                    inter.timestamp,
                )) {
                    interactions.push(inter);
                }
            }
            None => malformed += 1,
        }
    }
    if total > 0 && malformed * 100 > total {
        return Err(IngestError::TooManyMalformed {
            path: path.display().to_string(),
            malformed,
            total,
        });
    }

    let mut users = Vec::new();
    let mut user_index: HashMap<&str, u32> = HashMap::new();
    let mut items = Vec::new();
    let mut item_index: HashMap<&str, u32> = HashMap::new();
    for inter in &interactions {
        if !user_index.contains_key(inter.user_id.as_str()) {
            user_index.insert(inter.user_id.as_str(), users.len() as u32);
            users.push(inter.user_id.clone());
        }
        if !item_index.contains_key(inter.item_id.as_str()) {
            item_index.insert(inter.item_id.as_str(), items.len() as u32);
            items.push(inter.item_id.clone());
        }
    }
    let item_attrs = vec![BTreeSet::new(); items.len()];
    Ok((
        interactions,
        Catalog {
            users,
            items,
            attributes: Vec::new(),
            item_attrs,
        },
    ))
}
