//! MovieLens-1M loader: `ratings.dat` lines `UserID::MovieID::Rating::Timestamp`
//! and `movies.dat` genre lists, both latin-1 encoded.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::{Catalog, IngestError, Interaction};

const RATING_MIN: i32 = 1;
const RATING_MAX: i32 = 5;

fn read_latin1(path: &Path) -> Result<String, IngestError> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.display().to_string()));
    }
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    // latin-1 maps each byte to the same code point
    Ok(bytes.iter().map(|&b| b as char).collect())
}

fn check_malformed(path: &Path, malformed: usize, total: usize) -> Result<(), IngestError> {
    if total > 0 && malformed * 100 > total {
        return Err(IngestError::TooManyMalformed {
            path: path.display().to_string(),
            malformed,
            total,
        });
    }
    Ok(())
}

pub fn load_movielens(dir: &Path) -> Result<(Vec<Interaction>, Catalog), IngestError> {
    let ratings_path = dir.join("ratings.dat");
    let movies_path = dir.join("movies.dat");

    let ratings_text = read_latin1(&ratings_path)?;
    let mut interactions = Vec::new();
    let mut seen = BTreeSet::new();
    let mut malformed = 0usize;
    let mut total = 0usize;
    for line in ratings_text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let mut parts = line.split("::");
        let parsed = (|| {
            let user = parts.next()?.to_string();
            let item = parts.next()?.to_string();
            let rating: i32 = parts.next()?.parse().ok()?;
            let ts: i64 = parts.next()?.parse().ok()?;
            if parts.next().is_some() || !(RATING_MIN..=RATING_MAX).contains(&rating) {
                return None;
            }
            Some(Interaction {
                user_id: user,
                item_id: item,
                rating,
                timestamp: ts,
            })
        })();
        match parsed {
            Some(inter) => {
                if seen.insert((inter.user_id.clone(), inter.item_id.clone(), inter.timestamp)) {
                    interactions.push(inter);
                }
            }
            None => malformed += 1,
        }
    }
    check_malformed(&ratings_path, malformed, total)?;

    let movies_text = read_latin1(&movies_path)?;
    let mut genres_by_item: HashMap<String, Vec<String>> = HashMap::new();
    let mut movie_malformed = 0usize;
    let mut movie_total = 0usize;
    for line in movies_text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        movie_total += 1;
        // MovieID::Title::Genres, genres pipe-separated. Titles may contain
        // "::" only in malformed rows; split from both ends.
        let parsed = (|| {
            let (movie_id, rest) = line.split_once("::")?;
            let (_title, genres) = rest.rsplit_once("::")?;
            let genres: Vec<String> = genres
                .split('|')
                .map(str::trim)
                .filter(|g| !g.is_empty())
                .map(str::to_string)
                .collect();
            Some((movie_id.to_string(), genres))
        })();
        match parsed {
            Some((id, genres)) => {
                genres_by_item.insert(id, genres);
            }
            None => movie_malformed += 1,
        }
    }
    check_malformed(&movies_path, movie_malformed, movie_total)?;

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

    let mut attributes = Vec::new();
    let mut attr_index: HashMap<String, u32> = HashMap::new();
    let mut item_attrs = vec![BTreeSet::new(); items.len()];
    for (item_id, &idx) in &item_index {
        if let Some(genres) = genres_by_item.get(*item_id) {
            for g in genres {
                let next = attr_index.len() as u32;
                let attr = *attr_index.entry(g.clone()).or_insert_with(|| {
                    attributes.push(g.clone());
                    next
                });
                item_attrs[idx as usize].insert(attr);
            }
        }
    }

    Ok((
        interactions,
        Catalog {
            users,
            items,
            attributes,
            item_attrs,
        },
    ))
}
