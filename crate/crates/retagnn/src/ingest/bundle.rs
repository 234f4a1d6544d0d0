//! Normalized dataset bundle: three UTF-8 tab-separated tables plus a
//! key=value statistics summary.
//!
//! * `interactions.tsv` — `user_idx  item_idx  position`, grouped by user in
//!   chronological order
//! * `item_attrs.tsv`   — `item_idx  attr_idx`
//! * `id_maps.tsv`      — `kind  idx  raw_id`
//! * `stats.txt`        — key=value counts and density

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Catalog, Dataset, IngestError, Stats, UserSequence};

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> IngestError {
    IngestError::BadBundle {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

pub fn write_bundle(dir: &Path, dataset: &Dataset, stats: &Stats) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let path = dir.join("interactions.tsv");
    let mut out = String::new();
    for seq in &dataset.sequences {
        for (pos, item) in seq.items.iter().enumerate() {
            out.push_str(&format!("{}\t{}\t{}\n", seq.user, item, pos));
        }
    }
    fs::write(&path, out).map_err(|e| io_err(&path, e))?;

    let path = dir.join("item_attrs.tsv");
    let mut out = String::new();
    for (item, attrs) in dataset.catalog.item_attrs.iter().enumerate() {
        for attr in attrs {
            out.push_str(&format!("{item}\t{attr}\n"));
        }
    }
    fs::write(&path, out).map_err(|e| io_err(&path, e))?;

    let path = dir.join("id_maps.tsv");
    let mut f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    writeln!(f, "name\t0\t{}", dataset.name).map_err(|e| io_err(&path, e))?;
    for (kind, ids) in [
        ("user", &dataset.catalog.users),
        ("item", &dataset.catalog.items),
        ("attr", &dataset.catalog.attributes),
    ] {
        for (idx, raw) in ids.iter().enumerate() {
            writeln!(f, "{kind}\t{idx}\t{raw}").map_err(|e| io_err(&path, e))?;
        }
    }

    let path = dir.join("stats.txt");
    fs::write(&path, stats.to_key_value()).map_err(|e| io_err(&path, e))?;
    Ok(())
}

pub fn read_bundle(dir: &Path) -> Result<Dataset, IngestError> {
    let maps_path = dir.join("id_maps.tsv");
    if !maps_path.exists() {
        return Err(IngestError::MissingFile(maps_path.display().to_string()));
    }
    let text = fs::read_to_string(&maps_path).map_err(|e| io_err(&maps_path, e))?;
    let mut name = String::from("bundle");
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut attributes = Vec::new();
    for line in text.lines() {
        let mut parts = line.splitn(3, '\t');
        let (kind, idx, raw) = match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(i), Some(r)) => (k, i, r),
            _ => return Err(bad(&maps_path, format!("short row `{line}`"))),
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| bad(&maps_path, format!("bad index in `{line}`")))?;
        let target = match kind {
            "name" => {
                name = raw.to_string();
                continue;
            }
            "user" => &mut users,
            "item" => &mut items,
            "attr" => &mut attributes,
            other => return Err(bad(&maps_path, format!("unknown kind `{other}`"))),
        };
        if idx != target.len() {
            return Err(bad(&maps_path, format!("non-dense index {idx} for {kind}")));
        }
        target.push(raw.to_string());
    }

    let attrs_path = dir.join("item_attrs.tsv");
    let mut item_attrs = vec![BTreeSet::new(); items.len()];
    let text = fs::read_to_string(&attrs_path).map_err(|e| io_err(&attrs_path, e))?;
    for line in text.lines() {
        let (item, attr) = line
            .split_once('\t')
            .ok_or_else(|| bad(&attrs_path, format!("short row `{line}`")))?;
        let item: usize = item
            .parse()
            .map_err(|_| bad(&attrs_path, format!("bad item in `{line}`")))?;
        let attr: u32 = attr
            .parse()
            .map_err(|_| bad(&attrs_path, format!("bad attr in `{line}`")))?;
        if item >= items.len() || attr as usize >= attributes.len() {
            return Err(bad(&attrs_path, format!("index out of range in `{line}`")));
        }
        item_attrs[item].insert(attr);
    }

    let inter_path = dir.join("interactions.tsv");
    let text = fs::read_to_string(&inter_path).map_err(|e| io_err(&inter_path, e))?;
    let mut sequences: Vec<UserSequence> = Vec::new();
    for line in text.lines() {
        let mut parts = line.splitn(3, '\t');
        let (user, item, pos) = match (parts.next(), parts.next(), parts.next()) {
            (Some(u), Some(i), Some(p)) => (u, i, p),
            _ => return Err(bad(&inter_path, format!("short row `{line}`"))),
        };
        let user: u32 = user
            .parse()
            .map_err(|_| bad(&inter_path, format!("bad user in `{line}`")))?;
        let item: u32 = item
            .parse()
            .map_err(|_| bad(&inter_path, format!("bad item in `{line}`")))?;
        let pos: usize = pos
            .parse()
            .map_err(|_| bad(&inter_path, format!("bad position in `{line}`")))?;
        if user as usize >= users.len() || item as usize >= items.len() {
            return Err(bad(&inter_path, format!("index out of range in `{line}`")));
        }
        if sequences.last().map(|s| s.user) != Some(user) {
            sequences.push(UserSequence {
                user,
                items: Vec::new(),
            });
        }
        let seq = sequences.last_mut().unwrap();
        if pos != seq.items.len() {
            return Err(bad(&inter_path, format!("non-contiguous position {pos}")));
        }
        seq.items.push(item);
    }

    Ok(Dataset {
        name,
        catalog: Catalog {
            users,
            items,
            attributes,
            item_attrs,
        },
        sequences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_round_trips() {
        let mut item_attrs = vec![BTreeSet::new(), BTreeSet::new()];
        item_attrs[0].insert(0);
        item_attrs[1].insert(0);
        item_attrs[1].insert(1);
        let dataset = Dataset {
            name: "toy".into(),
            catalog: Catalog {
                users: vec!["alice".into(), "bob".into()],
                items: vec!["x".into(), "y".into()],
                attributes: vec!["red".into(), "blue".into()],
                item_attrs,
            },
            sequences: vec![
                UserSequence {
                    user: 0,
                    items: vec![0, 1, 0],
                },
                UserSequence {
                    user: 1,
                    items: vec![1],
                },
            ],
        };
        let stats = Stats {
            users: 2,
            items: 2,
            interactions: 4,
            attributes: 2,
            density: super::super::density(2, 2, 4),
        };
        let dir = tempfile::tempdir().unwrap();
        write_bundle(dir.path(), &dataset, &stats).unwrap();
        let loaded = read_bundle(dir.path()).unwrap();
        assert_eq!(loaded, dataset);
        let stats_text = fs::read_to_string(dir.path().join("stats.txt")).unwrap();
        assert!(stats_text.contains("users=2"));
        assert!(stats_text.contains("density=1.000000"));
    }
}
