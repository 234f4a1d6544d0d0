//! h-hop enclosing subgraph extraction around a seed node set.
//!
//! Cumulative breadth-first search over all four relations, then a
//! vertex-induced subgraph on everything visited, re-indexed locally. An
//! overlay of injected user-item edges lets unseen users (whose history is
//! not in the parent graph) participate: the BFS and the induced subgraph
//! both see those edges.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{NodeKind, NodeRef, Relation, TripartiteGraph};

#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractOptions {
    /// Deterministic lowest-index truncation of each newly discovered BFS
    /// layer; `None` keeps every node.
    pub max_nodes_per_hop: Option<usize>,
}

/// A locally re-indexed h-hop neighborhood. Flat local ids enumerate users,
/// then items, then attributes, each ascending by global index.
#[derive(Debug, Clone)]
pub struct EnclosingSubgraph {
    pub graph: TripartiteGraph,
    pub local_to_global: Vec<NodeRef>,
    pub seed_locals: Vec<usize>,
    pub hop_of: Vec<u32>,
    n_users: usize,
    n_items: usize,
}

impl EnclosingSubgraph {
    pub fn node_count(&self) -> usize {
        self.local_to_global.len()
    }

    /// Flat local id of a global node, if retained.
    pub fn local_of(&self, n: NodeRef) -> Option<usize> {
        let (lo, hi) = match n.kind {
            NodeKind::User => (0, self.n_users),
            NodeKind::Item => (self.n_users, self.n_users + self.n_items),
            NodeKind::Attr => (self.n_users + self.n_items, self.local_to_global.len()),
        };
        self.local_to_global[lo..hi]
            .binary_search_by_key(&n.index, |r| r.index)
            .ok()
            .map(|i| lo + i)
    }

    pub fn kind_of(&self, local: usize) -> NodeKind {
        self.local_to_global[local].kind
    }

    /// Flat local neighbor ids of flat node `local` under `r`; empty when the
    /// relation does not apply to the node's kind.
    pub fn neighbors_flat(&self, local: usize, r: Relation) -> Vec<usize> {
        let node = self.local_node(local);
        if node.kind != r.source_kind() {
            return Vec::new();
        }
        let offset = match r.target_kind() {
            NodeKind::User => 0,
            NodeKind::Item => self.n_users,
            NodeKind::Attr => self.n_users + self.n_items,
        };
        self.graph
            .neighbors(node, r)
            .expect("kind checked above")
            .iter()
            .map(|&j| offset + j as usize)
            .collect()
    }

    /// The node in local per-kind index space for adjacency lookups.
    fn local_node(&self, local: usize) -> NodeRef {
        let kind = self.kind_of(local);
        let base = match kind {
            NodeKind::User => 0,
            NodeKind::Item => self.n_users,
            NodeKind::Attr => self.n_users + self.n_items,
        };
        NodeRef {
            kind,
            index: (local - base) as u32,
        }
    }

    /// Edge-list dump with global ids and per-node hop annotations.
    pub fn dump<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (local, node) in self.local_to_global.iter().enumerate() {
            writeln!(
                out,
                "node {} {} hop {}",
                node.kind.label(),
                node.index,
                self.hop_of[local]
            )?;
        }
        for local in 0..self.node_count() {
            let src = self.local_to_global[local];
            for r in Relation::ALL {
                for nbr in self.neighbors_flat(local, r) {
                    let dst = self.local_to_global[nbr];
                    writeln!(
                        out,
                        "edge {} {} {} {} {}",
                        src.kind.label(),
                        src.index,
                        r.label(),
                        dst.kind.label(),
                        dst.index
                    )?;
                }
            }
        }
        Ok(())
    }
}

struct Overlay {
    user_items: BTreeMap<u32, BTreeSet<u32>>,
    item_users: BTreeMap<u32, BTreeSet<u32>>,
}

impl Overlay {
    fn new(injected: &[(u32, u32)]) -> Self {
        let mut user_items: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        let mut item_users: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
        for &(u, v) in injected {
            user_items.entry(u).or_default().insert(v);
            item_users.entry(v).or_default().insert(u);
        }
        Overlay {
            user_items,
            item_users,
        }
    }

    fn neighbors(&self, n: NodeRef, r: Relation) -> Option<&BTreeSet<u32>> {
        match (n.kind, r) {
            (NodeKind::User, Relation::UserLikesItem) => self.user_items.get(&n.index),
            (NodeKind::Item, Relation::ItemAdoptedByUser) => self.item_users.get(&n.index),
            _ => None,
        }
    }
}

/// Extract the h-hop enclosing subgraph of `seeds`, with `injected`
/// user-item edges union-ed into the parent view. Seeds missing from the
/// parent stay in the result as isolated nodes.
pub fn extract(
    parent: &TripartiteGraph,
    seeds: &[NodeRef],
    hops: usize,
    injected: &[(u32, u32)],
    opts: ExtractOptions,
) -> EnclosingSubgraph {
    assert!(!seeds.is_empty(), "seed set must be non-empty");
    let overlay = Overlay::new(injected);

    let mut hop_by_node: BTreeMap<NodeRef, u32> = BTreeMap::new();
    let mut frontier: Vec<NodeRef> = Vec::new();
    for &s in seeds {
        if hop_by_node.insert(s, 0).is_none() {
            frontier.push(s);
        }
    }
    frontier.sort_unstable();

    for hop in 1..=hops as u32 {
        let mut discovered: BTreeSet<NodeRef> = BTreeSet::new();
        for &node in &frontier {
            for &r in TripartiteGraph::relations_of(node.kind) {
                let kind = r.target_kind();
                if let Ok(list) = parent.neighbors(node, r) {
                    for &j in list {
                        let nbr = NodeRef { kind, index: j };
                        if !hop_by_node.contains_key(&nbr) {
                            discovered.insert(nbr);
                        }
                    }
                }
                if let Some(extra) = overlay.neighbors(node, r) {
                    for &j in extra {
                        let nbr = NodeRef { kind, index: j };
                        if !hop_by_node.contains_key(&nbr) {
                            discovered.insert(nbr);
                        }
                    }
                }
            }
        }
        let mut layer: Vec<NodeRef> = discovered.into_iter().collect();
        if let Some(cap) = opts.max_nodes_per_hop {
            layer.truncate(cap);
        }
        if layer.is_empty() {
            break;
        }
        for &n in &layer {
            hop_by_node.insert(n, hop);
        }
        frontier = layer;
    }

    induce(parent, &overlay, hop_by_node, seeds)
}

fn induce(
    parent: &TripartiteGraph,
    overlay: &Overlay,
    hop_by_node: BTreeMap<NodeRef, u32>,
    seeds: &[NodeRef],
) -> EnclosingSubgraph {
    // BTreeMap order is (kind, index), exactly the flat local layout.
    let local_to_global: Vec<NodeRef> = hop_by_node.keys().copied().collect();
    let hops: Vec<u32> = hop_by_node.values().copied().collect();
    let n_users = local_to_global
        .iter()
        .filter(|n| n.kind == NodeKind::User)
        .count();
    let n_items = local_to_global
        .iter()
        .filter(|n| n.kind == NodeKind::Item)
        .count();
    let n_attrs = local_to_global.len() - n_users - n_items;

    let local_index = |n: NodeRef| -> Option<u32> {
        let (lo, hi, base) = match n.kind {
            NodeKind::User => (0, n_users, 0),
            NodeKind::Item => (n_users, n_users + n_items, n_users),
            NodeKind::Attr => (n_users + n_items, local_to_global.len(), n_users + n_items),
        };
        local_to_global[lo..hi]
            .binary_search_by_key(&n.index, |r| r.index)
            .ok()
            .map(|i| (lo + i - base) as u32)
    };

    let mut pairs: Vec<(NodeRef, NodeRef)> = Vec::new();
    for &node in &local_to_global {
        let src_local = local_index(node).expect("retained node");
        // Forward relations only; from_edges materializes both directions.
        for r in [Relation::UserLikesItem, Relation::ItemHasAttr] {
            if node.kind != r.source_kind() {
                continue;
            }
            let kind = r.target_kind();
            let mut targets: BTreeSet<u32> = BTreeSet::new();
            if let Ok(list) = parent.neighbors(node, r) {
                targets.extend(list.iter().copied());
            }
            if let Some(extra) = overlay.neighbors(node, r) {
                targets.extend(extra.iter().copied());
            }
            for j in targets {
                let dst = NodeRef { kind, index: j };
                if let Some(dst_local) = local_index(dst) {
                    pairs.push((
                        NodeRef {
                            kind: node.kind,
                            index: src_local,
                        },
                        NodeRef {
                            kind,
                            index: dst_local,
                        },
                    ));
                }
            }
        }
    }

    let graph = TripartiteGraph::from_edges(n_users, n_items, n_attrs, &pairs, parent.window())
        .expect("induced edges are kind-valid");
    let seed_locals = {
        let mut locals: Vec<usize> = Vec::with_capacity(seeds.len());
        for &s in seeds {
            let flat = local_to_global
                .binary_search(&s)
                .expect("seeds always retained");
            if !locals.contains(&flat) {
                locals.push(flat);
            }
        }
        locals
    };

    EnclosingSubgraph {
        graph,
        local_to_global,
        seed_locals,
        hop_of: hops,
        n_users,
        n_items,
    }
}

/// Extract for one session sample: seeds are the user plus every history
/// item, and the user's own history edges are injected in case the parent
/// lacks them (unseen users, or windows outside train coverage).
pub fn extract_for_sample(
    parent: &TripartiteGraph,
    user: u32,
    history_items: &[u32],
    hops: usize,
    opts: ExtractOptions,
) -> EnclosingSubgraph {
    assert!(!history_items.is_empty(), "history must be non-empty");
    let mut seeds = vec![NodeRef::user(user)];
    let mut items: Vec<u32> = history_items.to_vec();
    items.sort_unstable();
    items.dedup();
    seeds.extend(items.iter().map(|&v| NodeRef::item(v)));
    let injected: Vec<(u32, u32)> = items.iter().map(|&v| (user, v)).collect();
    extract(parent, &seeds, hops, &injected, opts)
}
