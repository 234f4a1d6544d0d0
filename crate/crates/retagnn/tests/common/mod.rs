//! Shared oracles for integration tests: independent reimplementations used
//! to check the library, never the library's own code paths.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use retagnn::graph::{NodeRef, Relation, TripartiteGraph};

/// Brute-force BFS distances from one node, walking the four relations
/// directly.
pub fn bfs_distances(graph: &TripartiteGraph, start: NodeRef) -> BTreeMap<NodeRef, usize> {
    let mut dist = BTreeMap::new();
    dist.insert(start, 0);
    let mut queue = VecDeque::from([start]);
    while let Some(node) = queue.pop_front() {
        let d = dist[&node];
        for r in Relation::ALL {
            if r.source_kind() != node.kind {
                continue;
            }
            let kind = r.target_kind();
            for &j in graph.neighbors(node, r).unwrap() {
                let nbr = NodeRef { kind, index: j };
                if !dist.contains_key(&nbr) {
                    dist.insert(nbr, d + 1);
                    queue.push_back(nbr);
                }
            }
        }
    }
    dist
}

/// Nodes within `h` hops of any seed, by the definition.
pub fn oracle_node_set(
    graph: &TripartiteGraph,
    seeds: &[NodeRef],
    h: usize,
) -> BTreeSet<NodeRef> {
    let mut keep = BTreeSet::new();
    for &s in seeds {
        for (node, d) in bfs_distances(graph, s) {
            if d <= h {
                keep.insert(node);
            }
        }
        keep.insert(s);
    }
    keep
}

/// All directed edges of the graph between retained nodes.
pub fn oracle_edge_set(
    graph: &TripartiteGraph,
    keep: &BTreeSet<NodeRef>,
) -> BTreeSet<(NodeRef, NodeRef, usize)> {
    let mut edges = BTreeSet::new();
    for &node in keep {
        for r in Relation::ALL {
            if r.source_kind() != node.kind {
                continue;
            }
            let kind = r.target_kind();
            for &j in graph.neighbors(node, r).unwrap() {
                let nbr = NodeRef { kind, index: j };
                if keep.contains(&nbr) {
                    edges.insert((node, nbr, r.tag()));
                }
            }
        }
    }
    edges
}

/// Random tripartite graph bounded by a node budget.
pub fn random_tripartite<R: Rng>(rng: &mut R, max_nodes: usize) -> TripartiteGraph {
    let n_users = rng.random_range(1..=max_nodes / 3);
    let n_items = rng.random_range(1..=max_nodes / 3);
    let n_attrs = rng.random_range(1..=max_nodes / 3);
    let mut pairs = Vec::new();
    let ui_edges = rng.random_range(0..=n_users * n_items / 2 + 1);
    for _ in 0..ui_edges {
        pairs.push((
            NodeRef::user(rng.random_range(0..n_users) as u32),
            NodeRef::item(rng.random_range(0..n_items) as u32),
        ));
    }
    let va_edges = rng.random_range(0..=n_items * n_attrs / 2 + 1);
    for _ in 0..va_edges {
        pairs.push((
            NodeRef::item(rng.random_range(0..n_items) as u32),
            NodeRef::attr(rng.random_range(0..n_attrs) as u32),
        ));
    }
    TripartiteGraph::from_edges(n_users, n_items, n_attrs, &pairs, (0, 0)).unwrap()
}

/// A random node of the graph, any kind.
pub fn random_node<R: Rng>(rng: &mut R, graph: &TripartiteGraph) -> NodeRef {
    match rng.random_range(0..3) {
        0 => NodeRef::user(rng.random_range(0..graph.n_users()) as u32),
        1 => NodeRef::item(rng.random_range(0..graph.n_items()) as u32),
        _ => NodeRef::attr(rng.random_range(0..graph.n_attrs()) as u32),
    }
}

/// Direct-definition ranking metrics, written from the formulas without
/// reference to the library implementation.
pub mod metric_oracle {
    use std::collections::BTreeSet;

    pub fn precision(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let mut hits = 0usize;
        for (i, item) in ranked.iter().enumerate() {
            if i >= k {
                break;
            }
            if relevant.contains(item) {
                hits += 1;
            }
        }
        hits as f64 / k as f64
    }

    pub fn recall(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> f64 {
        if relevant.is_empty() {
            return 0.0;
        }
        let mut hits = 0usize;
        for (i, item) in ranked.iter().enumerate() {
            if i >= k {
                break;
            }
            if relevant.contains(item) {
                hits += 1;
            }
        }
        hits as f64 / relevant.len() as f64
    }

    pub fn ndcg(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> f64 {
        if relevant.is_empty() || k == 0 {
            return 0.0;
        }
        let mut dcg = 0.0;
        for (i, item) in ranked.iter().enumerate() {
            if i >= k {
                break;
            }
            if relevant.contains(item) {
                dcg += 1.0 / ((i + 2) as f64).log2();
            }
        }
        let mut idcg = 0.0;
        for i in 0..relevant.len().min(k) {
            idcg += 1.0 / ((i + 2) as f64).log2();
        }
        dcg / idcg
    }
}
