//! Time-windowed user-item-attribute tripartite graph with four directed
//! relations.
//!
//! User-item edges carry only train-split interactions whose sequence
//! positions fall inside the window; item-attribute edges are item metadata
//! and appear in every window. Every edge is stored in both directions under
//! paired relations.

use std::io::{self, Write};

use thiserror::Error;

use crate::ingest::{Catalog, Split, TrainingSample, UserSequence};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("relation {relation:?} does not start at {kind:?} nodes")]
    IncompatibleRelation {
        relation: Relation,
        kind: NodeKind,
    },
    #[error("node {0:?} out of range")]
    NodeOutOfRange(NodeRef),
    #[error("no relation connects {0:?} and {1:?} nodes")]
    InvalidEdgeKinds(NodeKind, NodeKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    User,
    Item,
    Attr,
}

impl NodeKind {
    pub fn label(self) -> &'static str {
        match self {
            NodeKind::User => "user",
            NodeKind::Item => "item",
            NodeKind::Attr => "attr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub index: u32,
}

impl NodeRef {
    pub fn user(index: u32) -> Self {
        NodeRef {
            kind: NodeKind::User,
            index,
        }
    }

    pub fn item(index: u32) -> Self {
        NodeRef {
            kind: NodeKind::Item,
            index,
        }
    }

    pub fn attr(index: u32) -> Self {
        NodeRef {
            kind: NodeKind::Attr,
            index,
        }
    }
}

/// The four directed edge types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    UserLikesItem,
    ItemAdoptedByUser,
    ItemHasAttr,
    AttrPossessedByItem,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::UserLikesItem,
        Relation::ItemAdoptedByUser,
        Relation::ItemHasAttr,
        Relation::AttrPossessedByItem,
    ];

    pub fn source_kind(self) -> NodeKind {
        match self {
            Relation::UserLikesItem => NodeKind::User,
            Relation::ItemAdoptedByUser | Relation::ItemHasAttr => NodeKind::Item,
            Relation::AttrPossessedByItem => NodeKind::Attr,
        }
    }

    pub fn target_kind(self) -> NodeKind {
        match self {
            Relation::UserLikesItem => NodeKind::Item,
            Relation::ItemAdoptedByUser => NodeKind::User,
            Relation::ItemHasAttr => NodeKind::Attr,
            Relation::AttrPossessedByItem => NodeKind::Item,
        }
    }

    /// The relation of a directed edge from `src` to `dst` kinds, if one exists.
    pub fn between(src: NodeKind, dst: NodeKind) -> Option<Relation> {
        match (src, dst) {
            (NodeKind::User, NodeKind::Item) => Some(Relation::UserLikesItem),
            (NodeKind::Item, NodeKind::User) => Some(Relation::ItemAdoptedByUser),
            (NodeKind::Item, NodeKind::Attr) => Some(Relation::ItemHasAttr),
            (NodeKind::Attr, NodeKind::Item) => Some(Relation::AttrPossessedByItem),
            _ => None,
        }
    }

    pub fn tag(self) -> usize {
        match self {
            Relation::UserLikesItem => 0,
            Relation::ItemAdoptedByUser => 1,
            Relation::ItemHasAttr => 2,
            Relation::AttrPossessedByItem => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Relation::UserLikesItem => "user_likes_item",
            Relation::ItemAdoptedByUser => "item_adopted_by_user",
            Relation::ItemHasAttr => "item_has_attr",
            Relation::AttrPossessedByItem => "attr_possessed_by_item",
        }
    }

    pub fn reverse(self) -> Relation {
        match self {
            Relation::UserLikesItem => Relation::ItemAdoptedByUser,
            Relation::ItemAdoptedByUser => Relation::UserLikesItem,
            Relation::ItemHasAttr => Relation::AttrPossessedByItem,
            Relation::AttrPossessedByItem => Relation::ItemHasAttr,
        }
    }
}

/// Immutable tripartite adjacency with sorted, duplicate-free neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripartiteGraph {
    window: (usize, usize),
    user_items: Vec<Vec<u32>>,
    item_users: Vec<Vec<u32>>,
    item_attrs: Vec<Vec<u32>>,
    attr_items: Vec<Vec<u32>>,
    edge_count: usize,
}

impl TripartiteGraph {
    fn empty(n_users: usize, n_items: usize, n_attrs: usize, window: (usize, usize)) -> Self {
        TripartiteGraph {
            window,
            user_items: vec![Vec::new(); n_users],
            item_users: vec![Vec::new(); n_items],
            item_attrs: vec![Vec::new(); n_items],
            attr_items: vec![Vec::new(); n_attrs],
            edge_count: 0,
        }
    }

    /// Build a graph directly from undirected (user-item or item-attr) pairs;
    /// both directions are materialized.
    pub fn from_edges(
        n_users: usize,
        n_items: usize,
        n_attrs: usize,
        pairs: &[(NodeRef, NodeRef)],
        window: (usize, usize),
    ) -> Result<Self, GraphError> {
        let mut g = TripartiteGraph::empty(n_users, n_items, n_attrs, window);
        for &(a, b) in pairs {
            let relation = Relation::between(a.kind, b.kind)
                .ok_or(GraphError::InvalidEdgeKinds(a.kind, b.kind))?;
            g.check_node(a)?;
            g.check_node(b)?;
            match relation {
                Relation::UserLikesItem => {
                    g.user_items[a.index as usize].push(b.index);
                    g.item_users[b.index as usize].push(a.index);
                }
                Relation::ItemAdoptedByUser => {
                    g.item_users[a.index as usize].push(b.index);
                    g.user_items[b.index as usize].push(a.index);
                }
                Relation::ItemHasAttr => {
                    g.item_attrs[a.index as usize].push(b.index);
                    g.attr_items[b.index as usize].push(a.index);
                }
                Relation::AttrPossessedByItem => {
                    g.attr_items[a.index as usize].push(b.index);
                    g.item_attrs[b.index as usize].push(a.index);
                }
            }
        }
        g.finish();
        Ok(g)
    }

    fn check_node(&self, n: NodeRef) -> Result<(), GraphError> {
        let limit = match n.kind {
            NodeKind::User => self.user_items.len(),
            NodeKind::Item => self.item_users.len(),
            NodeKind::Attr => self.attr_items.len(),
        };
        if (n.index as usize) < limit {
            Ok(())
        } else {
            Err(GraphError::NodeOutOfRange(n))
        }
    }

    fn finish(&mut self) {
        let mut count = 0;
        for lists in [
            &mut self.user_items,
            &mut self.item_users,
            &mut self.item_attrs,
            &mut self.attr_items,
        ] {
            for l in lists.iter_mut() {
                l.sort_unstable();
                l.dedup();
                count += l.len();
            }
        }
        self.edge_count = count;
    }

    pub fn window(&self) -> (usize, usize) {
        self.window
    }

    pub fn n_users(&self) -> usize {
        self.user_items.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_users.len()
    }

    pub fn n_attrs(&self) -> usize {
        self.attr_items.len()
    }

    /// Directed edge count.
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Sorted neighbor indices of `n` under relation `r`.
    pub fn neighbors(&self, n: NodeRef, r: Relation) -> Result<&[u32], GraphError> {
        if r.source_kind() != n.kind {
            return Err(GraphError::IncompatibleRelation {
                relation: r,
                kind: n.kind,
            });
        }
        self.check_node(n)?;
        let list = match r {
            Relation::UserLikesItem => &self.user_items[n.index as usize],
            Relation::ItemAdoptedByUser => &self.item_users[n.index as usize],
            Relation::ItemHasAttr => &self.item_attrs[n.index as usize],
            Relation::AttrPossessedByItem => &self.attr_items[n.index as usize],
        };
        Ok(list)
    }

    pub fn has_user_item_edge(&self, user: u32, item: u32) -> bool {
        self.user_items
            .get(user as usize)
            .is_some_and(|l| l.binary_search(&item).is_ok())
    }

    /// Relations that can start at nodes of `kind`.
    pub fn relations_of(kind: NodeKind) -> &'static [Relation] {
        match kind {
            NodeKind::User => &[Relation::UserLikesItem],
            NodeKind::Item => &[Relation::ItemAdoptedByUser, Relation::ItemHasAttr],
            NodeKind::Attr => &[Relation::AttrPossessedByItem],
        }
    }

    /// Edge-list dump, one directed edge per line:
    /// `src_kind src_idx relation dst_kind dst_idx`.
    pub fn dump_edges<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for (u, items) in self.user_items.iter().enumerate() {
            for &v in items {
                writeln!(out, "user {u} user_likes_item item {v}")?;
            }
        }
        for (v, users) in self.item_users.iter().enumerate() {
            for &u in users {
                writeln!(out, "item {v} item_adopted_by_user user {u}")?;
            }
        }
        for (v, attrs) in self.item_attrs.iter().enumerate() {
            for &a in attrs {
                writeln!(out, "item {v} item_has_attr attr {a}")?;
            }
        }
        for (a, items) in self.attr_items.iter().enumerate() {
            for &v in items {
                writeln!(out, "attr {a} attr_possessed_by_item item {v}")?;
            }
        }
        Ok(())
    }
}

/// Builds window graphs from the train-split positions of a sample set.
///
/// Train coverage is the union of history positions over train samples, so
/// futures of validation and test windows can never enter a graph.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    n_users: usize,
    n_items: usize,
    n_attrs: usize,
    /// Per user: sorted (position, item) pairs covered by train histories.
    train_positions: Vec<Vec<(u32, u32)>>,
    item_attrs: Vec<Vec<u32>>,
    include_attrs: bool,
}

impl GraphBuilder {
    pub fn new(
        catalog: &Catalog,
        sequences: &[UserSequence],
        samples: &[TrainingSample],
        include_attrs: bool,
    ) -> Self {
        let mut covered: Vec<Vec<u32>> = vec![Vec::new(); catalog.n_users()];
        for s in samples {
            if s.split != Split::Train {
                continue;
            }
            for pos in s.window.0..=s.window.1 {
                covered[s.user as usize].push(pos as u32);
            }
        }
        let mut train_positions = vec![Vec::new(); catalog.n_users()];
        let mut items_by_user: Vec<Option<&[u32]>> = vec![None; catalog.n_users()];
        for seq in sequences {
            items_by_user[seq.user as usize] = Some(&seq.items);
        }
        for (user, mut positions) in covered.into_iter().enumerate() {
            positions.sort_unstable();
            positions.dedup();
            if let Some(items) = items_by_user[user] {
                train_positions[user] = positions
                    .into_iter()
                    .filter(|&p| (p as usize) < items.len())
                    .map(|p| (p, items[p as usize]))
                    .collect();
            }
        }
        let include_attrs = include_attrs && catalog.has_attributes();
        GraphBuilder {
            n_users: catalog.n_users(),
            n_items: catalog.n_items(),
            n_attrs: catalog.n_attrs(),
            train_positions,
            item_attrs: catalog
                .item_attrs
                .iter()
                .map(|s| s.iter().copied().collect())
                .collect(),
            include_attrs,
        }
    }

    /// All (user, item) interactions currently in train coverage.
    pub fn train_interactions(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.train_positions
            .iter()
            .enumerate()
            .flat_map(|(u, pos)| pos.iter().map(move |&(_, item)| (u as u32, item)))
    }

    pub fn build(&self, window: (usize, usize)) -> TripartiteGraph {
        let mut g = TripartiteGraph::empty(self.n_users, self.n_items, self.n_attrs, window);
        for (user, positions) in self.train_positions.iter().enumerate() {
            for &(pos, item) in positions {
                let pos = pos as usize;
                if pos >= window.0 && pos <= window.1 {
                    g.user_items[user].push(item);
                    g.item_users[item as usize].push(user as u32);
                }
            }
        }
        if self.include_attrs {
            for (item, attrs) in self.item_attrs.iter().enumerate() {
                for &a in attrs {
                    g.item_attrs[item].push(a);
                    g.attr_items[a as usize].push(item as u32);
                }
            }
        }
        g.finish();
        g
    }
}

/// Window-keyed graph store. Warm it with every window the run needs, then
/// share it read-only across parallel workers.
#[derive(Debug)]
pub struct GraphCache {
    builder: GraphBuilder,
    graphs: std::collections::HashMap<(usize, usize), TripartiteGraph>,
}

impl GraphCache {
    pub fn new(builder: GraphBuilder) -> Self {
        GraphCache {
            builder,
            graphs: std::collections::HashMap::new(),
        }
    }

    pub fn builder(&self) -> &GraphBuilder {
        &self.builder
    }

    pub fn warm(&mut self, windows: impl IntoIterator<Item = (usize, usize)>) {
        for w in windows {
            self.graphs
                .entry(w)
                .or_insert_with(|| self.builder.build(w));
        }
    }

    /// Panics when the window was never warmed; warming happens up front so
    /// lookups can run concurrently.
    pub fn get(&self, window: (usize, usize)) -> &TripartiteGraph {
        self.graphs
            .get(&window)
            .unwrap_or_else(|| panic!("graph cache missing window {window:?}"))
    }
}

/// Spec-shaped convenience over [`GraphBuilder`].
pub fn build_graph(
    samples: &[TrainingSample],
    sequences: &[UserSequence],
    catalog: &Catalog,
    window: (usize, usize),
    include_attrs: bool,
) -> TripartiteGraph {
    GraphBuilder::new(catalog, sequences, samples, include_attrs).build(window)
}

/// The illustrative seven-pair toy graph: two users, three items, two
/// attributes where only the second attribute is connected.
pub fn toy_graph() -> TripartiteGraph {
    let pairs = [
        (NodeRef::user(0), NodeRef::item(0)), // u1 - v1
        (NodeRef::user(0), NodeRef::item(2)), // u1 - v3
        (NodeRef::user(1), NodeRef::item(1)), // u2 - v2
        (NodeRef::user(1), NodeRef::item(2)), // u2 - v3
        (NodeRef::item(0), NodeRef::attr(1)), // v1 - a2
        (NodeRef::item(1), NodeRef::attr(1)), // v2 - a2
        (NodeRef::item(2), NodeRef::attr(1)), // v3 - a2
    ];
    TripartiteGraph::from_edges(2, 3, 2, &pairs, (0, 0)).expect("valid toy graph")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Split;

    #[test]
    fn toy_graph_has_fourteen_directed_edges() {
        let g = toy_graph();
        assert_eq!(g.edge_count(), 14);
    }

    #[test]
    fn toy_neighbors() {
        let g = toy_graph();
        assert_eq!(
            g.neighbors(NodeRef::item(2), Relation::ItemAdoptedByUser)
                .unwrap(),
            &[0, 1]
        );
        // a1 is isolated
        assert!(g
            .neighbors(NodeRef::attr(0), Relation::AttrPossessedByItem)
            .unwrap()
            .is_empty());
        assert!(matches!(
            g.neighbors(NodeRef::user(0), Relation::ItemHasAttr),
            Err(GraphError::IncompatibleRelation { .. })
        ));
    }

    #[test]
    fn degree_symmetry() {
        let g = toy_graph();
        let likes: usize = (0..g.n_users())
            .map(|u| {
                g.neighbors(NodeRef::user(u as u32), Relation::UserLikesItem)
                    .unwrap()
                    .len()
            })
            .sum();
        let adopted: usize = (0..g.n_items())
            .map(|v| {
                g.neighbors(NodeRef::item(v as u32), Relation::ItemAdoptedByUser)
                    .unwrap()
                    .len()
            })
            .sum();
        assert_eq!(likes, adopted);
    }

    #[test]
    fn rejects_same_kind_and_user_attr_edges() {
        assert!(TripartiteGraph::from_edges(
            2,
            1,
            1,
            &[(NodeRef::user(0), NodeRef::user(1))],
            (0, 0)
        )
        .is_err());
        assert!(TripartiteGraph::from_edges(
            1,
            1,
            1,
            &[(NodeRef::user(0), NodeRef::attr(0))],
            (0, 0)
        )
        .is_err());
    }

    fn sample(user: u32, window: (usize, usize), split: Split) -> TrainingSample {
        TrainingSample {
            user,
            history: vec![],
            future: vec![],
            window,
            split,
        }
    }

    fn toy_sequences() -> Vec<UserSequence> {
        vec![
            UserSequence {
                user: 0,
                items: vec![0, 2, 1, 0],
            },
            UserSequence {
                user: 1,
                items: vec![1, 2, 0, 1],
            },
        ]
    }

    fn toy_catalog() -> Catalog {
        use std::collections::BTreeSet;
        let mut item_attrs = vec![BTreeSet::new(), BTreeSet::new(), BTreeSet::new()];
        item_attrs[0].insert(0);
        item_attrs[1].insert(0);
        item_attrs[2].insert(1);
        Catalog {
            users: vec!["u1".into(), "u2".into()],
            items: vec!["v1".into(), "v2".into(), "v3".into()],
            attributes: vec!["a1".into(), "a2".into()],
            item_attrs,
        }
    }

    #[test]
    fn build_respects_window_and_split() {
        let catalog = toy_catalog();
        let sequences = toy_sequences();
        let samples = vec![
            sample(0, (0, 1), Split::Train),
            sample(1, (0, 1), Split::Train),
            sample(0, (2, 3), Split::Test),
        ];
        let g = build_graph(&samples, &sequences, &catalog, (0, 1), true);
        // Train coverage: user 0 positions 0..=1 (items 0, 2); user 1 items 1, 2.
        assert!(g.has_user_item_edge(0, 0));
        assert!(g.has_user_item_edge(0, 2));
        assert!(g.has_user_item_edge(1, 1));
        assert!(g.has_user_item_edge(1, 2));
        // Test-split coverage must not appear.
        assert!(!g.has_user_item_edge(0, 1));

        // Attribute edges come from the catalog regardless of window.
        let g0 = build_graph(&samples, &sequences, &catalog, (1, 1), true);
        assert_eq!(
            g0.neighbors(NodeRef::item(0), Relation::ItemHasAttr).unwrap(),
            &[0]
        );

        // Attributes disabled: zero attribute edges regardless of catalog.
        let g_no_attr = build_graph(&samples, &sequences, &catalog, (0, 1), false);
        for v in 0..3 {
            assert!(g_no_attr
                .neighbors(NodeRef::item(v), Relation::ItemHasAttr)
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn empty_sample_list_builds_empty_user_item_edges() {
        let catalog = toy_catalog();
        let sequences = toy_sequences();
        let g = build_graph(&[], &sequences, &catalog, (0, 3), true);
        for u in 0..2 {
            assert!(g
                .neighbors(NodeRef::user(u), Relation::UserLikesItem)
                .unwrap()
                .is_empty());
        }
    }

    #[test]
    fn sub_window_edges_are_subset() {
        let catalog = toy_catalog();
        let sequences = toy_sequences();
        let samples = vec![
            sample(0, (0, 3), Split::Train),
            sample(1, (0, 3), Split::Train),
        ];
        let builder = GraphBuilder::new(&catalog, &sequences, &samples, true);
        let wide = builder.build((0, 3));
        let narrow = builder.build((0, 1));
        for u in 0..2u32 {
            let wide_items = wide.neighbors(NodeRef::user(u), Relation::UserLikesItem).unwrap();
            for item in narrow.neighbors(NodeRef::user(u), Relation::UserLikesItem).unwrap() {
                assert!(wide_items.contains(item));
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let catalog = toy_catalog();
        let sequences = toy_sequences();
        let samples = vec![
            sample(0, (0, 2), Split::Train),
            sample(1, (1, 3), Split::Train),
        ];
        let a = build_graph(&samples, &sequences, &catalog, (0, 3), true);
        let b = build_graph(&samples, &sequences, &catalog, (0, 3), true);
        let mut dump_a = Vec::new();
        let mut dump_b = Vec::new();
        a.dump_edges(&mut dump_a).unwrap();
        b.dump_edges(&mut dump_b).unwrap();
        assert_eq!(dump_a, dump_b);
        assert_eq!(a, b);
    }
}
