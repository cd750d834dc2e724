use super::{Dataset, Interaction, NodeRef, Side};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct EdgeMeta {
    timestamp: i64,
    seq: u64,
}

/// Immutable user-item interaction graph.
///
/// Adjacency lists are sorted by neighbor id and mirrored on both sides, so
/// `i` is in `neighbors(u)` exactly when `u` is in `neighbors(i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    user_adj: Vec<Vec<u32>>,
    user_meta: Vec<Vec<EdgeMeta>>,
    item_adj: Vec<Vec<u32>>,
    has_timestamps: bool,
}

/// Anything that can enumerate the neighbors of a node.
pub trait NeighborSource: Sync {
    fn neighbors(&self, node: NodeRef) -> &[u32];

    fn degree(&self, node: NodeRef) -> usize {
        self.neighbors(node).len()
    }
}

impl BipartiteGraph {
    /// Builds the graph from interactions whose ids are already dense.
    /// Sizes are at least one past the largest id seen.
    pub fn build(num_users: usize, num_items: usize, interactions: &[Interaction], has_timestamps: bool) -> Self {
        let nu = interactions.iter().map(|i| i.user as usize + 1).max().unwrap_or(0).max(num_users);
        let ni = interactions.iter().map(|i| i.item as usize + 1).max().unwrap_or(0).max(num_items);
        let mut user_edges: Vec<Vec<(u32, EdgeMeta)>> = vec![Vec::new(); nu];
        for it in interactions {
            user_edges[it.user as usize].push((
                it.item,
                EdgeMeta {
                    timestamp: it.timestamp,
                    seq: it.seq,
                },
            ));
        }
        let mut item_adj = vec![Vec::new(); ni];
        let mut user_adj = Vec::with_capacity(nu);
        let mut user_meta = Vec::with_capacity(nu);
        for (u, edges) in user_edges.iter_mut().enumerate() {
            // duplicates: keep the later timestamp
            edges.sort_by_key(|(i, m)| (*i, m.timestamp, m.seq));
            let mut ids: Vec<u32> = Vec::with_capacity(edges.len());
            let mut metas: Vec<EdgeMeta> = Vec::with_capacity(edges.len());
            for &(i, m) in edges.iter() {
                if ids.last() == Some(&i) {
                    *metas.last_mut().unwrap() = m;
                } else {
                    ids.push(i);
                    metas.push(m);
                    item_adj[i as usize].push(u as u32);
                }
            }
            user_adj.push(ids);
            user_meta.push(metas);
        }
        Self {
            user_adj,
            user_meta,
            item_adj,
            has_timestamps,
        }
    }

    pub fn from_dataset(d: &Dataset) -> Self {
        Self::build(d.num_users(), d.num_items(), &d.interactions, d.has_timestamps)
    }

    pub fn num_users(&self) -> usize {
        self.user_adj.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_adj.len()
    }

    pub fn count(&self, side: Side) -> usize {
        match side {
            Side::User => self.num_users(),
            Side::Item => self.num_items(),
        }
    }

    pub fn num_edges(&self) -> usize {
        self.user_adj.iter().map(Vec::len).sum()
    }

    pub fn has_timestamps(&self) -> bool {
        self.has_timestamps
    }

    /// Edge density `|E| / (|U| |I|)`.
    pub fn sparsity(&self) -> f64 {
        let cells = self.num_users() * self.num_items();
        if cells == 0 {
            0.0
        } else {
            self.num_edges() as f64 / cells as f64
        }
    }

    pub fn contains(&self, node: NodeRef) -> bool {
        (node.id as usize) < self.count(node.side)
    }

    /// All edges as interactions, ordered by user then item.
    pub fn interactions(&self) -> Vec<Interaction> {
        let mut out = Vec::with_capacity(self.num_edges());
        for (u, (items, metas)) in self.user_adj.iter().zip(&self.user_meta).enumerate() {
            for (&i, m) in items.iter().zip(metas) {
                out.push(Interaction {
                    user: u as u32,
                    item: i,
                    timestamp: m.timestamp,
                    seq: m.seq,
                });
            }
        }
        out
    }

    /// A user's items in chronological order. Equal timestamps are ordered by
    /// item id; without timestamps the source file order is used.
    pub fn chronological_items(&self, user: u32) -> Vec<(u32, i64)> {
        let u = user as usize;
        let mut v: Vec<(u32, EdgeMeta)> = self.user_adj[u].iter().copied().zip(self.user_meta[u].iter().copied()).collect();
        if self.has_timestamps {
            v.sort_by_key(|(i, m)| (m.timestamp, *i));
        } else {
            v.sort_by_key(|(i, m)| (m.seq, *i));
        }
        v.into_iter().map(|(i, m)| (i, m.timestamp)).collect()
    }

    /// Same node sets with only the edges for which `keep(user, item)` holds.
    pub fn filter_edges(&self, mut keep: impl FnMut(u32, u32) -> bool) -> Self {
        let kept: Vec<Interaction> = self.interactions().into_iter().filter(|e| keep(e.user, e.item)).collect();
        Self::build(self.num_users(), self.num_items(), &kept, self.has_timestamps)
    }
}

impl NeighborSource for BipartiteGraph {
    fn neighbors(&self, node: NodeRef) -> &[u32] {
        match node.side {
            Side::User => self.user_adj.get(node.id as usize).map_or(&[], Vec::as_slice),
            Side::Item => self.item_adj.get(node.id as usize).map_or(&[], Vec::as_slice),
        }
    }
}

/// The graph as seen by one target whose first-order neighbors are restricted
/// to a kept subset. Every other node keeps its full adjacency.
#[derive(Clone, Debug)]
pub struct MaskedView<'a> {
    graph: &'a BipartiteGraph,
    target: NodeRef,
    kept: Vec<u32>,
}

impl<'a> MaskedView<'a> {
    pub fn new(graph: &'a BipartiteGraph, target: NodeRef, mut kept: Vec<u32>) -> Self {
        kept.sort_unstable();
        kept.dedup();
        Self { graph, target, kept }
    }

    pub fn graph(&self) -> &BipartiteGraph {
        self.graph
    }
}

impl NeighborSource for MaskedView<'_> {
    fn neighbors(&self, node: NodeRef) -> &[u32] {
        if node == self.target {
            &self.kept
        } else {
            self.graph.neighbors(node)
        }
    }
}
