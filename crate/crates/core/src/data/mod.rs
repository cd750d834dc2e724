//! Interaction data, the bipartite graph, splits and masked neighborhoods.

mod graph;
mod load;
mod split;
mod subgraph;

use std::fmt;

pub use graph::{BipartiteGraph, MaskedView, NeighborSource};
pub use load::{load_interactions, read_remap, write_remap, Dataset, Format};
pub use split::{
    extrinsic_split, intrinsic_split, meta_split, read_partitions, write_partitions, ExtrinsicSplit,
    MetaSplit,
};
pub use subgraph::{mask_neighborhood, MaskedNeighborhood, SubNode, Subgraph};
pub(crate) use subgraph::{
    candidates as subgraph_candidates, check_sampling_args, expand_per_parent as subgraph_expand,
    random_tree as subgraph_random,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::User => Side::Item,
            Side::Item => Side::User,
        }
    }

    pub fn tag(self) -> char {
        match self {
            Side::User => 'u',
            Side::Item => 'i',
        }
    }
}

/// A node of the bipartite graph: a side plus a dense id within that side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub side: Side,
    pub id: u32,
}

impl NodeRef {
    pub fn user(id: u32) -> Self {
        Self { side: Side::User, id }
    }

    pub fn item(id: u32) -> Self {
        Self { side: Side::Item, id }
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.side.tag(), self.id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    /// Seconds; 0 when the source has no timestamps.
    pub timestamp: i64,
    /// Position of the kept record in the source file.
    pub seq: u64,
}
