use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BipartiteGraph, NeighborSource, NodeRef};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubNode {
    pub node: NodeRef,
    /// Index of the parent in the previous layer (0 for layer 1 and the target).
    pub parent: usize,
}

/// A neighborhood tree rooted at a target. `layers[0]` holds only the target
/// and `layers[l]` holds at most `k^l` nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Subgraph {
    pub target: NodeRef,
    pub k: usize,
    pub layers: Vec<Vec<SubNode>>,
    /// Per-layer selection scores, filled only by the dynamic sampler.
    pub scores: Vec<Vec<f64>>,
}

pub type MaskedNeighborhood = Subgraph;

impl Subgraph {
    pub fn root(target: NodeRef, k: usize) -> Self {
        Self {
            target,
            k,
            layers: vec![vec![SubNode { node: target, parent: 0 }]],
            scores: Vec::new(),
        }
    }

    /// Number of layers below the target.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, l: usize) -> &[SubNode] {
        self.layers.get(l).map_or(&[], Vec::as_slice)
    }

    pub fn first_order(&self) -> Vec<NodeRef> {
        self.layer(1).iter().map(|n| n.node).collect()
    }

    pub fn node_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Indices in layer `l + 1` whose parent is `idx` in layer `l`.
    pub fn children(&self, l: usize, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.layer(l + 1)
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.parent == idx)
            .map(|(i, _)| i)
    }

    /// Child index lists for every node of layer `l`.
    pub fn child_lists(&self, l: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.layer(l).len()];
        for (i, n) in self.layer(l + 1).iter().enumerate() {
            out[n.parent].push(i);
        }
        out
    }

    /// Every distinct node in the tree.
    pub fn nodes(&self) -> Vec<NodeRef> {
        let mut v: Vec<NodeRef> = self.layers.iter().flatten().map(|n| n.node).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Parent-child pairs.
    pub fn edges(&self) -> Vec<(NodeRef, NodeRef)> {
        let mut out = Vec::new();
        for l in 1..self.layers.len() {
            for n in &self.layers[l] {
                out.push((self.layers[l - 1][n.parent].node, n.node));
            }
        }
        out
    }

    /// The node a layer-`l` entry descends from in layer `l - 1`, or `None` for the target.
    pub fn parent_node(&self, l: usize, idx: usize) -> Option<NodeRef> {
        if l == 0 {
            None
        } else {
            Some(self.layers[l - 1][self.layers[l][idx].parent].node)
        }
    }

    /// Drops empty trailing layers beyond the last populated one but keeps
    /// `depth` layers so callers can rely on `layers.len() == l_max + 1`.
    pub(crate) fn pad_to(&mut self, l_max: usize) {
        while self.layers.len() < l_max + 1 {
            self.layers.push(Vec::new());
        }
    }
}

/// Candidates of a layer-`l` node: its neighbors minus its own parent.
pub(crate) fn candidates<S: NeighborSource + ?Sized>(src: &S, sub: &Subgraph, l: usize, idx: usize) -> Vec<NodeRef> {
    let node = sub.layers[l][idx].node;
    let parent = sub.parent_node(l, idx);
    let side = node.side.other();
    src.neighbors(node)
        .iter()
        .map(|&id| NodeRef { side, id })
        .filter(|n| Some(*n) != parent)
        .collect()
}

/// Grows a tree by letting `choose` pick, per parent, which candidate indices
/// to keep (at most `k`). Chosen indices are kept in ascending order.
pub(crate) fn expand_per_parent<S, F>(src: &S, target: NodeRef, k: usize, l_max: usize, mut choose: F) -> Result<Subgraph>
where
    S: NeighborSource + ?Sized,
    F: FnMut(NodeRef, &[NodeRef]) -> Vec<usize>,
{
    check_sampling_args(src, target, k, l_max)?;
    let mut sub = Subgraph::root(target, k);
    for l in 1..=l_max {
        let mut layer = Vec::new();
        for p in 0..sub.layers[l - 1].len() {
            let cands = candidates(src, &sub, l - 1, p);
            if cands.is_empty() {
                continue;
            }
            let parent = sub.layers[l - 1][p].node;
            let mut picked = choose(parent, &cands);
            picked.sort_unstable();
            picked.dedup();
            for c in picked.into_iter().take(k) {
                layer.push(SubNode { node: cands[c], parent: p });
            }
        }
        sub.layers.push(layer);
    }
    sub.pad_to(l_max);
    Ok(sub)
}

pub(crate) fn check_sampling_args<S: NeighborSource + ?Sized>(src: &S, target: NodeRef, k: usize, l_max: usize) -> Result<()> {
    if k == 0 || l_max == 0 {
        return Err(Error::invalid(format!("k ({k}) and l_max ({l_max}) must be >= 1")));
    }
    if src.degree(target) == 0 {
        return Err(Error::Isolated(target.to_string()));
    }
    Ok(())
}

/// Keeps, uniformly at random and without replacement, at most `k` children
/// per node, so layer `l` holds at most `k^l` nodes.
pub fn mask_neighborhood(graph: &BipartiteGraph, target: NodeRef, k: usize, l_max: usize, seed: u64) -> Result<MaskedNeighborhood> {
    if !graph.contains(target) {
        return Err(Error::invalid(format!("unknown node {target}")));
    }
    random_tree(graph, target, k, l_max, seed)
}

pub(crate) fn random_tree<S: NeighborSource + ?Sized>(src: &S, target: NodeRef, k: usize, l_max: usize, seed: u64) -> Result<Subgraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    expand_per_parent(src, target, k, l_max, |_, cands| {
        let n = cands.len();
        if n <= k {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, k).into_vec()
        }
    })
}
