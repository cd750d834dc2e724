//! Neighbor samplers that build per-target subgraphs with at most `k^l`
//! nodes at layer `l`.
//!
//! * random: uniform without replacement, `k` children per parent
//! * importance: like random but weighted by candidate degree
//! * dynamic: per layer, the `k^l` candidates whose `meta || current`
//!   embedding is most cosine-similar to the target's

use std::cmp::Ordering;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{dot, Tensor, COSINE_EPS};
use crate::data::{NeighborSource, NodeRef, Side, SubNode, Subgraph};
use crate::error::{Error, Result};

pub use crate::data::Subgraph as SampledSubgraph;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Random,
    Importance,
    Dynamic,
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SamplerKind::Random),
            "importance" => Ok(SamplerKind::Importance),
            "dynamic" => Ok(SamplerKind::Dynamic),
            other => Err(Error::Config(format!("unknown sampler `{other}`"))),
        }
    }
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Random => "random",
            SamplerKind::Importance => "importance",
            SamplerKind::Dynamic => "dynamic",
        }
    }
}

/// One `d`-dimensional vector per user and per item.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeVectors {
    pub users: Tensor,
    pub items: Tensor,
}

impl NodeVectors {
    pub fn new(users: Tensor, items: Tensor) -> Result<Self> {
        if users.cols() != items.cols() {
            return Err(Error::Shape {
                op: "node_vectors",
                lhs: users.shape().to_vec(),
                rhs: items.shape().to_vec(),
            });
        }
        Ok(Self { users, items })
    }

    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Self {
            users: Tensor::zeros(vec![num_users, dim]),
            items: Tensor::zeros(vec![num_items, dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }

    pub fn get(&self, node: NodeRef) -> Option<&[f64]> {
        let t = match node.side {
            Side::User => &self.users,
            Side::Item => &self.items,
        };
        let r = node.id as usize;
        (t.shape().len() == 2 && r < t.rows()).then(|| t.row(r))
    }

    pub fn get_mut(&mut self, node: NodeRef) -> Option<&mut [f64]> {
        let t = match node.side {
            Side::User => &mut self.users,
            Side::Item => &mut self.items,
        };
        let r = node.id as usize;
        (t.shape().len() == 2 && r < t.rows()).then(move || t.row_mut(r))
    }

    pub fn require(&self, node: NodeRef) -> Result<&[f64]> {
        self.get(node).ok_or_else(|| Error::MissingEmbedding(node.to_string()))
    }
}

pub fn sample_random<S: NeighborSource + ?Sized>(src: &S, target: NodeRef, k: usize, l_max: usize, seed: u64) -> Result<SampledSubgraph> {
    crate::data::subgraph_random(src, target, k, l_max, seed)
}

/// Per parent, draws `k` candidates without replacement with probability
/// proportional to candidate degree.
pub fn sample_importance<S: NeighborSource + ?Sized>(src: &S, target: NodeRef, k: usize, l_max: usize, seed: u64) -> Result<SampledSubgraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    crate::data::subgraph_expand(src, target, k, l_max, |_, cands| {
        let n = cands.len();
        if n <= k {
            return (0..n).collect();
        }
        let weight = |i: usize| src.degree(cands[i]).max(1) as f64;
        match index::sample_weighted(&mut rng, n, weight, k) {
            Ok(iv) => iv.into_vec(),
            Err(_) => index::sample(&mut rng, n, k).into_vec(),
        }
    })
}

fn dot_cont(acc: f64, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(acc, |s, (x, y)| s + x * y)
}

/// `meta ∥ cur` of one node, kept as its two halves.
struct Enhanced<'a> {
    meta: &'a [f64],
    cur: &'a [f64],
    sq: f64,
}

impl<'a> Enhanced<'a> {
    fn of(meta: &'a NodeVectors, cur: &'a NodeVectors, node: NodeRef) -> Result<Self> {
        let (m, c) = (meta.require(node)?, cur.require(node)?);
        Ok(Self { meta: m, cur: c, sq: dot_cont(dot(m, m), c, c) })
    }

    /// Bit-identical to [`cosine`] of the two concatenations: the sums run
    /// over the halves in the same order.
    fn cosine(&self, other: &Enhanced<'_>) -> f64 {
        let num = dot_cont(dot(self.meta, other.meta), self.cur, other.cur);
        num / (self.sq * other.sq).sqrt().max(COSINE_EPS)
    }
}

/// Higher score first, then lower node id.
pub(crate) fn rank_order(a: &(f64, NodeRef), b: &(f64, NodeRef)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id))
}

/// Candidates for layer `l` of a partially built tree: the unvisited-parent
/// neighbors of every layer `l - 1` node, each node once (first parent wins).
fn layer_candidates<S: NeighborSource + ?Sized>(src: &S, sub: &Subgraph, l: usize) -> Vec<SubNode> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for p in 0..sub.layers[l - 1].len() {
        for c in crate::data::subgraph_candidates(src, sub, l - 1, p) {
            if seen.insert(c) {
                out.push(SubNode { node: c, parent: p });
            }
        }
    }
    out
}

/// Scores every candidate of every layer against the target and keeps the
/// top `k^l`, working outward so each layer's parents are already fixed.
/// Fully deterministic; ties go to the lower node id.
pub fn sample_dynamic<S: NeighborSource + ?Sized>(
    src: &S,
    target: NodeRef,
    k: usize,
    l_max: usize,
    meta: &NodeVectors,
    cur: &NodeVectors,
) -> Result<SampledSubgraph> {
    crate::data::check_sampling_args(src, target, k, l_max)?;
    let anchor = Enhanced::of(meta, cur, target)?;
    let mut sub = Subgraph::root(target, k);
    sub.scores.push(vec![1.0]);
    for l in 1..=l_max {
        let cands = layer_candidates(src, &sub, l);
        let mut scored = Vec::with_capacity(cands.len());
        for (i, c) in cands.iter().enumerate() {
            let s = anchor.cosine(&Enhanced::of(meta, cur, c.node)?);
            scored.push((s, c.node, i));
        }
        let budget = k.saturating_pow(l as u32);
        let cmp = |a: &(f64, NodeRef, usize), b: &(f64, NodeRef, usize)| rank_order(&(a.0, a.1), &(b.0, b.1));
        if scored.len() > budget {
            scored.select_nth_unstable_by(budget, cmp);
            scored.truncate(budget);
        }
        scored.sort_by(cmp);
        sub.layers.push(scored.iter().map(|&(_, _, i)| cands[i]).collect());
        sub.scores.push(scored.iter().map(|&(s, _, _)| s).collect());
    }
    Ok(sub)
}

/// Dispatches on `kind`. `meta`/`cur` are required for the dynamic sampler.
pub fn sample<S: NeighborSource + ?Sized>(
    kind: SamplerKind,
    src: &S,
    target: NodeRef,
    k: usize,
    l_max: usize,
    seed: u64,
    embeddings: Option<(&NodeVectors, &NodeVectors)>,
) -> Result<SampledSubgraph> {
    match kind {
        SamplerKind::Random => sample_random(src, target, k, l_max, seed),
        SamplerKind::Importance => sample_importance(src, target, k, l_max, seed),
        SamplerKind::Dynamic => {
            let (meta, cur) = embeddings
                .ok_or_else(|| Error::invalid("dynamic sampling needs meta and current embeddings"))?;
            sample_dynamic(src, target, k, l_max, meta, cur)
        }
    }
}
