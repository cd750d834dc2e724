use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{NeighborSource, NodeRef, Side, Subgraph};
use crate::error::{Error, Result};

/// Attempts per walk before giving up and returning a short one.
pub const RETRY_CAP: usize = 8;

/// An alternating user/item node sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    pub nodes: Vec<NodeRef>,
    /// The node the walk was generated around.
    pub origin: NodeRef,
    /// Index of `origin` in `nodes`.
    pub anchor: usize,
    /// Set when the walk dead-ended before reaching the requested length.
    pub short: bool,
}

impl Path {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn alternates(&self) -> bool {
        self.nodes.windows(2).all(|w| w[0].side != w[1].side)
    }

    /// `side:id` tokens separated by spaces.
    pub fn to_dump_line(&self) -> String {
        let mut s = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{n}");
        }
        s
    }

    pub fn parse_dump_line(line: &str) -> Result<Vec<NodeRef>> {
        line.split_whitespace()
            .map(|tok| {
                let (side, id) = tok
                    .split_once(':')
                    .ok_or_else(|| Error::invalid(format!("bad path token `{tok}`")))?;
                let side = match side {
                    "u" => Side::User,
                    "i" => Side::Item,
                    _ => return Err(Error::invalid(format!("bad side in `{tok}`"))),
                };
                let id = id.parse().map_err(|_| Error::invalid(format!("bad id in `{tok}`")))?;
                Ok(NodeRef { side, id })
            })
            .collect()
    }
}

/// Undirected adjacency restricted to the parent-child edges of a subgraph.
#[derive(Clone, Debug, Default)]
pub struct TreeAdjacency {
    adj: HashMap<NodeRef, Vec<u32>>,
}

impl TreeAdjacency {
    pub fn new(sub: &Subgraph) -> Self {
        let mut adj: HashMap<NodeRef, Vec<u32>> = HashMap::new();
        for (a, b) in sub.edges() {
            adj.entry(a).or_default().push(b.id);
            adj.entry(b).or_default().push(a.id);
        }
        for v in adj.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        Self { adj }
    }
}

impl NeighborSource for TreeAdjacency {
    fn neighbors(&self, node: NodeRef) -> &[u32] {
        self.adj.get(&node).map_or(&[], Vec::as_slice)
    }
}

/// A walk of up to `steps` hops from `start`. Returns the nodes after `start`.
fn walk<S: NeighborSource + ?Sized, R: Rng>(src: &S, start: NodeRef, steps: usize, rng: &mut R) -> Vec<NodeRef> {
    let mut out = Vec::with_capacity(steps);
    let mut cur = start;
    for _ in 0..steps {
        let nb = src.neighbors(cur);
        if nb.is_empty() {
            break;
        }
        cur = NodeRef {
            side: cur.side.other(),
            id: nb[rng.gen_range(0..nb.len())],
        };
        out.push(cur);
    }
    out
}

fn walk_with_retries<S: NeighborSource + ?Sized, R: Rng>(src: &S, start: NodeRef, steps: usize, rng: &mut R) -> (Vec<NodeRef>, bool) {
    let mut best = Vec::new();
    for _ in 0..RETRY_CAP {
        let w = walk(src, start, steps, rng);
        if w.len() == steps {
            return (w, false);
        }
        if w.len() > best.len() {
            best = w;
        }
    }
    (best, true)
}

/// `count` uniform random walks of `t_len` nodes starting at `start`.
pub fn generate_paths<S: NeighborSource + ?Sized>(src: &S, start: NodeRef, t_len: usize, count: usize, seed: u64) -> Result<Vec<Path>> {
    if t_len < 2 {
        return Err(Error::invalid(format!("path length {t_len} < 2")));
    }
    if src.degree(start) == 0 {
        return Err(Error::Isolated(start.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let (tail, short) = walk_with_retries(src, start, t_len - 1, &mut rng);
            let mut nodes = vec![start];
            nodes.extend(tail);
            Path {
                nodes,
                origin: start,
                anchor: 0,
                short,
            }
        })
        .collect())
}

/// Up to `t_len` paths where path `t` holds `target` at index `t`: a walk of
/// `t` hops reversed, the target, then a walk of `t_len - 1 - t` hops.
/// Positions that cannot be filled are skipped and counted in the second value.
pub fn generate_positioned_paths<S: NeighborSource + ?Sized>(src: &S, target: NodeRef, t_len: usize, seed: u64) -> Result<(Vec<Path>, usize)> {
    if t_len < 2 {
        return Err(Error::invalid(format!("path length {t_len} < 2")));
    }
    if src.degree(target) == 0 {
        return Err(Error::Isolated(target.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(t_len);
    let mut missing = 0;
    for t in 0..t_len {
        let (back, short_b) = walk_with_retries(src, target, t, &mut rng);
        let (fwd, short_f) = walk_with_retries(src, target, t_len - 1 - t, &mut rng);
        if short_b || short_f {
            missing += 1;
            continue;
        }
        let mut nodes: Vec<NodeRef> = back.into_iter().rev().collect();
        nodes.push(target);
        nodes.extend(fwd);
        paths.push(Path {
            nodes,
            origin: target,
            anchor: t,
            short: false,
        });
    }
    Ok((paths, missing))
}
