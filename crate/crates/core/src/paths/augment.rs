use std::collections::HashSet;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::walk::Path;
use crate::data::{NeighborSource, NodeRef, SubNode, Subgraph};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugmentOp {
    Delete,
    Substitute,
    /// Deletion followed by substitution.
    Both,
}

impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delete" => Ok(AugmentOp::Delete),
            "substitute" => Ok(AugmentOp::Substitute),
            "both" => Ok(AugmentOp::Both),
            other => Err(Error::Config(format!("unknown augmentation `{other}`"))),
        }
    }
}

impl AugmentOp {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentOp::Delete => "delete",
            AugmentOp::Substitute => "substitute",
            AugmentOp::Both => "both",
        }
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("augmentation ratio {ratio} not in [0, 1]")));
    }
    Ok(())
}

fn pick_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Per layer, picks `floor(ratio * |layer|)` positions uniformly.
fn pick_per_layer<R: Rng>(sub: &Subgraph, ratio: f64, rng: &mut R) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for l in 1..sub.layers.len() {
        let n = sub.layers[l].len();
        let c = pick_count(ratio, n).min(n);
        let mut picked = index::sample(rng, n, c).into_vec();
        picked.sort_unstable();
        out.push(picked);
    }
    out
}

/// Removes the picked nodes together with all of their descendants.
fn delete_subtrees(sub: &Subgraph, picked: &[Vec<usize>]) -> Subgraph {
    let mut out = Subgraph::root(sub.target, sub.k);
    // remap[l][old] = new index in layer l, None if removed
    let mut remap: Vec<Vec<Option<usize>>> = vec![vec![Some(0)]];
    for l in 1..sub.layers.len() {
        let chosen: HashSet<usize> = picked.get(l).into_iter().flatten().copied().collect();
        let mut layer = Vec::new();
        let mut map = vec![None; sub.layers[l].len()];
        for (i, n) in sub.layers[l].iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if let Some(p) = remap[l - 1][n.parent] {
                map[i] = Some(layer.len());
                layer.push(SubNode { node: n.node, parent: p });
            }
        }
        out.layers.push(layer);
        remap.push(map);
    }
    out
}

/// Replaces the identities of every descendant of `(l, idx)` with fresh
/// random neighbors, keeping the tree shape so layer sizes are unchanged.
fn resample_descendants<S: NeighborSource + ?Sized, R: Rng>(graph: &S, sub: &mut Subgraph, l: usize, idx: usize, rng: &mut R) {
    let mut frontier = vec![idx];
    for depth in l..sub.depth() {
        let mut next = Vec::new();
        for &p in &frontier {
            let children: Vec<usize> = sub.children(depth, p).collect();
            if children.is_empty() {
                continue;
            }
            let node = sub.layers[depth][p].node;
            let grand = sub.parent_node(depth, p);
            let side = node.side.other();
            let mut cands: Vec<NodeRef> = graph
                .neighbors(node)
                .iter()
                .map(|&id| NodeRef { side, id })
                .filter(|c| Some(*c) != grand)
                .collect();
            if cands.is_empty() {
                cands = graph.neighbors(node).iter().map(|&id| NodeRef { side, id }).collect();
            }
            let fresh: Vec<NodeRef> = if cands.len() >= children.len() {
                index::sample(rng, cands.len(), children.len())
                    .into_iter()
                    .map(|i| cands[i])
                    .collect()
            } else {
                (0..children.len()).map(|_| cands[rng.gen_range(0..cands.len())]).collect()
            };
            for (&c, n) in children.iter().zip(fresh) {
                sub.layers[depth + 1][c].node = n;
            }
            next.extend(children);
        }
        frontier = next;
    }
}

fn substitute_nodes<S: NeighborSource + ?Sized, R: Rng>(graph: &S, sub: &Subgraph, picked: &[Vec<usize>], rng: &mut R) -> Subgraph {
    let mut out = sub.clone();
    out.scores.clear();
    for l in 1..out.layers.len() {
        for &idx in picked.get(l).into_iter().flatten() {
            let parent = out.parent_node(l, idx).expect("layer >= 1 has a parent");
            let nb = graph.neighbors(parent);
            if nb.is_empty() {
                continue;
            }
            let replacement = NodeRef {
                side: parent.side.other(),
                id: nb[rng.gen_range(0..nb.len())],
            };
            if replacement != out.layers[l][idx].node {
                out.layers[l][idx].node = replacement;
                resample_descendants(graph, &mut out, l, idx, rng);
            }
        }
    }
    out
}

/// Deletes (with cascading subtrees) or substitutes `floor(ratio * |layer|)`
/// nodes of every layer below the target. Substitutes are drawn from the
/// parent's full neighbor set in `graph` (a masked view during pre-training).
pub fn augment_subgraph<S: NeighborSource + ?Sized>(graph: &S, sub: &Subgraph, op: AugmentOp, ratio: f64, seed: u64) -> Result<Subgraph> {
    check_ratio(ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match op {
        AugmentOp::Delete => {
            let picked = pick_per_layer(sub, ratio, &mut rng);
            delete_subtrees(sub, &picked)
        }
        AugmentOp::Substitute => {
            let picked = pick_per_layer(sub, ratio, &mut rng);
            substitute_nodes(graph, sub, &picked, &mut rng)
        }
        AugmentOp::Both => {
            let picked = pick_per_layer(sub, ratio, &mut rng);
            let deleted = delete_subtrees(sub, &picked);
            let picked = pick_per_layer(&deleted, ratio, &mut rng);
            substitute_nodes(graph, &deleted, &picked, &mut rng)
        }
    })
}

/// Deletes or substitutes `floor(ratio * len)` nodes of a path, never the
/// anchor. A substitute is a random neighbor of its predecessor (of its
/// successor for position 0).
pub fn augment_path<S: NeighborSource + ?Sized>(graph: &S, path: &Path, op: AugmentOp, ratio: f64, seed: u64) -> Result<Path> {
    check_ratio(ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match op {
        AugmentOp::Delete => delete_from_path(path, ratio, &mut rng),
        AugmentOp::Substitute => Ok(substitute_in_path(graph, path, ratio, &mut rng)),
        AugmentOp::Both => {
            let p = delete_from_path(path, ratio, &mut rng)?;
            Ok(substitute_in_path(graph, &p, ratio, &mut rng))
        }
    }
}

fn eligible_positions(path: &Path) -> Vec<usize> {
    (0..path.len()).filter(|&i| i != path.anchor).collect()
}

fn delete_from_path<R: Rng>(path: &Path, ratio: f64, rng: &mut R) -> Result<Path> {
    let c = pick_count(ratio, path.len());
    if c >= path.len() {
        return Err(Error::invalid("deletion would remove every node of the path"));
    }
    let eligible = eligible_positions(path);
    let drop: HashSet<usize> = index::sample(rng, eligible.len(), c).into_iter().map(|i| eligible[i]).collect();
    let mut nodes = Vec::with_capacity(path.len() - c);
    let mut anchor = 0;
    for (i, &n) in path.nodes.iter().enumerate() {
        if i == path.anchor {
            anchor = nodes.len();
        }
        if !drop.contains(&i) {
            nodes.push(n);
        }
    }
    Ok(Path {
        nodes,
        origin: path.origin,
        anchor,
        short: path.short,
    })
}

fn substitute_in_path<S: NeighborSource + ?Sized, R: Rng>(graph: &S, path: &Path, ratio: f64, rng: &mut R) -> Path {
    let mut out = path.clone();
    if path.len() < 2 {
        return out;
    }
    let eligible = eligible_positions(path);
    let c = pick_count(ratio, path.len()).min(eligible.len());
    let mut picked: Vec<usize> = index::sample(rng, eligible.len(), c).into_iter().map(|i| eligible[i]).collect();
    picked.sort_unstable();
    for pos in picked {
        let pred = if pos == 0 { out.nodes[1] } else { out.nodes[pos - 1] };
        let nb = graph.neighbors(pred);
        if nb.is_empty() {
            continue;
        }
        out.nodes[pos] = NodeRef {
            side: pred.side.other(),
            id: nb[rng.gen_range(0..nb.len())],
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{mask_neighborhood, BipartiteGraph, Interaction};
    use proptest::prelude::*;

    fn graph(edges: &[(u32, u32)]) -> BipartiteGraph {
        let its: Vec<_> = edges
            .iter()
            .map(|&(user, item)| Interaction { user, item, timestamp: 0, seq: 0 })
            .collect();
        BipartiteGraph::build(0, 0, &its, false)
    }

    fn dense_graph() -> BipartiteGraph {
        let mut e = Vec::new();
        for u in 0..8 {
            for i in 0..8 {
                if (u * 3 + i * 5) % 4 != 0 {
                    e.push((u, i));
                }
            }
        }
        graph(&e)
    }

    fn tree(parent_of: &[&[usize]], g_target: NodeRef, nodes: &[&[NodeRef]]) -> Subgraph {
        let mut s = Subgraph::root(g_target, 3);
        for (l, layer) in nodes.iter().enumerate() {
            s.layers.push(
                layer
                    .iter()
                    .zip(parent_of[l])
                    .map(|(&node, &parent)| SubNode { node, parent })
                    .collect(),
            );
        }
        s
    }

    #[test]
    fn deleting_a_parent_drops_its_children() {
        let s = tree(
            &[&[0, 0], &[0, 0, 1]],
            NodeRef::user(0),
            &[
                &[NodeRef::item(0), NodeRef::item(1)],
                &[NodeRef::user(1), NodeRef::user(2), NodeRef::user(3)],
            ],
        );
        let out = delete_subtrees(&s, &[vec![], vec![0], vec![]]);
        assert_eq!(s.node_count() - out.node_count(), 3);
        assert_eq!(out.layer(1), &[SubNode { node: NodeRef::item(1), parent: 0 }]);
        assert_eq!(out.layer(2), &[SubNode { node: NodeRef::user(3), parent: 0 }]);
    }

    #[test]
    fn zero_ratio_is_identity() {
        let g = dense_graph();
        let s = mask_neighborhood(&g, NodeRef::user(0), 3, 2, 5).unwrap();
        for op in [AugmentOp::Delete, AugmentOp::Substitute, AugmentOp::Both] {
            assert_eq!(augment_subgraph(&g, &s, op, 0.0, 9).unwrap(), s);
        }
        let p = super::super::generate_paths(&g, NodeRef::user(0), 6, 1, 1).unwrap().remove(0);
        assert_eq!(augment_path(&g, &p, AugmentOp::Delete, 0.0, 3).unwrap(), p);
        assert_eq!(augment_path(&g, &p, AugmentOp::Substitute, 0.0, 3).unwrap(), p);
    }

    #[test]
    fn single_neighbor_parent_substitutes_itself() {
        // user 0's only neighbor is item 0, so a substitute can only be item 0
        let g = graph(&[(0, 0), (1, 0), (1, 1)]);
        let s = mask_neighborhood(&g, NodeRef::user(0), 3, 1, 0).unwrap();
        let out = augment_subgraph(&g, &s, AugmentOp::Substitute, 1.0, 4).unwrap();
        assert_eq!(out.layers, s.layers);
    }

    #[test]
    fn bad_ratio_rejected() {
        let g = dense_graph();
        let s = mask_neighborhood(&g, NodeRef::user(0), 2, 1, 0).unwrap();
        assert!(augment_subgraph(&g, &s, AugmentOp::Delete, 1.5, 0).is_err());
        assert!(augment_subgraph(&g, &s, AugmentOp::Delete, -0.1, 0).is_err());
    }

    #[test]
    fn path_delete_one_of_six() {
        let g = dense_graph();
        let p = super::super::generate_paths(&g, NodeRef::user(0), 6, 1, 1).unwrap().remove(0);
        let out = augment_path(&g, &p, AugmentOp::Delete, 1.0 / 6.0, 2).unwrap();
        assert_eq!(out.len(), 5);
        assert_eq!(out.nodes[out.anchor], p.origin);
    }

    #[test]
    fn path_delete_everything_errors() {
        let g = dense_graph();
        let p = super::super::generate_paths(&g, NodeRef::user(0), 4, 1, 1).unwrap().remove(0);
        assert!(augment_path(&g, &p, AugmentOp::Delete, 1.0, 2).is_err());
    }

    proptest! {
        #[test]
        fn path_substitutes_neighbor_predecessor(seed in any::<u64>(), ratio in 0.0f64..=1.0) {
            let g = dense_graph();
            let p = super::super::generate_paths(&g, NodeRef::user(1), 6, 1, seed).unwrap().remove(0);
            let out = augment_path(&g, &p, AugmentOp::Substitute, ratio, seed ^ 7).unwrap();
            prop_assert_eq!(out.len(), p.len());
            prop_assert_eq!(out.nodes[out.anchor], p.origin);
            for pos in 0..out.len() {
                if out.nodes[pos] != p.nodes[pos] {
                    let pred = if pos == 0 { out.nodes[1] } else { out.nodes[pos - 1] };
                    prop_assert!(g.neighbors(pred).contains(&out.nodes[pos].id));
                }
            }
        }

        #[test]
        fn deletion_removes_union_of_subtrees(seed in any::<u64>(), ratio in 0.0f64..=1.0) {
            let g = dense_graph();
            let s = mask_neighborhood(&g, NodeRef::user(2), 3, 3, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let picked = pick_per_layer(&s, ratio, &mut rng);
            let out = delete_subtrees(&s, &picked);
            // union of picked subtrees, counted by walking ancestors
            let mut removed = 0;
            for l in 1..s.layers.len() {
                for i in 0..s.layers[l].len() {
                    let (mut ll, mut ii) = (l, i);
                    let mut hit = false;
                    while ll >= 1 {
                        if picked[ll].contains(&ii) {
                            hit = true;
                            break;
                        }
                        ii = s.layers[ll][ii].parent;
                        ll -= 1;
                    }
                    removed += hit as usize;
                }
            }
            prop_assert_eq!(s.node_count() - out.node_count(), removed);
            prop_assert_eq!(out.layers[0][0].node, s.target);
        }

        #[test]
        fn substitution_preserves_layer_sizes(seed in any::<u64>(), ratio in 0.0f64..=1.0) {
            let g = dense_graph();
            let s = mask_neighborhood(&g, NodeRef::user(3), 3, 3, seed).unwrap();
            let out = augment_subgraph(&g, &s, AugmentOp::Substitute, ratio, seed).unwrap();
            prop_assert_eq!(out.layers.len(), s.layers.len());
            for l in 0..s.layers.len() {
                prop_assert_eq!(out.layers[l].len(), s.layers[l].len());
            }
            prop_assert_eq!(out.target, s.target);
            let again = augment_subgraph(&g, &s, AugmentOp::Substitute, ratio, seed).unwrap();
            prop_assert_eq!(again, out);
        }
    }
}
