use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::TaskId;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::data::{BipartiteGraph, NeighborSource, NodeRef, Side, Subgraph};
use crate::encoders::{Dims, EmbeddingTable, GnnEncoder, MetaAggregator, ProjectionHead, TransformerEncoder};
use crate::error::{Error, Result};
use crate::paths::{generate_positioned_paths, mask_path, plain_tokens, Path, TreeAdjacency};
use crate::sampling::NodeVectors;
use crate::seed;

/// Parameters of one pretext task: its own embedding table and meta
/// aggregator plus the task's encoder and, for contrastive tasks, a head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaskModel {
    pub task: TaskId,
    pub table: EmbeddingTable,
    pub meta: MetaAggregator,
    pub gnn: Option<GnnEncoder>,
    pub transformer: Option<TransformerEncoder>,
    pub head: Option<ProjectionHead>,
}

impl TaskModel {
    pub fn prefix(task: TaskId) -> String {
        format!("{task}.")
    }

    pub fn register<R: Rng>(store: &mut ParamStore, task: TaskId, dims: &Dims, rng: &mut R) -> Result<Self> {
        dims.validate()?;
        let p = Self::prefix(task);
        let table = EmbeddingTable::register(store, &p, dims, rng)?;
        let meta = MetaAggregator::register(store, &p, dims, rng)?;
        let (gnn, transformer) = if task.uses_gnn() {
            (Some(GnnEncoder::register(store, &p, dims, rng)?), None)
        } else {
            (None, Some(TransformerEncoder::register(store, &p, dims, rng)?))
        };
        let head = if task.is_contrastive() {
            Some(ProjectionHead::register(store, &p, dims, rng)?)
        } else {
            None
        };
        Ok(Self { task, table, meta, gnn, transformer, head })
    }

    pub fn bind(store: &mut ParamStore, task: TaskId, dims: &Dims) -> Result<Self> {
        let p = Self::prefix(task);
        let table = EmbeddingTable::bind(store, &p, dims)?;
        let meta = MetaAggregator::bind(store, &p, dims)?;
        let (gnn, transformer) = if task.uses_gnn() {
            (Some(GnnEncoder::bind(store, &p, dims)?), None)
        } else {
            (None, Some(TransformerEncoder::bind(store, &p, dims)?))
        };
        let head = if task.is_contrastive() {
            Some(ProjectionHead::bind(store, &p, dims)?)
        } else {
            None
        };
        Ok(Self { task, table, meta, gnn, transformer, head })
    }

    pub(crate) fn gnn(&self) -> Result<&GnnEncoder> {
        self.gnn.as_ref().ok_or_else(|| Error::invalid(format!("{} has no GNN encoder", self.task)))
    }

    pub(crate) fn transformer(&self) -> Result<&TransformerEncoder> {
        self.transformer
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{} has no Transformer encoder", self.task)))
    }

    pub(crate) fn head(&self) -> Result<&ProjectionHead> {
        self.head.as_ref().ok_or_else(|| Error::invalid(format!("{} has no projection head", self.task)))
    }

    /// The task's embedding of `ctx`'s target: the GNN output for subgraph
    /// tasks, the mean read-out over positioned paths for path tasks (the
    /// target masked for `Rp`, visible for `Cp`).
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, ctx: &NodeContext, meta: &NodeVectors) -> Result<Var> {
        match self.task {
            TaskId::Rg | TaskId::Cg => self.gnn()?.forward(tape, store, &self.table, &ctx.sub, meta),
            TaskId::Rp | TaskId::Cp => {
                if ctx.paths.is_empty() {
                    return Err(Error::Isolated(ctx.sub.target.to_string()));
                }
                let tr = self.transformer()?;
                let mut outs = Vec::with_capacity(ctx.paths.len());
                for p in &ctx.paths {
                    let tokens = if self.task == TaskId::Rp {
                        mask_path(p, p.anchor)?.tokens()
                    } else {
                        plain_tokens(p)
                    };
                    outs.push(tr.read_out(tape, store, &self.table, &tokens, p.anchor)?);
                }
                let m = tape.stack_rows(&outs)?;
                tape.mean_rows(m)
            }
        }
    }
}

/// What a task encoder needs about one node: its sampled subgraph and, for
/// path tasks, the positioned paths walked inside that subgraph.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeContext {
    pub sub: Subgraph,
    pub paths: Vec<Path>,
}

pub fn build_context(task: TaskId, sub: Subgraph, t_len: usize, seed: u64) -> Result<NodeContext> {
    let paths = if task.uses_gnn() {
        Vec::new()
    } else {
        let tree = TreeAdjacency::new(&sub);
        let (paths, missing) = generate_positioned_paths(&tree, sub.target, t_len, seed)?;
        if missing > 0 {
            log::debug!("{}: {missing} positioned paths could not be placed", sub.target);
        }
        paths
    };
    Ok(NodeContext { sub, paths })
}

/// Which neighbors feed each node's meta embedding: the kept neighbors for
/// masked targets, otherwise a seeded sample of at most `k`.
pub struct MetaInput<'a> {
    pub graph: &'a BipartiteGraph,
    pub k: usize,
    pub seed: u64,
    pub masks: &'a HashMap<NodeRef, Vec<u32>>,
}

impl MetaInput<'_> {
    pub fn neighbors(&self, node: NodeRef) -> Vec<NodeRef> {
        let side = node.side.other();
        if let Some(kept) = self.masks.get(&node) {
            return kept.iter().map(|&id| NodeRef { side, id }).collect();
        }
        let nb = self.graph.neighbors(node);
        if nb.len() <= self.k {
            return nb.iter().map(|&id| NodeRef { side, id }).collect();
        }
        let side_tag = matches!(node.side, Side::Item) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &[side_tag, node.id as u64]));
        let mut picked = index::sample(&mut rng, nb.len(), self.k).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| NodeRef { side, id: nb[i] }).collect()
    }
}

/// Frozen meta embeddings for every node, from the current table values.
/// Nodes without neighbors get a zero vector.
pub fn meta_table(store: &ParamStore, model: &TaskModel, input: &MetaInput<'_>) -> Result<NodeVectors> {
    let table = store.value(model.table.id);
    let d = table.cols();
    let nodes: Vec<NodeRef> = (0..model.table.num_users as u32)
        .map(NodeRef::user)
        .chain((0..model.table.num_items as u32).map(NodeRef::item))
        .collect();
    let rows: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|&n| {
            let nb = input.neighbors(n);
            if nb.is_empty() {
                return Ok(vec![0.0; d]);
            }
            let rows = nb
                .iter()
                .map(|&x| model.table.require_row(x).map(|r| table.row(r)))
                .collect::<Result<Vec<_>>>()?;
            model.meta.eval(store, &rows)
        })
        .collect::<Result<_>>()?;
    let nu = model.table.num_users;
    let users: Vec<f64> = rows[..nu].concat();
    let items: Vec<f64> = rows[nu..].concat();
    NodeVectors::new(
        Tensor::matrix(nu, d, users)?,
        Tensor::matrix(model.table.num_items, d, items)?,
    )
}
