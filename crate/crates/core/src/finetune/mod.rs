//! Fusion of the task encoders, BPR fine-tuning on cold users, ranking
//! metrics and the sampling benchmark.

mod bench;
mod metrics;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use bench::{sampling_benchmark, BenchRow};
pub use metrics::{eval_extrinsic, eval_intrinsic, ndcg_at_k, rank, recall_at_k, relevance, RankingResult, UserMetrics};

use crate::autodiff::{Checkpoint, Optimizer, ParamId, ParamStore, Tape, Tensor, Var};
use crate::config::Config;
use crate::data::{BipartiteGraph, ExtrinsicSplit, NeighborSource, NodeRef};
use crate::encoders::Dims;
use crate::error::{Error, Result};
use crate::pretrain::{bpr_loss, meta_table, parallel_grads, sample_contexts, MetaInput, NodeContext, PretrainSettings, Target, TaskId, TaskModel};
use crate::sampling::NodeVectors;
use crate::seed;

pub const FUSION: &str = "fusion.w";

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Train only the fusion matrix.
    pub freeze: bool,
    pub resample: bool,
    pub seed: u64,
}

impl FinetuneSettings {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            epochs: cfg.finetune_epochs,
            lr: cfg.finetune_lr,
            batch: cfg.finetune_batch,
            freeze: cfg.freeze_encoders,
            resample: cfg.resample_each_epoch,
            seed: cfg.seed,
        }
    }
}

/// Every enabled task's parameters in one store plus the fusion matrix
/// `W` (`d × n·d`).
#[derive(Clone, Debug)]
pub struct FusedModel {
    pub dims: Dims,
    pub store: ParamStore,
    pub tasks: Vec<TaskModel>,
    pub fusion: ParamId,
}

impl FusedModel {
    /// Fresh task parameters, drawn exactly as pre-training draws them, and
    /// `W = [I/n … I/n]` so the initial output is the mean task embedding.
    pub fn new(tasks: &[TaskId], dims: &Dims, base_seed: u64) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::invalid("no tasks enabled"));
        }
        let mut store = ParamStore::new();
        let mut models = Vec::with_capacity(tasks.len());
        for &task in tasks {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(base_seed, &[seed::tag(task.as_str()), seed::tag("init")]));
            models.push(TaskModel::register(&mut store, task, dims, &mut rng)?);
        }
        let n = tasks.len();
        let d = dims.d;
        let mut w = Tensor::zeros(vec![d, n * d]);
        for b in 0..n {
            for r in 0..d {
                w.data_mut()[r * n * d + b * d + r] = 1.0 / n as f64;
            }
        }
        let fusion = store.add(FUSION, w)?;
        Ok(Self { dims: *dims, store, tasks: models, fusion })
    }

    /// Overwrites each task's parameters with its checkpoint section.
    pub fn load(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for m in &self.tasks {
            let prefix = TaskModel::prefix(m.task);
            let sec = ckpt.section(m.task.as_str())?;
            let ids: Vec<ParamId> = self.store.ids().filter(|&id| self.store.name(id).starts_with(&prefix)).collect();
            for id in ids {
                let name = self.store.name(id).to_string();
                let t = sec
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("section `{}` lacks `{name}`", m.task)))?;
                if t.shape() != self.store.value(id).shape() {
                    return Err(Error::Shape {
                        op: "load_checkpoint",
                        lhs: self.store.value(id).shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                *self.store.value_mut(id) = t.clone();
            }
        }
        Ok(())
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|m| m.task).collect()
    }

    /// `W · (h_1 ∥ … ∥ h_n)`.
    pub fn fuse(&self, tape: &mut Tape, store: &ParamStore, parts: &[Var]) -> Result<Var> {
        if parts.len() != self.tasks.len() {
            return Err(Error::invalid(format!("{} parts for {} tasks", parts.len(), self.tasks.len())));
        }
        let x = tape.concat(parts)?;
        let w = tape.param(store, self.fusion)?;
        tape.matvec(w, x)
    }

    /// The fused embedding of `node`, or `None` when it has no context
    /// (no neighbors).
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, ctx: &FusedContexts, node: NodeRef) -> Result<Option<Var>> {
        let mut parts = Vec::with_capacity(self.tasks.len());
        for (i, m) in self.tasks.iter().enumerate() {
            let Some(c) = ctx.nodes[i].get(&node) else { return Ok(None) };
            parts.push(m.embed(tape, store, c, &ctx.meta[i])?);
        }
        self.fuse(tape, store, &parts).map(Some)
    }

    /// Values of the fused embeddings, in the order of `nodes`.
    pub fn infer(&self, ctx: &FusedContexts, nodes: &[NodeRef]) -> Result<Vec<Option<Vec<f64>>>> {
        nodes
            .par_iter()
            .map(|&n| {
                let mut tape = Tape::new();
                Ok(self.embed(&mut tape, &self.store, ctx, n)?.map(|v| tape.value(v).data().to_vec()))
            })
            .collect()
    }

    pub fn to_checkpoint(&self, fingerprint: u64) -> Checkpoint {
        let mut c = Checkpoint::new(fingerprint);
        c.insert_store("fused", &self.store);
        c
    }

    /// Rebuilds a fine-tuned model from [`FusedModel::to_checkpoint`] output.
    pub fn from_checkpoint(ckpt: &Checkpoint, tasks: &[TaskId], dims: &Dims) -> Result<Self> {
        let mut m = Self::new(tasks, dims, 0)?;
        ckpt.load_into("fused", &mut m.store)?;
        Ok(m)
    }
}

/// Per-task meta tables and sampled contexts for the nodes being fused.
#[derive(Clone, Debug)]
pub struct FusedContexts {
    pub meta: Vec<NodeVectors>,
    pub nodes: Vec<HashMap<NodeRef, NodeContext>>,
}

/// Samples every non-isolated node of `nodes` in `graph` for every task.
/// `s.k` is the neighbor budget; `stream` separates resampling rounds.
pub fn build_contexts(model: &FusedModel, graph: &BipartiteGraph, nodes: &[NodeRef], s: &PretrainSettings, stream: u64) -> Result<FusedContexts> {
    let targets: Vec<Target> = nodes
        .iter()
        .filter(|&&n| graph.degree(n) > 0)
        .map(|&n| Target { node: n, kept: graph.neighbors(n).to_vec() })
        .collect();
    let masks = HashMap::new();
    let mut meta = Vec::with_capacity(model.tasks.len());
    let mut out = Vec::with_capacity(model.tasks.len());
    for m in &model.tasks {
        let mt = meta_table(
            &model.store,
            m,
            &MetaInput { graph, k: s.k, seed: s.task_seed(m.task, &[seed::tag("finetune-meta")]), masks: &masks },
        )?;
        let ctxs = sample_contexts(m.task, m, &model.store, graph, &targets, &mt, s, seed::derive(stream, &[seed::tag("finetune")]), false)?;
        out.push(targets.iter().map(|t| t.node).zip(ctxs).collect());
        meta.push(mt);
    }
    Ok(FusedContexts { meta, nodes: out })
}

/// Per-epoch `(user, positive, negative)` triplets: every training
/// interaction of every split user with one uniform negative outside the
/// user's training items.
pub fn bpr_triplets(split: &ExtrinsicSplit, num_items: usize, seed: u64) -> Vec<(u32, u32, u32)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(split.num_train());
    for (&u, items) in &split.train {
        if items.len() >= num_items {
            continue;
        }
        for &i in items {
            let j = loop {
                let j = rng.gen_range(0..num_items as u32);
                if items.binary_search(&j).is_err() {
                    break j;
                }
            };
            out.push((u, i, j));
        }
    }
    out.shuffle(&mut rng);
    out
}

/// Nodes a fine-tuned model needs: the split's users and every item.
pub fn finetune_nodes(split: &ExtrinsicSplit, num_items: usize) -> Vec<NodeRef> {
    split.users().map(NodeRef::user).chain((0..num_items as u32).map(NodeRef::item)).collect()
}

/// BPR fine-tuning of the fused model on the split's training
/// interactions. Returns the contexts used last and the mean loss of each
/// epoch.
pub fn finetune(model: &mut FusedModel, graph: &BipartiteGraph, split: &ExtrinsicSplit, s: &PretrainSettings, f: &FinetuneSettings) -> Result<(FusedContexts, Vec<f64>)> {
    let nodes = finetune_nodes(split, graph.num_items());
    let mut ctx = build_contexts(model, graph, &nodes, s, 0)?;
    let ids: Vec<ParamId> = model.store.ids().collect();
    for id in ids {
        model.store.set_trainable(id, !f.freeze || id == model.fusion);
    }
    model.store.reset_optimizer();
    let opt = Optimizer::adam(f.lr);
    let d = model.dims.d;
    let mut losses = Vec::with_capacity(f.epochs);
    for epoch in 0..f.epochs {
        if f.resample && epoch > 0 {
            ctx = build_contexts(model, graph, &nodes, s, epoch as u64)?;
        }
        let triplets = bpr_triplets(split, graph.num_items(), seed::derive(f.seed, &[seed::tag("bpr"), epoch as u64]));
        let mut total = 0.0;
        let mut count = 0;
        let idx: Vec<usize> = (0..triplets.len()).collect();
        for batch in idx.chunks(f.batch) {
            let m = &*model;
            let c = &ctx;
            let (sum, n, grads) = parallel_grads(&m.store, batch, |tape, k| {
                let (u, i, j) = triplets[k];
                let Some(eu) = m.embed(tape, &m.store, c, NodeRef::user(u))? else { return Ok(None) };
                let item = |tape: &mut Tape, id: u32| -> Result<Var> {
                    match m.embed(tape, &m.store, c, NodeRef::item(id))? {
                        Some(v) => Ok(v),
                        None => tape.constant_vec(vec![0.0; d]),
                    }
                };
                let ei = item(tape, i)?;
                let ej = item(tape, j)?;
                let pos = tape.dot(eu, ei)?;
                let neg = tape.dot(eu, ej)?;
                Ok(Some(bpr_loss(tape, pos, neg)?))
            })?;
            if n == 0 {
                continue;
            }
            total += sum;
            count += n;
            model.store.accumulate_grads(&grads, 1.0 / n as f64);
            opt.step(&mut model.store).map_err(|e| Error::Diverged(format!("fine-tuning: {e}")))?;
        }
        let loss = if count > 0 { total / count as f64 } else { f64::NAN };
        if count > 0 && !loss.is_finite() {
            return Err(Error::Diverged(format!("fine-tuning, epoch {epoch}")));
        }
        log::info!("finetune\t{epoch}\t{loss}");
        losses.push(loss);
    }
    for id in model.store.ids().collect::<Vec<_>>() {
        model.store.set_trainable(id, true);
    }
    Ok((ctx, losses))
}

/// Fused embeddings of the split's users and of every item (zero for items
/// without neighbors), plus the number of such items.
pub fn embed_for_ranking(model: &FusedModel, ctx: &FusedContexts, split: &ExtrinsicSplit, num_items: usize) -> Result<(BTreeMap<u32, Vec<f64>>, Vec<Vec<f64>>, usize)> {
    let users: Vec<u32> = split.users().collect();
    let uv = model.infer(ctx, &users.iter().map(|&u| NodeRef::user(u)).collect::<Vec<_>>())?;
    let mut user_map = BTreeMap::new();
    for (u, v) in users.into_iter().zip(uv) {
        user_map.insert(u, v.ok_or_else(|| Error::Isolated(format!("u{u}")))?);
    }
    let iv = model.infer(ctx, &(0..num_items as u32).map(NodeRef::item).collect::<Vec<_>>())?;
    let isolated = iv.iter().filter(|v| v.is_none()).count();
    let items = iv.into_iter().map(|v| v.unwrap_or_else(|| vec![0.0; model.dims.d])).collect();
    Ok((user_map, items, isolated))
}
