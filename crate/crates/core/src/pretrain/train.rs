use std::collections::HashMap;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::losses::{loss_cg, loss_cp, loss_rg, loss_rp, reconstruction_loss};
use super::model::{build_context, meta_table, MetaInput, NodeContext, TaskModel};
use super::TaskId;
use crate::autodiff::{Checkpoint, Optimizer, ParamGrad, ParamStore, Tape, Var};
use crate::config::Config;
use crate::data::{BipartiteGraph, MaskedView, NeighborSource, NodeRef, Subgraph};
use crate::encoders::Dims;
use crate::error::{Error, Result};
use crate::paths::{augment_path, augment_subgraph, generate_paths, AugmentOp, Path, TreeAdjacency};
use crate::sampling::{sample, NodeVectors, SamplerKind};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainSettings {
    pub dims: Dims,
    /// Neighbor budget: `K` kept first-order neighbors and `K^l` per layer.
    pub k: usize,
    pub sampler: SamplerKind,
    pub aug: AugmentOp,
    pub a: f64,
    pub b: f64,
    pub tau: f64,
    pub lr: f64,
    pub epochs: usize,
    pub meta_epochs: usize,
    pub batch_rec: usize,
    pub batch_con: usize,
    pub seed: u64,
}

impl PretrainSettings {
    pub fn from_config(cfg: &Config, num_users: usize, num_items: usize) -> Self {
        Self {
            dims: Dims {
                d: cfg.d,
                num_users,
                num_items,
                layers: cfg.layers,
                max_len: cfg.t_len,
                heads: cfg.heads,
                blocks: cfg.blocks,
            },
            k: cfg.k_intrinsic,
            sampler: cfg.sampler,
            aug: cfg.aug,
            a: cfg.a,
            b: cfg.b,
            tau: cfg.tau,
            lr: cfg.lr,
            epochs: cfg.pretrain_epochs,
            meta_epochs: cfg.meta_epochs,
            batch_rec: cfg.batch_rec,
            batch_con: cfg.batch_con,
            seed: cfg.seed,
        }
    }

    pub(crate) fn task_seed(&self, task: TaskId, parts: &[u64]) -> u64 {
        let mut all = vec![seed::tag(task.as_str())];
        all.extend_from_slice(parts);
        seed::derive(self.seed, &all)
    }
}

/// A warm node whose first-order neighborhood is cut down to `kept`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Target {
    pub node: NodeRef,
    pub kept: Vec<u32>,
}

/// Keeps a seeded uniform sample of at most `k` first-order neighbors of
/// every node.
pub fn mask_targets(graph: &BipartiteGraph, nodes: &[NodeRef], k: usize, seed: u64) -> Result<Vec<Target>> {
    nodes
        .iter()
        .map(|&node| {
            let nb = graph.neighbors(node);
            if nb.is_empty() {
                return Err(Error::Isolated(node.to_string()));
            }
            let side_tag = (node.side == crate::data::Side::Item) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[side_tag, node.id as u64]));
            let mut kept: Vec<u32> = if nb.len() <= k {
                nb.to_vec()
            } else {
                index::sample(&mut rng, nb.len(), k).into_iter().map(|i| nb[i]).collect()
            };
            kept.sort_unstable();
            Ok(Target { node, kept })
        })
        .collect()
}

pub struct PretrainData<'a> {
    pub graph: &'a BipartiteGraph,
    pub gt: &'a NodeVectors,
    pub targets: &'a [Target],
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub task: TaskId,
    pub epoch: usize,
    pub loss: f64,
    pub wall_ms: f64,
    /// Samples skipped because augmentation or walking left nothing to encode.
    pub skipped: usize,
}

impl EpochLog {
    /// `task<TAB>epoch<TAB>loss<TAB>wall_ms`.
    pub fn line(&self) -> String {
        format!("{}\t{}\t{}\t{:.3}", self.task, self.epoch, self.loss, self.wall_ms)
    }
}

pub struct TaskRun {
    pub task: TaskId,
    pub store: ParamStore,
    pub model: TaskModel,
    pub logs: Vec<EpochLog>,
}

pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
    pub failures: Vec<(TaskId, String)>,
}

fn one_aug_subgraph<S: NeighborSource + ?Sized>(src: &S, sub: &Subgraph, aug: AugmentOp, a: f64, b: f64, seed: u64) -> Result<Subgraph> {
    match aug {
        AugmentOp::Delete => augment_subgraph(src, sub, AugmentOp::Delete, a, seed),
        AugmentOp::Substitute => augment_subgraph(src, sub, AugmentOp::Substitute, b, seed),
        AugmentOp::Both => {
            let del = augment_subgraph(src, sub, AugmentOp::Delete, a, seed)?;
            augment_subgraph(src, &del, AugmentOp::Substitute, b, seed::derive(seed, &[1]))
        }
    }
}

fn one_aug_path<S: NeighborSource + ?Sized>(src: &S, path: &Path, aug: AugmentOp, a: f64, b: f64, seed: u64) -> Result<Path> {
    match aug {
        AugmentOp::Delete => augment_path(src, path, AugmentOp::Delete, a, seed),
        AugmentOp::Substitute => augment_path(src, path, AugmentOp::Substitute, b, seed),
        AugmentOp::Both => {
            let del = augment_path(src, path, AugmentOp::Delete, a, seed)?;
            augment_path(src, &del, AugmentOp::Substitute, b, seed::derive(seed, &[1]))
        }
    }
}

/// Two independently seeded augmentations of one subgraph. `a` is the
/// deletion ratio and `b` the substitution ratio.
pub fn augment_subgraph_views<S: NeighborSource + ?Sized>(src: &S, sub: &Subgraph, aug: AugmentOp, a: f64, b: f64, seed: u64) -> Result<(Subgraph, Subgraph)> {
    Ok((
        one_aug_subgraph(src, sub, aug, a, b, seed::derive(seed, &[1]))?,
        one_aug_subgraph(src, sub, aug, a, b, seed::derive(seed, &[2]))?,
    ))
}

pub fn augment_path_views<S: NeighborSource + ?Sized>(src: &S, path: &Path, aug: AugmentOp, a: f64, b: f64, seed: u64) -> Result<(Path, Path)> {
    Ok((
        one_aug_path(src, path, aug, a, b, seed::derive(seed, &[1]))?,
        one_aug_path(src, path, aug, a, b, seed::derive(seed, &[2]))?,
    ))
}

/// Samples every target's subgraph inside its masked view. `training`
/// selects what path tasks receive: one walk from the target (contrastive
/// training) or positioned paths (everything else).
pub fn sample_contexts(
    task: TaskId,
    model: &TaskModel,
    store: &ParamStore,
    graph: &BipartiteGraph,
    targets: &[Target],
    meta: &NodeVectors,
    s: &PretrainSettings,
    stream: u64,
    training: bool,
) -> Result<Vec<NodeContext>> {
    let cur = (s.sampler == SamplerKind::Dynamic).then(|| model.table.snapshot(store));
    targets
        .par_iter()
        .map(|t| {
            let view = MaskedView::new(graph, t.node, t.kept.clone());
            let base = s.task_seed(task, &[stream, t.node.side as u64, t.node.id as u64]);
            let emb = cur.as_ref().map(|c| (meta, c));
            let sub = sample(s.sampler, &view, t.node, s.k, s.dims.layers, base, emb)?;
            if training && task == TaskId::Cp {
                let tree = TreeAdjacency::new(&sub);
                let paths = generate_paths(&tree, t.node, s.dims.max_len, 1, seed::derive(base, &[3]))?;
                return Ok(NodeContext { sub, paths });
            }
            build_context(task, sub, s.dims.max_len, seed::derive(base, &[4]))
        })
        .collect()
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::NonFiniteGrad(_) | Error::Diverged(_))
}

/// Runs `f` for every index in parallel, each on its own tape, and returns
/// the summed loss, the number of samples that produced a loss, and all
/// gradients in index order.
pub(crate) fn parallel_grads<F>(store: &ParamStore, idx: &[usize], f: F) -> Result<(f64, usize, Vec<ParamGrad>)>
where
    F: Fn(&mut Tape, usize) -> Result<Option<Var>> + Sync,
{
    let parts: Vec<Option<(f64, Vec<ParamGrad>)>> = idx
        .par_iter()
        .map(|&i| {
            let mut tape = Tape::new();
            let Some(loss) = f(&mut tape, i)? else { return Ok(None) };
            let grads = tape.param_grads(loss, store)?;
            Ok(Some((tape.scalar(loss), grads)))
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut count = 0;
    let mut grads = Vec::new();
    for (l, g) in parts.into_iter().flatten() {
        total += l;
        count += 1;
        grads.extend(g);
    }
    Ok((total, count, grads))
}

/// Fits the meta aggregator to the ground truth from the (frozen) initial
/// embeddings of each target's kept neighbors.
fn train_meta(task: TaskId, store: &mut ParamStore, model: &TaskModel, data: &PretrainData<'_>, s: &PretrainSettings) -> Result<()> {
    if s.meta_epochs == 0 || data.targets.is_empty() {
        return Ok(());
    }
    let trainable: Vec<_> = model.meta.params().to_vec();
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        store.set_trainable(id, trainable.contains(&id));
    }
    let opt = Optimizer::adam(s.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(s.task_seed(task, &[seed::tag("meta-train")]));
    let mut order: Vec<usize> = (0..data.targets.len()).collect();
    for _ in 0..s.meta_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(s.batch_rec) {
            let (_, count, grads) = parallel_grads(store, batch, |tape, i| {
                let t = &data.targets[i];
                let Some(gt) = data.gt.get(t.node) else {
                    return Err(Error::MissingGroundTruth(t.node.to_string()));
                };
                let side = t.node.side.other();
                let rows = t
                    .kept
                    .iter()
                    .map(|&id| model.table.require_row(NodeRef { side, id }))
                    .collect::<Result<Vec<_>>>()?;
                let x = tape.gather_rows(store, model.table.id, &rows)?;
                let m = model.meta.forward(tape, store, x)?;
                Ok(Some(reconstruction_loss(tape, m, gt)?))
            })?;
            if count > 0 {
                store.accumulate_grads(&grads, 1.0 / count as f64);
                opt.step(store)?;
            }
        }
    }
    for &id in &ids {
        store.set_trainable(id, true);
    }
    store.reset_optimizer();
    Ok(())
}

fn masks_of(targets: &[Target]) -> HashMap<NodeRef, Vec<u32>> {
    targets.iter().map(|t| (t.node, t.kept.clone())).collect()
}

struct TaskState {
    task: TaskId,
    store: ParamStore,
    model: TaskModel,
    meta: NodeVectors,
    opt: Optimizer,
    rng: ChaCha8Rng,
    order: Vec<usize>,
}

impl TaskState {
    fn init(task: TaskId, data: &PretrainData<'_>, s: &PretrainSettings) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(s.task_seed(task, &[seed::tag("init")]));
        let mut store = ParamStore::new();
        let model = TaskModel::register(&mut store, task, &s.dims, &mut rng)?;
        train_meta(task, &mut store, &model, data, s)?;
        let masks = masks_of(data.targets);
        let meta = meta_table(
            &store,
            &model,
            &MetaInput { graph: data.graph, k: s.k, seed: s.task_seed(task, &[seed::tag("meta")]), masks: &masks },
        )?;
        Ok(Self {
            task,
            store,
            model,
            meta,
            opt: Optimizer::adam(s.lr),
            rng,
            order: (0..data.targets.len()).collect(),
        })
    }

    fn contexts(&self, data: &PretrainData<'_>, s: &PretrainSettings, epoch: usize) -> Result<Vec<NodeContext>> {
        sample_contexts(self.task, &self.model, &self.store, data.graph, data.targets, &self.meta, s, epoch as u64, true)
    }

    /// One pass over the shuffled targets. Returns the mean loss and the
    /// number of skipped samples.
    fn epoch(&mut self, data: &PretrainData<'_>, s: &PretrainSettings, ctxs: &[NodeContext], epoch: usize) -> Result<(f64, usize)> {
        let task = self.task;
        let batch_size = if task.is_contrastive() { s.batch_con } else { s.batch_rec };
        self.order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut count = 0usize;
        let mut skipped = 0usize;
        for (bi, batch) in self.order.chunks(batch_size).enumerate() {
            let store = &self.store;
            let model = &self.model;
            let meta = &self.meta;
            let (loss_sum, n, grads) = match task {
                TaskId::Rg => parallel_grads(store, batch, |tape, i| {
                    Ok(Some(loss_rg(tape, store, model, &ctxs[i].sub, meta, data.gt)?))
                })?,
                TaskId::Rp => parallel_grads(store, batch, |tape, i| {
                    if ctxs[i].paths.is_empty() {
                        return Ok(None);
                    }
                    Ok(Some(loss_rp(tape, store, model, &ctxs[i].paths, data.gt)?))
                })?,
                TaskId::Cg | TaskId::Cp => {
                    let seed_b = s.task_seed(task, &[seed::tag("aug"), epoch as u64, bi as u64]);
                    let mut sub_views = Vec::new();
                    let mut path_views = Vec::new();
                    for (j, &i) in batch.iter().enumerate() {
                        let t = &data.targets[i];
                        let view = MaskedView::new(data.graph, t.node, t.kept.clone());
                        let sd = seed::derive(seed_b, &[j as u64]);
                        if task == TaskId::Cg {
                            let (x, y) = augment_subgraph_views(&view, &ctxs[i].sub, s.aug, s.a, s.b, sd)?;
                            if x.layer(1).is_empty() || y.layer(1).is_empty() {
                                skipped += 1;
                            } else {
                                sub_views.push((x, y));
                            }
                        } else if let Some(p) = ctxs[i].paths.first() {
                            path_views.push(augment_path_views(&view, p, s.aug, s.a, s.b, sd)?);
                        } else {
                            skipped += 1;
                        }
                    }
                    let n = sub_views.len().max(path_views.len());
                    if n == 0 {
                        continue;
                    }
                    let mut tape = Tape::new();
                    let loss = if task == TaskId::Cg {
                        loss_cg(&mut tape, store, model, &sub_views, meta, s.tau)?
                    } else {
                        loss_cp(&mut tape, store, model, &path_views, s.tau)?
                    };
                    let mut grads = tape.param_grads(loss, store)?;
                    // the batch loss is already a mean over its anchors
                    for g in &mut grads {
                        g.values.iter_mut().for_each(|v| *v *= n as f64);
                    }
                    (tape.scalar(loss) * n as f64, n, grads)
                }
            };
            if !task.is_contrastive() {
                skipped += batch.len() - n;
            }
            if n == 0 {
                continue;
            }
            total += loss_sum;
            count += n;
            self.store.accumulate_grads(&grads, 1.0 / n as f64);
            self.opt.step(&mut self.store)?;
        }
        let loss = if count > 0 { total / count as f64 } else { f64::NAN };
        if count > 0 && !loss.is_finite() {
            return Err(Error::Diverged(format!("{task}, epoch {epoch}")));
        }
        Ok((loss, skipped))
    }
}

/// Trains one pretext task from scratch on the masked targets.
pub fn train_task(task: TaskId, data: &PretrainData<'_>, s: &PretrainSettings) -> Result<TaskRun> {
    let mut st = TaskState::init(task, data, s)?;
    let mut logs = Vec::with_capacity(s.epochs);
    for epoch in 0..s.epochs {
        let start = Instant::now();
        let ctxs = st.contexts(data, s, epoch)?;
        let (loss, skipped) = st.epoch(data, s, &ctxs, epoch)?;
        let log_entry = EpochLog {
            task,
            epoch,
            loss,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            skipped,
        };
        log::info!("{}", log_entry.line());
        logs.push(log_entry);
    }
    Ok(TaskRun { task, store: st.store, model: st.model, logs })
}

/// Wall-clock milliseconds spent sampling and spent training in each of
/// `epochs` epochs of `task`.
pub fn timed_epochs(task: TaskId, data: &PretrainData<'_>, s: &PretrainSettings, epochs: usize) -> Result<Vec<(f64, f64)>> {
    let mut st = TaskState::init(task, data, s)?;
    let mut out = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let t0 = Instant::now();
        let ctxs = st.contexts(data, s, epoch)?;
        let t1 = Instant::now();
        st.epoch(data, s, &ctxs, epoch)?;
        let t2 = Instant::now();
        out.push(((t1 - t0).as_secs_f64() * 1e3, (t2 - t1).as_secs_f64() * 1e3));
    }
    Ok(out)
}

/// Trains every enabled task on its own thread. Tasks share nothing mutable,
/// so the result does not depend on scheduling. A task that diverges is left
/// out of the checkpoint, which is then marked partial.
pub fn pretrain_all(tasks: &[TaskId], data: &PretrainData<'_>, s: &PretrainSettings, fingerprint: u64) -> Result<PretrainOutcome> {
    let results: Vec<(TaskId, Result<TaskRun>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = tasks
            .iter()
            .map(|&task| (task, scope.spawn(move || train_task(task, data, s))))
            .collect();
        handles
            .into_iter()
            .map(|(task, h)| (task, h.join().unwrap_or_else(|_| Err(Error::Diverged(format!("{task} panicked"))))))
            .collect()
    });
    let mut checkpoint = Checkpoint::new(fingerprint);
    let mut logs = Vec::new();
    let mut failures = Vec::new();
    for (task, r) in results {
        match r {
            Ok(run) => {
                checkpoint.insert_store(task.as_str(), &run.store);
                logs.extend(run.logs);
            }
            Err(e) if is_divergence(&e) => {
                log::error!("{task} diverged: {e}");
                failures.push((task, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    checkpoint.partial = !failures.is_empty();
    logs.sort_by_key(|l| (l.task, l.epoch));
    Ok(PretrainOutcome { checkpoint, logs, failures })
}

/// Each target's embedding under `task`, from its masked neighborhood.
pub fn predict_targets(
    task: TaskId,
    store: &ParamStore,
    model: &TaskModel,
    graph: &BipartiteGraph,
    targets: &[Target],
    s: &PretrainSettings,
) -> Result<Vec<Vec<f64>>> {
    let masks = masks_of(targets);
    let meta = meta_table(
        store,
        model,
        &MetaInput { graph, k: s.k, seed: s.task_seed(task, &[seed::tag("meta")]), masks: &masks },
    )?;
    let ctxs = sample_contexts(task, model, store, graph, targets, &meta, s, seed::tag("predict"), false)?;
    ctxs.par_iter()
        .map(|c| {
            let mut tape = Tape::new();
            let v = model.embed(&mut tape, store, c, &meta)?;
            Ok(tape.value(v).data().to_vec())
        })
        .collect()
}
