//! In-memory pipeline stages: everything a command does except reading and
//! writing artifacts.

use rayon::prelude::*;

use crate::autodiff::{cosine, Checkpoint, ParamStore, Tensor};
use crate::config::Config;
use crate::data::{extrinsic_split, intrinsic_split, meta_split, BipartiteGraph, Dataset, ExtrinsicSplit, MetaSplit, NodeRef, Side};
use crate::encoders::Dims;
use crate::error::{Error, Result};
use crate::finetune::{embed_for_ranking, eval_extrinsic, finetune, FinetuneSettings, FusedContexts, FusedModel, RankingResult};
use crate::pretrain::{
    mask_targets, predict_targets, pretrain_all, train_ground_truth, GroundTruthSettings, PretrainData, PretrainOutcome,
    PretrainSettings, TaskId, TaskModel,
};
use crate::sampling::NodeVectors;
use crate::seed;

/// Stream labels for the seeds each stage derives from the base seed.
pub mod streams {
    pub const INTRINSIC_USERS: &str = "intrinsic-users";
    pub const INTRINSIC_ITEMS: &str = "intrinsic-items";
    pub const GROUND_TRUTH: &str = "ground-truth";
    pub const TRAIN_MASKS: &str = "train-masks";
    pub const TEST_MASKS: &str = "test-masks";
    pub const PRETRAIN: &str = "pretrain";
    pub const FINETUNE: &str = "finetune";
}

pub fn stream_seed(cfg: &Config, stream: &str) -> u64 {
    seed::derive(cfg.seed, &[seed::tag(stream)])
}

/// The dataset with all of its splits.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: Dataset,
    pub graph: BipartiteGraph,
    /// `graph` without the cold users' held-out interactions.
    pub visible: BipartiteGraph,
    pub users: MetaSplit,
    pub items: MetaSplit,
    pub train_t: Vec<NodeRef>,
    pub test_t: Vec<NodeRef>,
    pub extrinsic: ExtrinsicSplit,
}

impl Prepared {
    pub fn num_users(&self) -> usize {
        self.graph.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.graph.num_items()
    }

    pub fn dims(&self, cfg: &Config) -> Dims {
        Dims {
            d: cfg.d,
            num_users: self.num_users(),
            num_items: self.num_items(),
            layers: cfg.layers,
            max_len: cfg.t_len,
            heads: cfg.heads,
            blocks: cfg.blocks,
        }
    }
}

fn nodes(side: Side, ids: &[u32]) -> impl Iterator<Item = NodeRef> + '_ {
    ids.iter().map(move |&id| NodeRef { side, id })
}

/// Warm/cold split on both sides, the intrinsic train/test split of warm
/// nodes and the chronological split of cold users.
pub fn split(cfg: &Config, dataset: Dataset) -> Result<Prepared> {
    let graph = BipartiteGraph::from_dataset(&dataset);
    let users = meta_split(&graph, Side::User, cfg.n_u)?;
    let items = meta_split(&graph, Side::Item, cfg.n_i)?;
    let (tu, su) = intrinsic_split(&users, cfg.intrinsic_ratio, stream_seed(cfg, streams::INTRINSIC_USERS))?;
    let (ti, si) = intrinsic_split(&items, cfg.intrinsic_ratio, stream_seed(cfg, streams::INTRINSIC_ITEMS))?;
    let extrinsic = extrinsic_split(&graph, &users.d_n, cfg.c_frac)?;
    if extrinsic.test.is_empty() {
        return Err(Error::invalid("no cold users with held-out interactions"));
    }
    let visible = graph.filter_edges(|u, i| !extrinsic.is_test_edge(u, i));
    Ok(Prepared {
        train_t: nodes(Side::User, &tu).chain(nodes(Side::Item, &ti)).collect(),
        test_t: nodes(Side::User, &su).chain(nodes(Side::Item, &si)).collect(),
        dataset,
        graph,
        visible,
        users,
        items,
        extrinsic,
    })
}

pub fn ground_truth_settings(cfg: &Config) -> GroundTruthSettings {
    GroundTruthSettings {
        d: cfg.d,
        epochs: cfg.gt_epochs,
        lr: cfg.gt_lr,
        batch: cfg.gt_batch,
        seed: stream_seed(cfg, streams::GROUND_TRUTH),
    }
}

/// Ground truth from every visible interaction.
pub fn ground_truth(cfg: &Config, prep: &Prepared) -> Result<(NodeVectors, Vec<f64>)> {
    train_ground_truth(&prep.visible, &ground_truth_settings(cfg))
}

pub fn pretrain_settings(cfg: &Config, prep: &Prepared) -> PretrainSettings {
    let mut s = PretrainSettings::from_config(cfg, prep.num_users(), prep.num_items());
    s.seed = stream_seed(cfg, streams::PRETRAIN);
    s
}

/// Settings for encoding nodes at fine-tuning time: the extrinsic budget.
pub fn finetune_encoder_settings(cfg: &Config, prep: &Prepared) -> PretrainSettings {
    let mut s = pretrain_settings(cfg, prep);
    s.k = cfg.k_extrinsic;
    s.seed = stream_seed(cfg, streams::FINETUNE);
    s
}

pub fn gt_to_checkpoint(gt: &NodeVectors, fingerprint: u64) -> Checkpoint {
    let mut c = Checkpoint::new(fingerprint);
    let sec = [("users".to_string(), gt.users.clone()), ("items".to_string(), gt.items.clone())];
    c.sections.insert("gt".into(), sec.into_iter().collect());
    c
}

pub fn gt_from_checkpoint(c: &Checkpoint) -> Result<NodeVectors> {
    let sec = c.section("gt")?;
    let get = |k: &str| -> Result<Tensor> {
        sec.get(k).cloned().ok_or_else(|| Error::Checkpoint(format!("ground truth lacks `{k}`")))
    };
    NodeVectors::new(get("users")?, get("items")?)
}

/// Pre-trains `tasks` on the masked training targets.
pub fn pretrain(cfg: &Config, prep: &Prepared, gt: &NodeVectors, tasks: &[TaskId], fingerprint: u64) -> Result<PretrainOutcome> {
    let s = pretrain_settings(cfg, prep);
    let targets = mask_targets(&prep.visible, &prep.train_t, cfg.k_intrinsic, stream_seed(cfg, streams::TRAIN_MASKS))?;
    let data = PretrainData { graph: &prep.visible, gt, targets: &targets };
    pretrain_all(tasks, &data, &s, fingerprint)
}

/// Restricts a pre-training checkpoint to `tasks`.
pub fn select_tasks(ckpt: &Checkpoint, tasks: &[TaskId]) -> Result<Checkpoint> {
    let mut out = Checkpoint::new(ckpt.fingerprint);
    for t in tasks {
        out.sections.insert(t.as_str().to_string(), ckpt.section(t.as_str())?.clone());
    }
    Ok(out)
}

/// Tasks present in a pre-training checkpoint, in canonical order.
pub fn checkpoint_tasks(ckpt: &Checkpoint) -> Vec<TaskId> {
    TaskId::ALL.into_iter().filter(|t| ckpt.sections.contains_key(t.as_str())).collect()
}

/// Mean cosine to ground truth (and its standard error) of each task's
/// predictions for the held-out warm targets under the intrinsic mask.
pub fn intrinsic(cfg: &Config, prep: &Prepared, gt: &NodeVectors, ckpt: &Checkpoint) -> Result<Vec<(TaskId, f64, f64)>> {
    let s = pretrain_settings(cfg, prep);
    let dims = prep.dims(cfg);
    let targets = mask_targets(&prep.visible, &prep.test_t, cfg.k_intrinsic, stream_seed(cfg, streams::TEST_MASKS))?;
    checkpoint_tasks(ckpt)
        .into_iter()
        .map(|task| {
            let mut store = ParamStore::new();
            let model = TaskModel::register(&mut store, task, &dims, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
            ckpt.load_into(task.as_str(), &mut store)?;
            let pred = predict_targets(task, &store, &model, &prep.visible, &targets, &s)?;
            let cos: Vec<f64> = pred
                .par_iter()
                .zip(&targets)
                .map(|(p, t)| gt.require(t.node).map(|g| cosine(p, g)))
                .collect::<Result<_>>()?;
            let n = cos.len() as f64;
            let mean = cos.iter().sum::<f64>() / n;
            let se = if cos.len() > 1 {
                (cos.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            Ok((task, mean, se))
        })
        .collect()
}

/// Fuses `tasks` (from `ckpt` when given, randomly initialized otherwise)
/// and fine-tunes on the cold users' training interactions.
pub fn finetune_model(cfg: &Config, prep: &Prepared, tasks: &[TaskId], ckpt: Option<&Checkpoint>) -> Result<(FusedModel, FusedContexts, Vec<f64>)> {
    let dims = prep.dims(cfg);
    let mut model = FusedModel::new(tasks, &dims, stream_seed(cfg, streams::PRETRAIN))?;
    if let Some(c) = ckpt {
        model.load(c)?;
    }
    let s = finetune_encoder_settings(cfg, prep);
    let mut f = FinetuneSettings::from_config(cfg);
    f.seed = stream_seed(cfg, streams::FINETUNE);
    let (ctx, losses) = finetune(&mut model, &prep.visible, &prep.extrinsic, &s, &f)?;
    Ok((model, ctx, losses))
}

/// Contexts for ranking with a fine-tuned model, sampled from its final
/// parameters.
pub fn eval_contexts(cfg: &Config, prep: &Prepared, model: &FusedModel) -> Result<FusedContexts> {
    let s = finetune_encoder_settings(cfg, prep);
    let nodes = crate::finetune::finetune_nodes(&prep.extrinsic, prep.num_items());
    crate::finetune::build_contexts(model, &prep.visible, &nodes, &s, seed::tag("eval"))
}

/// Ranking quality on the cold users' held-out items, and the number of
/// items that had no neighbors to encode.
pub fn extrinsic(cfg: &Config, prep: &Prepared, model: &FusedModel, ctx: &FusedContexts) -> Result<(RankingResult, usize)> {
    let (users, items, isolated) = embed_for_ranking(model, ctx, &prep.extrinsic, prep.num_items())?;
    Ok((eval_extrinsic(&users, &items, &prep.extrinsic, cfg.k_eval)?, isolated))
}
