//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails. Pass substrings as arguments to run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coldstart::autodiff::{cosine, grad_check, ParamStore, Tape, Tensor, Var};
use coldstart::config::Config;
use coldstart::data::{load_interactions, BipartiteGraph, ExtrinsicSplit, Interaction, NeighborSource, NodeRef, Side, Subgraph};
use coldstart::encoders::{Dims, EmbeddingTable, MetaAggregator, TransformerEncoder};
use coldstart::experiment;
use coldstart::finetune::{build_contexts, eval_extrinsic, rank, sampling_benchmark, FusedModel};
use coldstart::paths::{generate_paths, generate_positioned_paths, mask_path, AugmentOp, Path as WalkPath, TreeAdjacency};
use coldstart::pretrain::{
    augment_path_views, augment_subgraph_views, bpr_loss, loss_cg, loss_contrastive, loss_cp, loss_rg, loss_rp, mask_targets,
    PretrainData, PretrainSettings, TaskId, TaskModel,
};
use coldstart::sampling::{sample_dynamic, sample_random, NodeVectors, SamplerKind};

const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const NTXENT_TOL: f64 = 1e-9;
const META_PERM_TOL: f64 = 1e-10;
const ATTN_ROW_TOL: f64 = 1e-12;
const BENCH_RATIO: f64 = 10.0;
const SEEDS: [u64; 3] = [1, 2, 3];

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn toy_conf() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy.conf")
}

fn graph(edges: &[(u32, u32)]) -> BipartiteGraph {
    let its: Vec<Interaction> = edges
        .iter()
        .enumerate()
        .map(|(i, &(user, item))| Interaction { user, item, timestamp: i as i64, seq: i as u64 })
        .collect();
    BipartiteGraph::build(0, 0, &its, true)
}

fn random_vectors(nu: usize, ni: usize, d: usize, rng: &mut ChaCha8Rng) -> NodeVectors {
    let mut m = |n: usize| Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let users = m(nu);
    NodeVectors::new(users, m(ni)).unwrap()
}

// ---------------------------------------------------------------- 1

fn check_all<F>(name: &str, store: &mut ParamStore, f: F) -> Result<f64, String>
where
    F: Fn(&mut Tape, &ParamStore) -> coldstart::Result<Var>,
{
    let r = grad_check(store, f, GRAD_STEP, GRAD_TOL).map_err(|e| format!("{name}: {e}"))?;
    let bad: Vec<String> = r.params.iter().filter(|p| !p.passed).map(|p| format!("{} {:.2e}", p.name, p.max_rel_err)).collect();
    ensure(bad.is_empty(), format!("{name}: {}", bad.join(", ")))?;
    Ok(r.max_rel_err())
}

fn criterion_gradients() -> Outcome {
    // three users, four items
    let g = graph(&[(0, 0), (0, 1), (0, 2), (1, 1), (1, 3), (2, 0), (2, 2), (2, 3)]);
    let dims = Dims { d: 4, num_users: g.num_users(), num_items: g.num_items(), layers: 2, max_len: 3, heads: 2, blocks: 1 };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let meta = random_vectors(g.num_users(), g.num_items(), dims.d, &mut rng);
    let gt = random_vectors(g.num_users(), g.num_items(), dims.d, &mut rng);
    let targets = [NodeRef::user(0), NodeRef::user(2)];
    let subs: Vec<Subgraph> = targets.iter().map(|&t| sample_random(&g, t, 2, 2, 5).unwrap()).collect();
    let mut worst: f64 = 0.0;
    let mut report = Vec::new();

    for task in TaskId::ALL {
        let mut store = ParamStore::new();
        let model = TaskModel::register(&mut store, task, &dims, &mut ChaCha8Rng::seed_from_u64(3)).map_err(s)?;
        let err = match task {
            TaskId::Rg => check_all("Rg", &mut store, |t, st| loss_rg(t, st, &model, &subs[0], &meta, &gt))?,
            TaskId::Cg => {
                let views: Vec<(Subgraph, Subgraph)> = subs
                    .iter()
                    .enumerate()
                    .map(|(i, sub)| augment_subgraph_views(&g, sub, AugmentOp::Substitute, 0.2, 0.5, i as u64).unwrap())
                    .collect();
                check_all("Cg", &mut store, |t, st| loss_cg(t, st, &model, &views, &meta, 0.2))?
            }
            TaskId::Rp => {
                let tree = TreeAdjacency::new(&subs[0]);
                let (paths, _) = generate_positioned_paths(&tree, targets[0], 3, 9).map_err(s)?;
                ensure(!paths.is_empty(), "no positioned paths on the toy graph")?;
                check_all("Rp", &mut store, |t, st| loss_rp(t, st, &model, &paths, &gt))?
            }
            TaskId::Cp => {
                let views: Vec<(WalkPath, WalkPath)> = subs
                    .iter()
                    .zip(targets)
                    .enumerate()
                    .map(|(i, (sub, t))| {
                        let tree = TreeAdjacency::new(sub);
                        let p = generate_paths(&tree, t, 3, 1, i as u64).unwrap().remove(0);
                        augment_path_views(&g, &p, AugmentOp::Substitute, 0.2, 0.5, 100 + i as u64).unwrap()
                    })
                    .collect();
                check_all("Cp", &mut store, |t, st| loss_cp(t, st, &model, &views, 0.2))?
            }
        };
        worst = worst.max(err);
        report.push(format!("{task} {err:.1e}"));
    }

    // the contrastive loss on free vectors
    let mut store = ParamStore::new();
    let z = store.add_uniform("z", vec![6, 4], 1.0, &mut rng).map_err(s)?;
    let err = check_all("contrastive", &mut store, |t, st| {
        let v = t.param(st, z)?;
        loss_contrastive(t, v, 0.2)
    })?;
    worst = worst.max(err);
    report.push(format!("NT-Xent {err:.1e}"));

    // BPR on one user and two items
    let mut store = ParamStore::new();
    let e = store.add_uniform("e", vec![3, 4], 1.0, &mut rng).map_err(s)?;
    let err = check_all("bpr", &mut store, |t, st| {
        let u = t.embed(st, e, 0)?;
        let i = t.embed(st, e, 1)?;
        let j = t.embed(st, e, 2)?;
        let pos = t.dot(u, i)?;
        let neg = t.dot(u, j)?;
        bpr_loss(t, pos, neg)
    })?;
    worst = worst.max(err);
    report.push(format!("BPR {err:.1e}"));

    // all four encoders fused into the BPR objective
    let model = FusedModel::new(&TaskId::ALL, &dims, 17).map_err(s)?;
    let settings = PretrainSettings {
        dims,
        k: 2,
        sampler: SamplerKind::Dynamic,
        aug: AugmentOp::Substitute,
        a: 0.2,
        b: 0.2,
        tau: 0.2,
        lr: 0.003,
        epochs: 1,
        meta_epochs: 0,
        batch_rec: 4,
        batch_con: 4,
        seed: 1,
    };
    let nodes: Vec<NodeRef> = (0..3).map(NodeRef::user).chain((0..4).map(NodeRef::item)).collect();
    let ctx = build_contexts(&model, &g, &nodes, &settings, 0).map_err(s)?;
    let mut store = model.store.clone();
    let err = check_all("fusion", &mut store, |t, st| {
        let u = model.embed(t, st, &ctx, NodeRef::user(1))?.expect("user has neighbors");
        let i = model.embed(t, st, &ctx, NodeRef::item(1))?.expect("item has neighbors");
        let j = model.embed(t, st, &ctx, NodeRef::item(2))?.expect("item has neighbors");
        let pos = t.dot(u, i)?;
        let neg = t.dot(u, j)?;
        bpr_loss(t, pos, neg)
    })?;
    worst = worst.max(err);
    report.push(format!("fusion {err:.1e}"));
    Ok(format!("max rel err {worst:.2e} < {GRAD_TOL:.0e} ({})", report.join(", ")))
}

// ---------------------------------------------------------------- 2

fn oracle_metrics(scores: &[f64], train: &BTreeSet<u32>, test: &BTreeSet<u32>, k: usize) -> (f64, f64) {
    let mut cands: Vec<(f64, u32)> = scores.iter().enumerate().map(|(i, &x)| (x, i as u32)).filter(|(_, i)| !train.contains(i)).collect();
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let top: Vec<u32> = cands.iter().take(k).map(|c| c.1).collect();
    let hits = top.iter().filter(|i| test.contains(i)).count();
    let mut dcg = 0.0;
    for (pos, i) in top.iter().enumerate() {
        if test.contains(i) {
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for pos in 0..k.min(test.len()) {
        idcg += 1.0 / ((pos + 2) as f64).log2();
    }
    (hits as f64 / test.len() as f64, dcg / idcg)
}

fn criterion_metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut users_seen = 0;
    for inst in 0..100 {
        let nu = rng.gen_range(1..=100);
        let ni = rng.gen_range(2..=200);
        let d = rng.gen_range(1..=4);
        let k = rng.gen_range(1..=30);
        // coarse values so that score ties occur
        let items: Vec<Vec<f64>> = (0..ni).map(|_| (0..d).map(|_| rng.gen_range(-2i32..=2) as f64).collect()).collect();
        let mut users = BTreeMap::new();
        let mut split = ExtrinsicSplit::default();
        for u in 0..nu as u32 {
            let mut pool: Vec<u32> = (0..ni as u32).collect();
            let n = rng.gen_range(2..=ni.min(12));
            let picked: Vec<u32> = (0..n).map(|_| pool.swap_remove(rng.gen_range(0..pool.len()))).collect();
            let cut = rng.gen_range(1..n);
            let mut train = picked[..cut].to_vec();
            let mut test = picked[cut..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            split.train.insert(u, train);
            split.test.insert(u, test);
            users.insert(u, (0..d).map(|_| rng.gen_range(-2i32..=2) as f64).collect::<Vec<f64>>());
        }
        let got = eval_extrinsic(&users, &items, &split, k).map_err(s)?;
        let (mut rs, mut ns) = (0.0, 0.0);
        for (u, emb) in &users {
            let scores: Vec<f64> = items.iter().map(|i| i.iter().zip(emb).map(|(a, b)| a * b).sum()).collect();
            let train: BTreeSet<u32> = split.train[u].iter().copied().collect();
            let test: BTreeSet<u32> = split.test[u].iter().copied().collect();
            let (r, n) = oracle_metrics(&scores, &train, &test, k);
            let mine = got.per_user.iter().find(|m| m.user == *u).ok_or("missing user")?;
            ensure(mine.recall == r && mine.ndcg == n, format!("instance {inst} user {u}: ({}, {}) vs oracle ({r}, {n})", mine.recall, mine.ndcg))?;
            rs += r;
            ns += n;
            users_seen += 1;
        }
        let (rm, nm) = (rs / nu as f64, ns / nu as f64);
        ensure(got.recall == rm && got.ndcg == nm, format!("instance {inst}: means ({}, {}) vs ({rm}, {nm})", got.recall, got.ndcg))?;
    }
    Ok(format!("100 instances ({users_seen} users), Recall and NDCG bit-equal to a full-sort oracle"))
}

// ---------------------------------------------------------------- 3

fn oracle_ntxent(z: &[Vec<f64>], tau: f64) -> f64 {
    let n2 = z.len();
    let n = n2 / 2;
    let mut total = 0.0;
    for m in 0..n2 {
        let pos = (m + n) % n2;
        let num = (cosine(&z[m], &z[pos]) / tau).exp();
        let mut den = 0.0;
        for k in 0..n2 {
            if k != m {
                den += (cosine(&z[m], &z[k]) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / n2 as f64
}

fn criterion_contrastive_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for b in 0..100 {
        let tau = [0.1, 0.2, 1.0][b % 3];
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=6);
        let z: Vec<Vec<f64>> = (0..2 * n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut t = Tape::new();
        let v = t.constant(Tensor::matrix(2 * n, d, z.concat()).unwrap()).map_err(s)?;
        let l = loss_contrastive(&mut t, v, tau).map_err(s)?;
        let diff = (t.scalar(l) - oracle_ntxent(&z, tau)).abs();
        worst = worst.max(diff);
        ensure(diff <= NTXENT_TOL, format!("batch {b} (2N={}, tau={tau}): diff {diff:.2e}", 2 * n))?;
    }
    Ok(format!("100 batches, max |diff| {worst:.2e} <= {NTXENT_TOL:.0e}"))
}

// ---------------------------------------------------------------- 4

fn concat(meta: &NodeVectors, cur: &NodeVectors, n: NodeRef) -> Vec<f64> {
    let mut v = meta.get(n).unwrap().to_vec();
    v.extend_from_slice(cur.get(n).unwrap());
    v
}

/// Layer by layer: every neighbor of every kept node except the node it was
/// reached from, each once (first parent in layer order wins), all scored
/// and fully sorted by (cosine desc, id asc), then cut to `k^l`.
fn oracle_dynamic(g: &BipartiteGraph, target: NodeRef, k: usize, l_max: usize, meta: &NodeVectors, cur: &NodeVectors) -> Vec<Vec<(NodeRef, NodeRef)>> {
    let anchor = concat(meta, cur, target);
    let mut prev: Vec<(NodeRef, Option<NodeRef>)> = vec![(target, None)];
    let mut out = Vec::new();
    for l in 1..=l_max {
        let mut seen = BTreeSet::new();
        let mut cands = Vec::new();
        for &(node, from) in &prev {
            for &id in g.neighbors(node) {
                let c = NodeRef { side: node.side.other(), id };
                if Some(c) == from || !seen.insert(c) {
                    continue;
                }
                cands.push((cosine(&anchor, &concat(meta, cur, c)), c, node));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
        cands.truncate(k.pow(l as u32));
        out.push(cands.iter().map(|c| (c.1, c.2)).collect());
        prev = cands.iter().map(|c| (c.1, Some(c.2))).collect();
    }
    out
}

fn criterion_dynamic_sampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ties = 0usize;
    let mut done = 0;
    while done < 100 {
        let nu = rng.gen_range(2..=50u32);
        let ni = rng.gen_range(2..=50u32);
        let m = rng.gen_range(1..=(nu * ni).min(300));
        let edges: Vec<(u32, u32)> = (0..m).map(|_| (rng.gen_range(0..nu), rng.gen_range(0..ni))).collect();
        let g = graph(&edges);
        let d = rng.gen_range(1..=3);
        // small integer coordinates make exact score ties common
        let mut q = |n: usize| Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-1i32..=1) as f64).collect()).unwrap();
        let meta = NodeVectors::new(q(g.num_users()), q(g.num_items())).unwrap();
        let cur = NodeVectors::new(q(g.num_users()), q(g.num_items())).unwrap();
        let side = if rng.gen_bool(0.5) { Side::User } else { Side::Item };
        let candidates: Vec<NodeRef> = (0..g.count(side) as u32).map(|id| NodeRef { side, id }).filter(|&n| g.degree(n) > 0).collect();
        if candidates.is_empty() {
            continue;
        }
        let target = candidates[rng.gen_range(0..candidates.len())];
        let k = rng.gen_range(1..=4);
        let l_max = rng.gen_range(1..=3);
        let got = sample_dynamic(&g, target, k, l_max, &meta, &cur).map_err(s)?;
        let want = oracle_dynamic(&g, target, k, l_max, &meta, &cur);
        for l in 1..=l_max {
            let layer = if l <= got.depth() { got.layer(l) } else { &[] };
            let mine: Vec<(NodeRef, NodeRef)> = layer.iter().map(|n| (n.node, got.layer(l - 1)[n.parent].node)).collect();
            ensure(mine == want[l - 1], format!("graph {done} layer {l}: {mine:?} vs {:?}", want[l - 1]))?;
            if let Some(sc) = got.scores.get(l) {
                ties += sc.windows(2).filter(|w| w[0] == w[1]).count();
            }
        }
        done += 1;
    }
    ensure(ties > 0, "no ties were exercised")?;
    Ok(format!("100 graphs equal to a sort-and-truncate oracle ({ties} tied neighbors ordered by id)"))
}

// ---------------------------------------------------------------- 5

fn criterion_invariances() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let dims = Dims { d: 8, num_users: 5, num_items: 6, layers: 2, max_len: 6, heads: 2, blocks: 2 };

    // meta aggregator under neighbor permutation
    let mut store = ParamStore::new();
    let agg = MetaAggregator::register(&mut store, "", &dims, &mut rng).map_err(s)?;
    let mut meta_drift: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(1..=8);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let base = agg.eval(&store, &rows.iter().map(Vec::as_slice).collect::<Vec<_>>()).map_err(s)?;
        let mut perm = rows.clone();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let p = agg.eval(&store, &perm.iter().map(Vec::as_slice).collect::<Vec<_>>()).map_err(s)?;
        meta_drift = meta_drift.max(base.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    ensure(meta_drift <= META_PERM_TOL, format!("meta permutation drift {meta_drift:.2e}"))?;

    // the masked id never reaches the read-out; attention rows are distributions
    let mut store = ParamStore::new();
    let table = EmbeddingTable::register(&mut store, "", &dims, &mut rng).map_err(s)?;
    let tr = TransformerEncoder::register(&mut store, "", &dims, &mut rng).map_err(s)?;
    let mut attn_err: f64 = 0.0;
    for trial in 0..20usize {
        let pos = trial % 4;
        let mut outs = Vec::new();
        for held in 0..dims.num_users as u32 {
            let nodes: Vec<NodeRef> = (0..4usize)
                .map(|i| {
                    if i == pos {
                        NodeRef::user(held)
                    } else if i % 2 == pos % 2 {
                        NodeRef::user(((i + trial) % 5) as u32)
                    } else {
                        NodeRef::item(((i + trial) % 6) as u32)
                    }
                })
                .collect();
            let path = WalkPath { nodes, origin: NodeRef::user(held), anchor: pos, short: false };
            let m = mask_path(&path, pos).map_err(s)?;
            let mut t = Tape::new();
            let out = tr.forward(&mut t, &store, &table, &m.tokens()).map_err(s)?;
            for a in &out.attention {
                let w = t.value(*a);
                for r in 0..w.rows() {
                    attn_err = attn_err.max((w.row(r).iter().sum::<f64>() - 1.0).abs());
                }
            }
            let ro = tr.read_out(&mut t, &store, &table, &m.tokens(), pos).map_err(s)?;
            outs.push(t.value(ro).data().to_vec());
        }
        ensure(outs.windows(2).all(|w| w[0] == w[1]), format!("read-out depends on the masked id (trial {trial})"))?;
    }
    ensure(attn_err <= ATTN_ROW_TOL, format!("attention row sum error {attn_err:.2e}"))?;

    for _ in 0..1000 {
        let d = rng.gen_range(1..=64);
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1e3..1e3)).collect();
        ensure(cosine(&v, &v) == 1.0, format!("cosine(v, v) = {}", cosine(&v, &v)))?;
    }

    type Transform = fn(f64) -> f64;
    let transforms: [Transform; 3] = [|x| 3.0 * x + 1.0, |x| (x / 4.0).exp(), |x| x * x * x];
    for _ in 0..200 {
        let n = rng.gen_range(1..=60);
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-20i32..=20) as f64 / 4.0).collect();
        let exclude: Vec<u32> = (0..n as u32).filter(|_| rng.gen_bool(0.2)).collect();
        let base = rank(&scores, &exclude);
        for f in transforms {
            let t: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            ensure(rank(&t, &exclude) == base, "ranking changed under a monotone transform")?;
        }
    }
    Ok(format!(
        "meta drift {meta_drift:.1e}, masked read-out exact, attention rows within {attn_err:.1e}, cos(v,v)=1 exact, ranking invariant"
    ))
}

// ---------------------------------------------------------------- 6

fn criterion_directional() -> Outcome {
    let mut sums = [0.0f64; 3];
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let cfg = Config::load(Some(&toy_conf()), &[("seed".into(), seed.to_string())]).map_err(s)?;
        let ds = load_interactions(&cfg.dataset, cfg.format).map_err(s)?;
        let prep = experiment::split(&cfg, ds).map_err(s)?;
        let (gt, _) = experiment::ground_truth(&cfg, &prep).map_err(s)?;
        let out = experiment::pretrain(&cfg, &prep, &gt, &TaskId::ALL, 0).map_err(s)?;
        ensure(out.failures.is_empty(), format!("pre-training diverged: {:?}", out.failures))?;
        let mut row = [0.0; 3];
        let variants: [(&[TaskId], bool); 3] = [(&TaskId::ALL, true), (&TaskId::ALL, false), (&[TaskId::Rg], true)];
        for (v, (tasks, pretrained)) in variants.into_iter().enumerate() {
            let ckpt = if pretrained { Some(&out.checkpoint) } else { None };
            let (m, _, _) = experiment::finetune_model(&cfg, &prep, tasks, ckpt).map_err(s)?;
            let ctx = experiment::eval_contexts(&cfg, &prep, &m).map_err(s)?;
            let (r, _) = experiment::extrinsic(&cfg, &prep, &m, &ctx).map_err(s)?;
            row[v] = r.recall;
            sums[v] += r.recall / SEEDS.len() as f64;
        }
        per_seed.push(format!("seed {seed}: {:.4}/{:.4}/{:.4}", row[0], row[1], row[2]));
    }
    let [full, random, rg] = sums;
    let summary = format!("mean Recall@20 full {full:.4}, random-init {random:.4}, Rg-only {rg:.4} [{}]", per_seed.join("; "));
    ensure(full > random && full > rg, summary.clone())?;
    Ok(summary)
}

// ---------------------------------------------------------------- 7, 8, 9

fn cli(out: &Path, args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_coldstart"))
        .arg("--config")
        .arg(toy_conf())
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .map_err(s)?;
    if !o.status.success() {
        return Err(format!("coldstart {args:?} failed: {}", String::from_utf8_lossy(&o.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn criterion_ablation() -> Outcome {
    let dir = tempfile::tempdir().map_err(s)?;
    for cmd in ["ingest", "split", "groundtruth", "ablation"] {
        cli(dir.path(), &[cmd])?;
    }
    let text = std::fs::read_to_string(dir.path().join("ablation.tsv")).map_err(s)?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().ok_or("empty table")?.split('\t').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    ensure(rows.len() == 8, format!("{} variants", rows.len()))?;
    let mut names = Vec::new();
    for r in &rows {
        ensure(r.len() == header.len(), format!("row `{}` has {} of {} columns", r[0], r.len(), header.len()))?;
        let mut numeric = 0;
        for (h, v) in header.iter().zip(r).skip(1) {
            if let Ok(x) = v.parse::<f64>() {
                ensure(x.is_finite(), format!("{}: {h} is not finite", r[0]))?;
                numeric += 1;
            } else {
                ensure(!h.contains('@') && !h.contains("cosine"), format!("{}: {h} = `{v}`", r[0]))?;
            }
        }
        ensure(numeric >= 2, format!("{}: no metrics", r[0]))?;
        names.push(r[0].to_string());
    }
    for t in TaskId::ALL {
        ensure(names.contains(&format!("only_{t}")) && names.contains(&format!("without_{t}")), format!("missing variants for {t}"))?;
    }
    Ok(format!("8 variants with finite metrics: {}", names.join(",")))
}

fn criterion_benchmark() -> Outcome {
    let cfg = Config::load(Some(&toy_conf()), &[]).map_err(s)?;
    let ds = load_interactions(&cfg.dataset, cfg.format).map_err(s)?;
    let prep = experiment::split(&cfg, ds).map_err(s)?;
    let (gt, _) = experiment::ground_truth(&cfg, &prep).map_err(s)?;
    let settings = experiment::pretrain_settings(&cfg, &prep);
    let targets = mask_targets(&prep.visible, &prep.train_t, cfg.k_intrinsic, 1).map_err(s)?;
    let data = PretrainData { graph: &prep.visible, gt: &gt, targets: &targets };
    let samplers = [SamplerKind::Random, SamplerKind::Importance, SamplerKind::Dynamic];
    let rows = sampling_benchmark(&data, &settings, &samplers, 10).map_err(s)?;
    ensure(rows.len() == samplers.len(), "one row per sampler")?;
    ensure(
        rows.iter().all(|r| r.epochs == 10 && r.sample_ms_mean > 0.0 && r.sample_ms_std.is_finite() && r.train_ms_std.is_finite()),
        "mean and stddev over 10 epochs",
    )?;
    let ratio = rows[2].sample_ms_mean / rows[0].sample_ms_mean;
    let summary = format!(
        "sampling ms/epoch random {:.3}±{:.3}, importance {:.3}±{:.3}, dynamic {:.3}±{:.3}; dynamic/random {ratio:.2} <= {BENCH_RATIO}",
        rows[0].sample_ms_mean, rows[0].sample_ms_std, rows[1].sample_ms_mean, rows[1].sample_ms_std, rows[2].sample_ms_mean, rows[2].sample_ms_std
    );
    ensure(ratio <= BENCH_RATIO, summary.clone())?;
    Ok(summary)
}

fn criterion_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(s)?;
    let b = tempfile::tempdir().map_err(s)?;
    cli(a.path(), &["run"])?;
    cli(b.path(), &["run"])?;
    let compared = [
        "split.tsv",
        "ground_truth.ckpt",
        "pretrain.ckpt",
        "finetune.ckpt",
        "pretrain_loss.csv",
        "finetune_loss.csv",
        "eval.txt",
        "metrics.tsv",
        "report.txt",
    ];
    for f in compared {
        let x = std::fs::read(a.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(x == y, format!("{f} differs between runs"))?;
    }
    let before = std::fs::read(a.path().join("report.txt")).map_err(s)?;
    cli(a.path(), &["report"])?;
    ensure(std::fs::read(a.path().join("report.txt")).map_err(s)? == before, "report re-emission differs")?;
    Ok(format!("{} artifacts byte-identical across two runs", compared.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", criterion_gradients),
        ("metric oracle", criterion_metric_oracle),
        ("contrastive oracle", criterion_contrastive_oracle),
        ("dynamic sampler", criterion_dynamic_sampler),
        ("invariances", criterion_invariances),
        ("directional reproduction", criterion_directional),
        ("ablation", criterion_ablation),
        ("sampling benchmark", criterion_benchmark),
        ("determinism", criterion_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|m| m.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {} PASS {name}: {msg} ({secs:.1}s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {msg} ({secs:.1}s)", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
