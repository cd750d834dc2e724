use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use coldstart::autodiff::{Checkpoint, ParamStore, Tape, Tensor};
use coldstart::config::{Config, Stage};
use coldstart::data::{extrinsic_split, intrinsic_split, meta_split, BipartiteGraph, Interaction, NeighborSource, NodeRef, Side};
use coldstart::experiment;
use coldstart::finetune::{ndcg_at_k, rank, recall_at_k};
use coldstart::paths::{augment_path, augment_subgraph, generate_paths, AugmentOp};
use coldstart::pretrain::{loss_contrastive, reconstruction_loss, TaskId};
use coldstart::sampling::{sample, NodeVectors, SamplerKind};
use coldstart::seed;

fn graph(edges: &[(u32, u32)]) -> BipartiteGraph {
    let its: Vec<Interaction> = edges
        .iter()
        .enumerate()
        .map(|(i, &(user, item))| Interaction { user, item, timestamp: (i as i64 * 7919) % 101, seq: i as u64 })
        .collect();
    BipartiteGraph::build(0, 0, &its, true)
}

fn edges() -> impl Strategy<Value = Vec<(u32, u32)>> {
    prop::collection::vec((0u32..12, 0u32..15), 1..80)
}

fn toy_conf() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy.conf")
}

fn first_connected(g: &BipartiteGraph, side: Side) -> NodeRef {
    (0..g.count(side) as u32).map(|id| NodeRef { side, id }).find(|&n| g.degree(n) > 0).expect("a connected node")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_bounded(scores in prop::collection::vec(-5i32..5, 2..60), k in 1usize..30, picks in prop::collection::vec(any::<prop::sample::Index>(), 1..10)) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let mut test: Vec<u32> = picks.iter().map(|p| p.index(scores.len()) as u32).collect();
        test.sort_unstable();
        test.dedup();
        let ranked = rank(&scores, &[]);
        let r = recall_at_k(&ranked, &test, k);
        let n = ndcg_at_k(&ranked, &test, k);
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        prop_assert_eq!(recall_at_k(&ranked, &test, scores.len()), 1.0);
    }

    #[test]
    fn ranking_never_leaks_excluded_items(scores in prop::collection::vec(-1.0f64..1.0, 1..80), mask in prop::collection::vec(any::<bool>(), 80)) {
        let exclude: Vec<u32> = (0..scores.len() as u32).filter(|&i| mask[i as usize]).collect();
        let ranked = rank(&scores, &exclude);
        prop_assert_eq!(ranked.len() + exclude.len(), scores.len());
        prop_assert!(ranked.iter().all(|i| exclude.binary_search(i).is_err()));
        prop_assert!(ranked.windows(2).all(|w| scores[w[0] as usize] >= scores[w[1] as usize]));
    }

    #[test]
    fn reconstruction_loss_is_in_range(pred in prop::collection::vec(-3.0f64..3.0, 4), target in prop::collection::vec(-3.0f64..3.0, 4)) {
        let mut t = Tape::new();
        let p = t.constant_vec(pred).unwrap();
        let l = reconstruction_loss(&mut t, p, &target).unwrap();
        let v = t.scalar(l);
        prop_assert!((-1e-12..=2.0 + 1e-12).contains(&v), "loss {}", v);
    }

    #[test]
    fn contrastive_loss_ignores_row_scale(n in 1usize..6, seed in any::<u64>(), scales in prop::collection::vec(0.01f64..100.0, 12)) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let z: Vec<f64> = (0..2 * n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = z.iter().enumerate().map(|(i, x)| x * scales[i / d]).collect();
        let eval = |data: Vec<f64>| {
            let mut t = Tape::new();
            let v = t.constant(Tensor::matrix(2 * n, d, data).unwrap()).unwrap();
            let l = loss_contrastive(&mut t, v, 0.2).unwrap();
            t.scalar(l)
        };
        let (a, b) = (eval(z), eval(scaled));
        prop_assert!(a.is_finite() && a >= -1e-12);
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn sampled_subgraphs_follow_edges(edges in edges(), k in 1usize..4, l_max in 1usize..4, seed in any::<u64>()) {
        let g = graph(&edges);
        let target = first_connected(&g, Side::User);
        let meta = NodeVectors::zeros(g.num_users(), g.num_items(), 2);
        let cur = NodeVectors::new(
            Tensor::matrix(g.num_users(), 2, (0..g.num_users() * 2).map(|i| (i % 5) as f64 - 2.0).collect()).unwrap(),
            Tensor::matrix(g.num_items(), 2, (0..g.num_items() * 2).map(|i| (i % 3) as f64 - 1.0).collect()).unwrap(),
        ).unwrap();
        for kind in [SamplerKind::Random, SamplerKind::Importance, SamplerKind::Dynamic] {
            let sub = sample(kind, &g, target, k, l_max, seed, Some((&meta, &cur))).unwrap();
            let again = sample(kind, &g, target, k, l_max, seed, Some((&meta, &cur))).unwrap();
            prop_assert_eq!(&sub, &again);
            prop_assert!(sub.depth() <= l_max);
            for l in 1..=sub.depth() {
                prop_assert!(sub.layer(l).len() <= k.pow(l as u32));
                for n in sub.layer(l) {
                    let parent = sub.layer(l - 1)[n.parent].node;
                    prop_assert!(g.neighbors(parent).contains(&n.node.id));
                    prop_assert_eq!(n.node.side, parent.side.other());
                }
            }
        }
    }

    #[test]
    fn augmentation_keeps_shape(edges in edges(), seed in any::<u64>(), ratio in 0.0f64..1.0) {
        let g = graph(&edges);
        let target = first_connected(&g, Side::User);
        let path = generate_paths(&g, target, 4, 1, seed).unwrap().remove(0);
        let sub_path = augment_path(&g, &path, AugmentOp::Substitute, ratio, seed).unwrap();
        prop_assert_eq!(sub_path.len(), path.len());
        prop_assert!(sub_path.alternates());
        let del_path = augment_path(&g, &path, AugmentOp::Delete, ratio, seed).unwrap();
        prop_assert!(del_path.len() <= path.len() && !del_path.is_empty());

        let sub = sample(SamplerKind::Random, &g, target, 2, 2, seed, None).unwrap();
        let del = augment_subgraph(&g, &sub, AugmentOp::Delete, ratio, seed).unwrap();
        prop_assert!(del.node_count() <= sub.node_count());
        let swapped = augment_subgraph(&g, &sub, AugmentOp::Substitute, ratio, seed).unwrap();
        prop_assert_eq!(swapped.node_count(), sub.node_count());
        prop_assert_eq!(swapped.target, target);
    }

    #[test]
    fn splits_partition_and_respect_time(edges in edges(), threshold in 0usize..6, seed in any::<u64>()) {
        let g = graph(&edges);
        let users = meta_split(&g, Side::User, threshold).unwrap();
        let mut all: Vec<u32> = users.d_t.iter().chain(&users.d_n).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..g.num_users() as u32).collect::<Vec<_>>());
        prop_assert!(users.d_t.iter().all(|&u| g.degree(NodeRef::user(u)) > threshold));
        if users.d_t.len() >= 2 {
            let (train, test) = intrinsic_split(&users, 0.7, seed).unwrap();
            prop_assert_eq!(train.len() + test.len(), users.d_t.len());
            prop_assert!(!train.is_empty() && !test.is_empty());
            prop_assert!(train.iter().all(|u| test.binary_search(u).is_err()));
        }
        let ex = extrinsic_split(&g, &users.d_n, 0.5).unwrap();
        for (u, train) in &ex.train {
            let times: std::collections::HashMap<u32, i64> = g.chronological_items(*u).into_iter().collect();
            let last_train = train.iter().map(|i| times[i]).max().unwrap();
            let first_test = ex.test[u].iter().map(|i| times[i]).min().unwrap();
            prop_assert!(last_train <= first_test);
            prop_assert!(train.iter().all(|i| ex.test[u].binary_search(i).is_err()));
        }
    }

    #[test]
    fn seeds_are_stable_and_distinct(base in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assert_eq!(seed::derive(base, &[a, b]), seed::derive(base, &[a, b]));
        if a != b {
            prop_assert_ne!(seed::derive(base, &[a]), seed::derive(base, &[b]));
        }
    }

    #[test]
    fn checkpoints_round_trip(shape in (1usize..5, 1usize..5), seed in any::<u64>(), fp in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.add_uniform("a.w", vec![shape.0, shape.1], 1.0, &mut rng).unwrap();
        store.add_uniform("b", vec![shape.1], 0.5, &mut rng).unwrap();
        let mut ckpt = Checkpoint::new(fp);
        ckpt.insert_store("s", &store);
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        let mut other = ParamStore::new();
        other.add("a.w", Tensor::zeros(vec![shape.0, shape.1])).unwrap();
        other.add("b", Tensor::zeros(vec![shape.1])).unwrap();
        back.load_into("s", &mut other).unwrap();
        for id in store.ids() {
            prop_assert_eq!(store.value(id), other.value(other.id(store.name(id)).unwrap()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn later_keys_leave_earlier_fingerprints_alone(lr in 1e-5f64..1e-1, epochs in 1usize..50) {
        let base = Config::load(Some(&toy_conf()), &[]).unwrap();
        let changed = Config::load(
            Some(&toy_conf()),
            &[("finetune_lr".into(), lr.to_string()), ("finetune_epochs".into(), epochs.to_string())],
        ).unwrap();
        for stage in [Stage::Ingest, Stage::Split, Stage::GroundTruth, Stage::Pretrain] {
            prop_assert_eq!(base.fingerprint(stage, b"x"), changed.fingerprint(stage, b"x"));
        }
        if base.value("finetune_lr") != changed.value("finetune_lr") || base.value("finetune_epochs") != changed.value("finetune_epochs") {
            prop_assert_ne!(base.fingerprint(Stage::Finetune, b"x"), changed.fingerprint(Stage::Finetune, b"x"));
        }
        prop_assert_ne!(base.fingerprint(Stage::Ingest, b"x"), base.fingerprint(Stage::Ingest, b"y"));
    }
}

#[test]
fn task_order_does_not_change_pretraining() {
    let cfg = Config::load(Some(&toy_conf()), &[("pretrain_epochs".into(), "2".into()), ("meta_epochs".into(), "1".into())]).unwrap();
    let ds = coldstart::data::load_interactions(&cfg.dataset, cfg.format).unwrap();
    let prep = experiment::split(&cfg, ds).unwrap();
    let (gt, _) = experiment::ground_truth(&cfg, &prep).unwrap();
    let a = experiment::pretrain(&cfg, &prep, &gt, &[TaskId::Rg, TaskId::Cp], 0).unwrap();
    let b = experiment::pretrain(&cfg, &prep, &gt, &[TaskId::Cp, TaskId::Rg], 0).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    let one = experiment::pretrain(&cfg, &prep, &gt, &[TaskId::Rg], 0).unwrap();
    let only_rg = experiment::select_tasks(&a.checkpoint, &[TaskId::Rg]).unwrap();
    assert_eq!(one.checkpoint.to_bytes(), only_rg.to_bytes());
}
