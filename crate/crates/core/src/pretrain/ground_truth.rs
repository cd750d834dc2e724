use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Optimizer, ParamGrad, ParamStore};
use crate::data::{BipartiteGraph, NeighborSource, NodeRef};
use crate::error::{Error, Result};
use crate::sampling::NodeVectors;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruthSettings {
    pub d: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// BPR matrix factorization over every edge of `graph`, one uniform negative
/// per positive and epoch. Returns the frozen embeddings and the mean loss of
/// each epoch.
pub fn train_ground_truth(graph: &BipartiteGraph, s: &GroundTruthSettings) -> Result<(NodeVectors, Vec<f64>)> {
    let (nu, ni, d) = (graph.num_users(), graph.num_items(), s.d);
    if graph.num_edges() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut store = ParamStore::new();
    let users = store.add_uniform("gt.users", vec![nu, d], 0.1, &mut rng)?;
    let items = store.add_uniform("gt.items", vec![ni, d], 0.1, &mut rng)?;
    let opt = Optimizer::adam(s.lr);
    let mut edges: Vec<(u32, u32)> = graph.interactions().iter().map(|e| (e.user, e.item)).collect();
    edges.sort_unstable();
    let mut losses = Vec::with_capacity(s.epochs);

    for epoch in 0..s.epochs {
        edges.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in edges.chunks(s.batch.max(1)) {
            let mut grads = Vec::with_capacity(batch.len() * 3);
            let scale = 1.0 / batch.len() as f64;
            for &(u, i) in batch {
                let seen = graph.neighbors(NodeRef::user(u));
                if seen.len() >= ni {
                    continue;
                }
                let j = loop {
                    let j = rng.gen_range(0..ni as u32);
                    if seen.binary_search(&j).is_err() {
                        break j;
                    }
                };
                let (u, i, j) = (u as usize, i as usize, j as usize);
                let ue = store.value(users).row(u).to_vec();
                let ie = store.value(items).row(i).to_vec();
                let je = store.value(items).row(j).to_vec();
                let x: f64 = (0..d).map(|k| ue[k] * (ie[k] - je[k])).sum();
                total += softplus(-x);
                count += 1;
                let g = -sigmoid(-x) * scale;
                grads.push(ParamGrad { param: users, offset: u * d, values: (0..d).map(|k| g * (ie[k] - je[k])).collect() });
                grads.push(ParamGrad { param: items, offset: i * d, values: ue.iter().map(|v| g * v).collect() });
                grads.push(ParamGrad { param: items, offset: j * d, values: ue.iter().map(|v| -g * v).collect() });
            }
            store.accumulate_grads(&grads, 1.0);
            opt.step(&mut store).map_err(|_| Error::Diverged(format!("ground truth, epoch {epoch}")))?;
        }
        let mean = if count > 0 { total / count as f64 } else { 0.0 };
        if !mean.is_finite() {
            return Err(Error::Diverged(format!("ground truth, epoch {epoch}")));
        }
        log::debug!("groundtruth\t{epoch}\t{mean}");
        losses.push(mean);
    }
    let vectors = NodeVectors::new(store.value(users).clone(), store.value(items).clone())?;
    Ok((vectors, losses))
}
