use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::autodiff::{cosine, dot};
use crate::data::ExtrinsicSplit;
use crate::error::{Error, Result};

/// Inner-product relevance of a user to an item.
pub fn relevance(user: &[f64], item: &[f64]) -> f64 {
    dot(user, item)
}

/// Item ids by descending score, ties by ascending id, skipping `exclude`
/// (which must be sorted). Signed zeros tie.
pub fn rank(scores: &[f64], exclude: &[u32]) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..scores.len() as u32).filter(|i| exclude.binary_search(i).is_err()).collect();
    let key = |i: u32| scores[i as usize] + 0.0;
    ids.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    ids
}

/// `|top-k ∩ test| / |test|`. `test` must be sorted.
pub fn recall_at_k(ranked: &[u32], test: &[u32], k: usize) -> f64 {
    if test.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|i| test.binary_search(i).is_ok()).count();
    hits as f64 / test.len() as f64
}

/// Binary-gain NDCG. `test` must be sorted.
pub fn ndcg_at_k(ranked: &[u32], test: &[u32], k: usize) -> f64 {
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| test.binary_search(i).is_ok())
        .map(|(r, _)| 1.0 / (r as f64 + 2.0).log2())
        .fold(0.0, |a, b| a + b);
    let idcg: f64 = (0..k.min(test.len())).map(|r| 1.0 / (r as f64 + 2.0).log2()).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserMetrics {
    pub user: u32,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    /// Standard errors of the two means.
    pub recall_se: f64,
    pub ndcg_se: f64,
    /// Users left out because their test set is empty.
    pub excluded: usize,
    pub per_user: Vec<UserMetrics>,
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Full-catalog ranking of every split user against `items`, excluding the
/// user's training items, macro-averaged.
pub fn eval_extrinsic(users: &BTreeMap<u32, Vec<f64>>, items: &[Vec<f64>], split: &ExtrinsicSplit, k: usize) -> Result<RankingResult> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut excluded = 0;
    let mut work = Vec::new();
    for (&u, test) in &split.test {
        if test.is_empty() {
            excluded += 1;
            continue;
        }
        let emb = users.get(&u).ok_or_else(|| Error::MissingEmbedding(format!("u{u}")))?;
        let train = split.train.get(&u).map(Vec::as_slice).unwrap_or(&[]);
        work.push((u, emb, train, test));
    }
    let per_user: Vec<UserMetrics> = work
        .par_iter()
        .map(|&(user, emb, train, test)| {
            let scores: Vec<f64> = items.iter().map(|i| relevance(emb, i)).collect();
            let ranked = rank(&scores, train);
            assert!(ranked.iter().all(|i| train.binary_search(i).is_err()), "training item leaked into candidates");
            UserMetrics { user, recall: recall_at_k(&ranked, test, k), ndcg: ndcg_at_k(&ranked, test, k) }
        })
        .collect();
    let (recall, recall_se) = mean_se(&per_user.iter().map(|m| m.recall).collect::<Vec<_>>());
    let (ndcg, ndcg_se) = mean_se(&per_user.iter().map(|m| m.ndcg).collect::<Vec<_>>());
    Ok(RankingResult { k, recall, ndcg, recall_se, ndcg_se, excluded, per_user })
}

/// Mean cosine between predictions and their ground truth.
pub fn eval_intrinsic(pred: &[Vec<f64>], truth: &[&[f64]]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::invalid(format!("{} predictions for {} truths", pred.len(), truth.len())));
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| cosine(p, t)).sum::<f64>() / pred.len() as f64)
}
