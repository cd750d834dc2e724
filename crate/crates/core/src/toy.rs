//! Synthetic interaction data with planted block structure.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Interaction;

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub users: usize,
    pub items: usize,
    pub blocks: usize,
    /// Chance that an interaction stays inside the user's block.
    pub in_block: f64,
    /// Share of users with many interactions.
    pub warm_share: f64,
    pub warm_degree: (usize, usize),
    pub cold_degree: (usize, usize),
    /// Popularity exponent inside a block; rank `r` has weight `(r + 1)^-skew`.
    pub skew: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            users: 200,
            items: 100,
            blocks: 4,
            in_block: 0.85,
            warm_share: 0.4,
            warm_degree: (18, 36),
            cold_degree: (5, 14),
            skew: 0.7,
            seed: 7,
        }
    }
}

impl ToySpec {
    pub fn user_block(&self, u: usize) -> usize {
        u * self.blocks / self.users
    }

    pub fn item_block(&self, i: usize) -> usize {
        i * self.blocks / self.items
    }
}

/// Every user draws a degree, then distinct items: from its own block with
/// probability `in_block`, otherwise from anywhere, both popularity-skewed.
/// Timestamps increase per user from a random start.
pub fn generate(spec: &ToySpec) -> Vec<Interaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights: Vec<f64> = (0..spec.items)
        .map(|i| {
            let block = spec.item_block(i);
            let rank = i - (0..spec.items).position(|j| spec.item_block(j) == block).unwrap_or(0);
            (rank as f64 + 1.0).powf(-spec.skew)
        })
        .collect();
    let global = WeightedIndex::new(&weights).expect("positive weights");
    let per_block: Vec<(Vec<usize>, WeightedIndex<f64>)> = (0..spec.blocks)
        .map(|b| {
            let ids: Vec<usize> = (0..spec.items).filter(|&i| spec.item_block(i) == b).collect();
            let w = WeightedIndex::new(ids.iter().map(|&i| weights[i])).expect("non-empty block");
            (ids, w)
        })
        .collect();

    let mut out = Vec::new();
    let mut seq = 0u64;
    for u in 0..spec.users {
        let (lo, hi) = if rng.gen_bool(spec.warm_share) { spec.warm_degree } else { spec.cold_degree };
        let degree = rng.gen_range(lo..=hi).min(spec.items);
        let (ids, w) = &per_block[spec.user_block(u)];
        let mut chosen = Vec::with_capacity(degree);
        while chosen.len() < degree {
            let i = if rng.gen_bool(spec.in_block) { ids[w.sample(&mut rng)] } else { global.sample(&mut rng) };
            if !chosen.contains(&i) {
                chosen.push(i);
            }
        }
        let mut t: i64 = 1_000_000 + rng.gen_range(0..100_000);
        for i in chosen {
            t += rng.gen_range(1..5_000);
            out.push(Interaction { user: u as u32, item: i as u32, timestamp: t, seq });
            seq += 1;
        }
    }
    out
}

/// `u<id>\ti<id>\t<timestamp>` lines.
pub fn to_tsv(interactions: &[Interaction]) -> String {
    let mut s = String::new();
    for x in interactions {
        s.push_str(&format!("u{}\ti{}\t{}\n", x.user, x.item, x.timestamp));
    }
    s
}
