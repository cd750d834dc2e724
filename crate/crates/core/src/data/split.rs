use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BipartiteGraph, NeighborSource, NodeRef, Side};
use crate::error::{Error, Result};
use crate::io::atomic_write_str;

/// Abundant targets (`d_t`) and cold nodes (`d_n`) of one side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaSplit {
    pub side: Side,
    pub d_t: Vec<u32>,
    pub d_n: Vec<u32>,
}

/// A node joins `d_t` when its degree is strictly greater than `threshold`.
pub fn meta_split(graph: &BipartiteGraph, side: Side, threshold: usize) -> Result<MetaSplit> {
    let n = graph.count(side);
    if n == 0 {
        return Err(Error::invalid(format!("{side:?} side has no nodes")));
    }
    let (d_t, d_n) = (0..n as u32).partition(|&id| graph.degree(NodeRef { side, id }) > threshold);
    Ok(MetaSplit { side, d_t, d_n })
}

/// Seeded shuffle of `d_t` into `(train, test)` with `floor(ratio * |d_t|)`
/// training targets, clamped so neither part is empty.
pub fn intrinsic_split(split: &MetaSplit, ratio: f64, seed: u64) -> Result<(Vec<u32>, Vec<u32>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("ratio {ratio} not in (0, 1)")));
    }
    let n = split.d_t.len();
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 targets, have {n}")));
    }
    let n_train = ((ratio * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut ids = split.d_t.clone();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Chronological per-user cut of cold users' interactions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExtrinsicSplit {
    pub train: BTreeMap<u32, Vec<u32>>,
    pub test: BTreeMap<u32, Vec<u32>>,
    /// Users with fewer than two interactions.
    pub dropped: usize,
}

impl ExtrinsicSplit {
    pub fn users(&self) -> impl Iterator<Item = u32> + '_ {
        self.train.keys().copied()
    }

    pub fn is_test_edge(&self, user: u32, item: u32) -> bool {
        self.test.get(&user).is_some_and(|v| v.binary_search(&item).is_ok())
    }

    pub fn num_train(&self) -> usize {
        self.train.values().map(Vec::len).sum()
    }
}

/// The earliest `ceil(c_frac * deg)` interactions of each cold user go to
/// training and the rest to test. Users that cannot fill both sides are dropped.
pub fn extrinsic_split(graph: &BipartiteGraph, d_n: &[u32], c_frac: f64) -> Result<ExtrinsicSplit> {
    if !(c_frac > 0.0 && c_frac < 1.0) {
        return Err(Error::invalid(format!("c_frac {c_frac} not in (0, 1)")));
    }
    let mut out = ExtrinsicSplit::default();
    for &u in d_n {
        let items = graph.chronological_items(u);
        let deg = items.len();
        if deg < 2 {
            out.dropped += 1;
            continue;
        }
        let n_train = ((c_frac * deg as f64 - 1e-9).ceil() as usize).clamp(1, deg - 1);
        let mut train: Vec<u32> = items[..n_train].iter().map(|(i, _)| *i).collect();
        let mut test: Vec<u32> = items[n_train..].iter().map(|(i, _)| *i).collect();
        train.sort_unstable();
        test.sort_unstable();
        out.train.insert(u, train);
        out.test.insert(u, test);
    }
    if out.dropped > 0 {
        log::warn!("extrinsic split dropped {} cold users with < 2 interactions", out.dropped);
    }
    Ok(out)
}

/// Writes `node_id<TAB>partition` lines.
pub fn write_partitions(path: &Path, rows: &[(u32, &str)]) -> Result<()> {
    let mut out = String::new();
    for (id, part) in rows {
        out.push_str(&format!("{id}\t{part}\n"));
    }
    atomic_write_str(path, &out)
}

pub fn read_partitions(path: &Path) -> Result<Vec<(u32, String)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let err = |msg: &str| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg: msg.to_string(),
            };
            let (id, part) = line.split_once('\t').ok_or_else(|| err("expected node_id<TAB>partition"))?;
            Ok((id.parse().map_err(|_| err("bad node id"))?, part.to_string()))
        })
        .collect()
}
