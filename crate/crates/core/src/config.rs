//! Flat `key = value` experiment configuration with per-stage fingerprints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::Format;
use crate::error::{Error, Result};
use crate::paths::AugmentOp;
use crate::pretrain::TaskId;
use crate::sampling::SamplerKind;

/// Pipeline stages, in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Split,
    GroundTruth,
    Pretrain,
    Finetune,
    Eval,
    Bench,
}

impl Stage {
    pub fn command(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Split => "split",
            Stage::GroundTruth => "groundtruth",
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
            Stage::Eval => "eval",
            Stage::Bench => "bench",
        }
    }

    /// Whether keys owned by `owner` feed into this stage's fingerprint.
    fn depends_on(self, owner: Stage) -> bool {
        match self {
            Stage::Bench => owner <= Stage::Pretrain || owner == Stage::Bench,
            _ => owner <= self,
        }
    }
}

/// `(key, default, owning stage)`. Defaults follow the published settings.
const KEYS: &[(&str, &str, Stage)] = &[
    ("dataset", "data/toy.tsv", Stage::Ingest),
    ("format", "tsv", Stage::Ingest),
    ("seed", "42", Stage::Split),
    ("n_u", "15", Stage::Split),
    ("n_i", "25", Stage::Split),
    ("c_frac", "0.2", Stage::Split),
    ("intrinsic_ratio", "0.7", Stage::Split),
    ("d", "32", Stage::GroundTruth),
    ("gt_epochs", "50", Stage::GroundTruth),
    ("gt_lr", "0.01", Stage::GroundTruth),
    ("gt_batch", "256", Stage::GroundTruth),
    ("lr", "0.003", Stage::Pretrain),
    ("layers", "4", Stage::Pretrain),
    ("t_len", "6", Stage::Pretrain),
    ("k_intrinsic", "3", Stage::Pretrain),
    ("a", "0.2", Stage::Pretrain),
    ("b", "0.2", Stage::Pretrain),
    ("tau", "0.2", Stage::Pretrain),
    ("heads", "2", Stage::Pretrain),
    ("blocks", "2", Stage::Pretrain),
    ("tasks", "Rg,Cg,Rp,Cp", Stage::Pretrain),
    ("sampler", "dynamic", Stage::Pretrain),
    ("aug", "substitute", Stage::Pretrain),
    ("meta_epochs", "5", Stage::Pretrain),
    ("pretrain_epochs", "20", Stage::Pretrain),
    ("batch_rec", "128", Stage::Pretrain),
    ("batch_con", "64", Stage::Pretrain),
    ("k_extrinsic", "8", Stage::Finetune),
    ("finetune_epochs", "20", Stage::Finetune),
    ("finetune_lr", "0.003", Stage::Finetune),
    ("finetune_batch", "128", Stage::Finetune),
    ("freeze_encoders", "false", Stage::Finetune),
    ("resample_each_epoch", "false", Stage::Finetune),
    ("k_eval", "20", Stage::Eval),
    ("bench_epochs", "10", Stage::Bench),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub dataset: PathBuf,
    pub format: Format,
    pub seed: u64,
    /// Users with more than `n_u` interactions are warm.
    pub n_u: usize,
    /// Items with more than `n_i` interactions are warm.
    pub n_i: usize,
    pub c_frac: f64,
    pub intrinsic_ratio: f64,
    pub d: usize,
    pub gt_epochs: usize,
    pub gt_lr: f64,
    pub gt_batch: usize,
    pub lr: f64,
    pub layers: usize,
    pub t_len: usize,
    /// Neighbor budget `K` for pre-training masks and intrinsic evaluation.
    pub k_intrinsic: usize,
    /// Deletion ratio.
    pub a: f64,
    /// Substitution ratio.
    pub b: f64,
    pub tau: f64,
    pub heads: usize,
    pub blocks: usize,
    pub tasks: Vec<TaskId>,
    pub sampler: SamplerKind,
    pub aug: AugmentOp,
    pub meta_epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_rec: usize,
    pub batch_con: usize,
    /// Neighbor budget `K` when fine-tuning and ranking.
    pub k_extrinsic: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub finetune_batch: usize,
    pub freeze_encoders: bool,
    pub resample_each_epoch: bool,
    pub k_eval: usize,
    pub bench_epochs: usize,
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_tasks(v: &str) -> Result<Vec<TaskId>> {
    let mut tasks = Vec::new();
    for t in v.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let t: TaskId = t.parse()?;
        if !tasks.contains(&t) {
            tasks.push(t);
        }
    }
    if tasks.is_empty() {
        return Err(Error::Config("at least one task must be enabled".into()));
    }
    tasks.sort();
    Ok(tasks)
}

impl Default for Config {
    fn default() -> Self {
        Self::from_map(&BTreeMap::new(), None).expect("defaults parse")
    }
}

impl Config {
    /// Parses `key = value` lines. Blank lines and `#` comments are ignored.
    pub fn parse_text(text: &str) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(map)
    }

    /// Loads a config file, applies overrides, and resolves the dataset path
    /// relative to the file's directory.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut base = None;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            map = Self::parse_text(&text)?;
            base = p.parent().map(Path::to_path_buf);
        }
        let mut from_cli = false;
        for (k, v) in overrides {
            if k == "dataset" {
                from_cli = true;
            }
            map.insert(k.replace('-', "_"), v.clone());
        }
        Self::from_map(&map, if from_cli { None } else { base.as_deref() })
    }

    pub fn from_map(map: &BTreeMap<String, String>, base: Option<&Path>) -> Result<Self> {
        for k in map.keys() {
            if !KEYS.iter().any(|(key, _, _)| key == k) {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        let get = |key: &str| -> &str {
            map.get(key)
                .map(String::as_str)
                .unwrap_or_else(|| KEYS.iter().find(|(k, _, _)| *k == key).expect("known key").1)
        };
        let mut dataset = PathBuf::from(get("dataset"));
        if let (Some(b), true) = (base, dataset.is_relative()) {
            dataset = b.join(dataset);
        }
        let cfg = Config {
            dataset,
            format: get("format").parse()?,
            seed: parse("seed", get("seed"))?,
            n_u: parse("n_u", get("n_u"))?,
            n_i: parse("n_i", get("n_i"))?,
            c_frac: parse("c_frac", get("c_frac"))?,
            intrinsic_ratio: parse("intrinsic_ratio", get("intrinsic_ratio"))?,
            d: parse("d", get("d"))?,
            gt_epochs: parse("gt_epochs", get("gt_epochs"))?,
            gt_lr: parse("gt_lr", get("gt_lr"))?,
            gt_batch: parse("gt_batch", get("gt_batch"))?,
            lr: parse("lr", get("lr"))?,
            layers: parse("layers", get("layers"))?,
            t_len: parse("t_len", get("t_len"))?,
            k_intrinsic: parse("k_intrinsic", get("k_intrinsic"))?,
            a: parse("a", get("a"))?,
            b: parse("b", get("b"))?,
            tau: parse("tau", get("tau"))?,
            heads: parse("heads", get("heads"))?,
            blocks: parse("blocks", get("blocks"))?,
            tasks: parse_tasks(get("tasks"))?,
            sampler: get("sampler").parse()?,
            aug: get("aug").parse()?,
            meta_epochs: parse("meta_epochs", get("meta_epochs"))?,
            pretrain_epochs: parse("pretrain_epochs", get("pretrain_epochs"))?,
            batch_rec: parse("batch_rec", get("batch_rec"))?,
            batch_con: parse("batch_con", get("batch_con"))?,
            k_extrinsic: parse("k_extrinsic", get("k_extrinsic"))?,
            finetune_epochs: parse("finetune_epochs", get("finetune_epochs"))?,
            finetune_lr: parse("finetune_lr", get("finetune_lr"))?,
            finetune_batch: parse("finetune_batch", get("finetune_batch"))?,
            freeze_encoders: parse("freeze_encoders", get("freeze_encoders"))?,
            resample_each_epoch: parse("resample_each_epoch", get("resample_each_epoch"))?,
            k_eval: parse("k_eval", get("k_eval"))?,
            bench_epochs: parse("bench_epochs", get("bench_epochs"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.d == 0 || self.layers == 0 || self.k_intrinsic == 0 || self.k_extrinsic == 0 || self.k_eval == 0 {
            return bad("d, layers, k_intrinsic, k_extrinsic and k_eval must be >= 1");
        }
        if self.t_len < 2 {
            return bad("t_len must be >= 2");
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return bad("heads must divide d");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be > 0");
        }
        for (name, v) in [("a", self.a), ("b", self.b), ("c_frac", self.c_frac), ("intrinsic_ratio", self.intrinsic_ratio)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} not in [0, 1]")));
            }
        }
        if self.batch_rec == 0 || self.batch_con == 0 || self.finetune_batch == 0 || self.gt_batch == 0 {
            return bad("batch sizes must be >= 1");
        }
        Ok(())
    }

    /// Canonical value of `key`.
    pub fn value(&self, key: &str) -> Option<String> {
        Some(match key {
            "dataset" => self.dataset.display().to_string(),
            "format" => self.format.as_str().to_string(),
            "seed" => self.seed.to_string(),
            "n_u" => self.n_u.to_string(),
            "n_i" => self.n_i.to_string(),
            "c_frac" => self.c_frac.to_string(),
            "intrinsic_ratio" => self.intrinsic_ratio.to_string(),
            "d" => self.d.to_string(),
            "gt_epochs" => self.gt_epochs.to_string(),
            "gt_lr" => self.gt_lr.to_string(),
            "gt_batch" => self.gt_batch.to_string(),
            "lr" => self.lr.to_string(),
            "layers" => self.layers.to_string(),
            "t_len" => self.t_len.to_string(),
            "k_intrinsic" => self.k_intrinsic.to_string(),
            "a" => self.a.to_string(),
            "b" => self.b.to_string(),
            "tau" => self.tau.to_string(),
            "heads" => self.heads.to_string(),
            "blocks" => self.blocks.to_string(),
            "tasks" => self.tasks.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(","),
            "sampler" => self.sampler.as_str().to_string(),
            "aug" => self.aug.as_str().to_string(),
            "meta_epochs" => self.meta_epochs.to_string(),
            "pretrain_epochs" => self.pretrain_epochs.to_string(),
            "batch_rec" => self.batch_rec.to_string(),
            "batch_con" => self.batch_con.to_string(),
            "k_extrinsic" => self.k_extrinsic.to_string(),
            "finetune_epochs" => self.finetune_epochs.to_string(),
            "finetune_lr" => self.finetune_lr.to_string(),
            "finetune_batch" => self.finetune_batch.to_string(),
            "freeze_encoders" => self.freeze_encoders.to_string(),
            "resample_each_epoch" => self.resample_each_epoch.to_string(),
            "k_eval" => self.k_eval.to_string(),
            "bench_epochs" => self.bench_epochs.to_string(),
            _ => return None,
        })
    }

    /// Canonical `key = value` text, in key-table order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|(k, _, _)| format!("{k} = {}\n", self.value(k).expect("known key")))
            .collect()
    }

    /// Fingerprint of everything `stage` depends on. The dataset path itself
    /// is cosmetic; `dataset_digest` (a hash of the file contents) stands in
    /// for it.
    pub fn fingerprint(&self, stage: Stage, dataset_digest: &[u8]) -> u64 {
        let mut h = Sha256::new();
        h.update(b"dataset_digest=");
        h.update(dataset_digest);
        h.update(b"\n");
        for (k, _, owner) in KEYS {
            if *k == "dataset" || !stage.depends_on(*owner) {
                continue;
            }
            h.update(format!("{k}={}\n", self.value(k).expect("known key")).as_bytes());
        }
        let out = h.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("8 bytes"))
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|(k, _, _)| *k)
    }
}

/// SHA-256 of a file's contents.
pub fn file_digest(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Config {
        Config::from_map(&Config::parse_text(text).unwrap(), None).unwrap()
    }

    #[test]
    fn defaults_match_published_settings() {
        let c = Config::default();
        assert_eq!(c.d, 32);
        assert_eq!(c.lr, 0.003);
        assert_eq!(c.layers, 4);
        assert_eq!(c.t_len, 6);
        assert_eq!(c.k_extrinsic, 8);
        assert_eq!(c.k_intrinsic, 3);
        assert_eq!((c.a, c.b, c.tau), (0.2, 0.2, 0.2));
        assert_eq!(c.c_frac, 0.2);
        assert_eq!(c.k_eval, 20);
        assert_eq!(c.tasks, vec![TaskId::Rg, TaskId::Cg, TaskId::Rp, TaskId::Cp]);
    }

    #[test]
    fn reordering_and_comments_are_cosmetic() {
        let a = cfg("d = 16\nlr = 0.01\ntasks = Rg,Cp\n");
        let b = cfg("# comment\n  lr=0.010  \n\ntasks = Cp, Rg\nd = 16 # trailing\n");
        for s in [Stage::Ingest, Stage::Pretrain, Stage::Eval, Stage::Bench] {
            assert_eq!(a.fingerprint(s, b"x"), b.fingerprint(s, b"x"));
        }
    }

    #[test]
    fn every_key_changes_its_stages() {
        let base = Config::default();
        for (k, _, owner) in KEYS {
            if *k == "dataset" {
                continue;
            }
            let changed = match *k {
                "format" => "ml1m".to_string(),
                "tasks" => "Rg".to_string(),
                "sampler" => "random".to_string(),
                "aug" => "delete".to_string(),
                "freeze_encoders" | "resample_each_epoch" => "true".to_string(),
                "c_frac" | "intrinsic_ratio" | "a" | "b" => "0.5".to_string(),
                "heads" => "4".to_string(),
                "d" => "64".to_string(),
                _ => {
                    let v = base.value(k).unwrap();
                    if v.contains('.') {
                        format!("{}", v.parse::<f64>().unwrap() * 2.0)
                    } else {
                        format!("{}", v.parse::<u64>().unwrap() + 1)
                    }
                }
            };
            let mut m = BTreeMap::new();
            m.insert(k.to_string(), changed);
            let c = Config::from_map(&m, None).unwrap();
            assert_ne!(c.fingerprint(*owner, b"x"), base.fingerprint(*owner, b"x"), "{k}");
            assert_eq!(c.fingerprint(Stage::Ingest, b"x") == base.fingerprint(Stage::Ingest, b"x"), *owner != Stage::Ingest);
        }
        assert_ne!(base.fingerprint(Stage::Ingest, b"x"), base.fingerprint(Stage::Ingest, b"y"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let m = Config::parse_text("bogus = 1").unwrap();
        assert!(Config::from_map(&m, None).is_err());
        let m = Config::parse_text("tau = 0").unwrap();
        assert!(Config::from_map(&m, None).is_err());
        assert!(Config::parse_text("no equals sign").is_err());
    }

    #[test]
    fn text_roundtrip() {
        let c = cfg("d = 8\nheads = 2\nsampler = importance\n");
        let again = cfg(&c.to_text());
        assert_eq!(c, again);
    }
}
