//! Commands. Each stage reads the artifacts of earlier stages from the
//! output directory, refuses them when their fingerprint does not match the
//! current config, and writes its own artifacts atomically.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::autodiff::Checkpoint;
use crate::config::{file_digest, Config, Stage};
use crate::data::{load_interactions, read_remap, write_remap, Dataset, Interaction};
use crate::error::{Error, Result};
use crate::experiment::{self, Prepared};
use crate::finetune::{sampling_benchmark, FusedModel};
use crate::io::atomic_write_str;
use crate::pretrain::{mask_targets, PretrainData, TaskId};
use crate::report::{ablation_tsv, ablation_variants, AblationRow, EvalReport, Metric};
use crate::sampling::{NodeVectors, SamplerKind};

pub const INGEST: &str = "ingest.tsv";
pub const USERS_MAP: &str = "users.map";
pub const ITEMS_MAP: &str = "items.map";
pub const SPLIT: &str = "split.tsv";
pub const GROUND_TRUTH: &str = "ground_truth.ckpt";
pub const GROUND_TRUTH_LOSS: &str = "ground_truth_loss.csv";
pub const PRETRAIN: &str = "pretrain.ckpt";
pub const PRETRAIN_LOSS: &str = "pretrain_loss.csv";
pub const FINETUNE: &str = "finetune.ckpt";
pub const FINETUNE_LOSS: &str = "finetune_loss.csv";
pub const EVAL: &str = "eval.txt";
pub const METRICS: &str = "metrics.tsv";
pub const BENCH: &str = "bench.tsv";
pub const ABLATION: &str = "ablation.tsv";
pub const REPORT: &str = "report.txt";
pub const TRAIN_LOG: &str = "train.log";

/// A config bound to an output directory and the dataset's content hash.
pub struct Run {
    pub cfg: Config,
    pub out: PathBuf,
    digest: Vec<u8>,
}

impl Run {
    pub fn new(cfg: Config, out: impl Into<PathBuf>) -> Result<Self> {
        let digest = file_digest(&cfg.dataset)?;
        let out = out.into();
        fs::create_dir_all(&out)?;
        Ok(Self { cfg, out, digest })
    }

    pub fn fingerprint(&self, stage: Stage) -> u64 {
        self.cfg.fingerprint(stage, &self.digest)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_text(&self, name: &str, stage: Stage, body: &str) -> Result<()> {
        atomic_write_str(&self.path(name), &format!("#fingerprint={:016x}\n{body}", self.fingerprint(stage)))
    }

    /// Body of a text artifact written by `stage`.
    fn read_text(&self, name: &str, stage: Stage) -> Result<String> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact { path, run_first: stage.command() });
        }
        let text = fs::read_to_string(&path)?;
        let (head, body) = text.split_once('\n').unwrap_or((&text, ""));
        let found = head
            .strip_prefix("#fingerprint=")
            .and_then(|h| u64::from_str_radix(h, 16).ok())
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing fingerprint header", path.display())))?;
        self.check(name, stage, found)?;
        Ok(body.to_string())
    }

    fn check(&self, name: &str, stage: Stage, found: u64) -> Result<()> {
        let expected = self.fingerprint(stage);
        if found != expected {
            return Err(Error::FingerprintMismatch { artifact: name.to_string(), found, expected, rerun: stage.command() });
        }
        Ok(())
    }

    fn read_checkpoint(&self, name: &str, stage: Stage) -> Result<Checkpoint> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact { path, run_first: stage.command() });
        }
        let c = Checkpoint::load(&path)?;
        self.check(name, stage, c.fingerprint)?;
        if c.partial {
            return Err(Error::Checkpoint(format!("{name} is partial; rerun `{}`", stage.command())));
        }
        Ok(c)
    }

    fn append_log(&self, lines: &[String]) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(TRAIN_LOG))?;
        for l in lines {
            writeln!(f, "{l}")?;
        }
        Ok(())
    }

    // ---- loaders

    pub fn load_ingest(&self) -> Result<Dataset> {
        let body = self.read_text(INGEST, Stage::Ingest)?;
        let mut has_timestamps = false;
        let mut interactions = Vec::new();
        for line in body.lines() {
            if let Some(v) = line.strip_prefix("#timestamps=") {
                has_timestamps = v == "true";
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Checkpoint(format!("{INGEST}: bad line `{line}`"));
            if f.len() != 4 {
                return Err(bad());
            }
            interactions.push(Interaction {
                user: f[0].parse().map_err(|_| bad())?,
                item: f[1].parse().map_err(|_| bad())?,
                timestamp: f[2].parse().map_err(|_| bad())?,
                seq: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(Dataset {
            interactions,
            users: read_remap(&self.path(USERS_MAP))?,
            items: read_remap(&self.path(ITEMS_MAP))?,
            has_timestamps,
        })
    }

    pub fn load_split(&self) -> Result<Prepared> {
        let body = self.read_text(SPLIT, Stage::Split)?;
        let prep = experiment::split(&self.cfg, self.load_ingest()?)?;
        if body != split_text(&prep) {
            return Err(Error::Checkpoint(format!("{SPLIT} does not match its inputs; rerun `split`")));
        }
        Ok(prep)
    }

    pub fn load_ground_truth(&self) -> Result<NodeVectors> {
        experiment::gt_from_checkpoint(&self.read_checkpoint(GROUND_TRUTH, Stage::GroundTruth)?)
    }

    pub fn load_pretrain(&self) -> Result<Checkpoint> {
        self.read_checkpoint(PRETRAIN, Stage::Pretrain)
    }

    pub fn load_finetune(&self, prep: &Prepared) -> Result<FusedModel> {
        let c = self.read_checkpoint(FINETUNE, Stage::Finetune)?;
        FusedModel::from_checkpoint(&c, &self.cfg.tasks, &prep.dims(&self.cfg))
    }

    pub fn load_eval(&self) -> Result<EvalReport> {
        EvalReport::from_kv(&self.read_text(EVAL, Stage::Eval)?)
    }

    // ---- commands

    pub fn ingest(&self) -> Result<()> {
        let ds = load_interactions(&self.cfg.dataset, self.cfg.format)?;
        let mut body = format!("#timestamps={}\n", ds.has_timestamps);
        for x in &ds.interactions {
            body.push_str(&format!("{}\t{}\t{}\t{}\n", x.user, x.item, x.timestamp, x.seq));
        }
        write_remap(&self.path(USERS_MAP), &ds.users)?;
        write_remap(&self.path(ITEMS_MAP), &ds.items)?;
        self.write_text(INGEST, Stage::Ingest, &body)?;
        log::info!("ingest: {} users, {} items, {} interactions", ds.num_users(), ds.num_items(), ds.interactions.len());
        Ok(())
    }

    pub fn split(&self) -> Result<()> {
        let prep = experiment::split(&self.cfg, self.load_ingest()?)?;
        self.write_text(SPLIT, Stage::Split, &split_text(&prep))?;
        log::info!(
            "split: {} warm train, {} warm test, {} cold users",
            prep.train_t.len(),
            prep.test_t.len(),
            prep.extrinsic.test.len()
        );
        Ok(())
    }

    pub fn ground_truth(&self) -> Result<()> {
        let prep = self.load_split()?;
        let (gt, losses) = experiment::ground_truth(&self.cfg, &prep)?;
        experiment::gt_to_checkpoint(&gt, self.fingerprint(Stage::GroundTruth)).save(&self.path(GROUND_TRUTH))?;
        let mut csv = String::from("epoch,loss\n");
        for (e, l) in losses.iter().enumerate() {
            csv.push_str(&format!("{e},{l}\n"));
        }
        atomic_write_str(&self.path(GROUND_TRUTH_LOSS), &csv)
    }

    pub fn pretrain(&self) -> Result<()> {
        let prep = self.load_split()?;
        let gt = self.load_ground_truth()?;
        let out = experiment::pretrain(&self.cfg, &prep, &gt, &self.cfg.tasks, self.fingerprint(Stage::Pretrain))?;
        out.checkpoint.save(&self.path(PRETRAIN))?;
        let mut csv = String::from("task,epoch,loss,skipped\n");
        for l in &out.logs {
            csv.push_str(&format!("{},{},{},{}\n", l.task, l.epoch, l.loss, l.skipped));
        }
        atomic_write_str(&self.path(PRETRAIN_LOSS), &csv)?;
        self.append_log(&out.logs.iter().map(|l| l.line()).collect::<Vec<_>>())?;
        if !out.failures.is_empty() {
            let names: Vec<String> = out.failures.iter().map(|(t, e)| format!("{t}: {e}")).collect();
            return Err(Error::Diverged(names.join("; ")));
        }
        Ok(())
    }

    pub fn finetune(&self) -> Result<()> {
        let prep = self.load_split()?;
        let ckpt = self.load_pretrain()?;
        let (model, _, losses) = experiment::finetune_model(&self.cfg, &prep, &self.cfg.tasks, Some(&ckpt))?;
        model.to_checkpoint(self.fingerprint(Stage::Finetune)).save(&self.path(FINETUNE))?;
        let mut csv = String::from("epoch,loss\n");
        for (e, l) in losses.iter().enumerate() {
            csv.push_str(&format!("{e},{l}\n"));
        }
        atomic_write_str(&self.path(FINETUNE_LOSS), &csv)?;
        self.append_log(&losses.iter().enumerate().map(|(e, l)| format!("finetune\t{e}\t{l}")).collect::<Vec<_>>())
    }

    pub fn eval(&self) -> Result<EvalReport> {
        let prep = self.load_split()?;
        let gt = self.load_ground_truth()?;
        let ckpt = self.load_pretrain()?;
        let model = self.load_finetune(&prep)?;
        let report = evaluate(&self.cfg, &prep, &gt, &ckpt, &model)?;
        self.write_text(EVAL, Stage::Eval, &report.to_kv())?;
        atomic_write_str(&self.path(METRICS), &report.to_tsv())?;
        Ok(report)
    }

    /// Per-epoch sampling and training time of every sampler. Timings are
    /// wall-clock and differ between runs.
    pub fn bench(&self) -> Result<String> {
        let prep = self.load_split()?;
        let gt = self.load_ground_truth()?;
        let s = experiment::pretrain_settings(&self.cfg, &prep);
        let targets = mask_targets(&prep.visible, &prep.train_t, self.cfg.k_intrinsic, experiment::stream_seed(&self.cfg, experiment::streams::TRAIN_MASKS))?;
        let data = PretrainData { graph: &prep.visible, gt: &gt, targets: &targets };
        let rows = sampling_benchmark(&data, &s, &[SamplerKind::Random, SamplerKind::Importance, SamplerKind::Dynamic], self.cfg.bench_epochs)?;
        let mut tsv = String::from("sampler\tepochs\tsample_ms_mean\tsample_ms_std\ttrain_ms_mean\ttrain_ms_std\n");
        for r in &rows {
            tsv.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
                r.sampler.as_str(),
                r.epochs,
                r.sample_ms_mean,
                r.sample_ms_std,
                r.train_ms_mean,
                r.train_ms_std
            ));
        }
        self.write_text(BENCH, Stage::Bench, &tsv)?;
        Ok(tsv)
    }

    /// All single-task and leave-one-out variants. The four tasks are
    /// pre-trained once; since tasks never share state, a variant's
    /// checkpoint is the matching subset of sections.
    pub fn ablation(&self) -> Result<Vec<AblationRow>> {
        let prep = self.load_split()?;
        let gt = self.load_ground_truth()?;
        let mut cfg = self.cfg.clone();
        cfg.tasks = TaskId::ALL.to_vec();
        let full = experiment::pretrain(&cfg, &prep, &gt, &TaskId::ALL, cfg.fingerprint(Stage::Pretrain, &self.digest))?;
        if !full.failures.is_empty() {
            return Err(Error::Diverged(format!("{:?}", full.failures)));
        }
        let intrinsic = experiment::intrinsic(&cfg, &prep, &gt, &full.checkpoint)?;
        let mut rows = Vec::new();
        for (variant, tasks) in ablation_variants() {
            let mut vcfg = cfg.clone();
            vcfg.tasks = tasks.clone();
            let ckpt = experiment::select_tasks(&full.checkpoint, &tasks)?;
            let (model, _, _) = experiment::finetune_model(&vcfg, &prep, &tasks, Some(&ckpt))?;
            let ctx = experiment::eval_contexts(&vcfg, &prep, &model)?;
            let (rank, isolated) = experiment::extrinsic(&vcfg, &prep, &model, &ctx)?;
            let report = assemble(&vcfg, &intrinsic, &rank, isolated);
            log::info!("ablation {variant}: recall {} ndcg {}", report.recall(), report.ndcg());
            rows.push(AblationRow { variant, report });
        }
        let body = ablation_tsv(&rows, cfg.k_eval);
        atomic_write_str(&self.path(ABLATION), &format!("#fingerprint={:016x}\n{body}", cfg.fingerprint(Stage::Eval, &self.digest)))?;
        Ok(rows)
    }

    /// Collects the evaluation, loss curves and, when present, the ablation
    /// and benchmark tables into one text report.
    pub fn report(&self) -> Result<String> {
        let eval = self.load_eval()?;
        let mut s = format!("# coldstart report\nconfig_fingerprint={:016x}\n\n[metrics]\n", self.fingerprint(Stage::Eval));
        s.push_str(&eval.to_tsv());
        s.push_str(&format!(
            "\nusers={}\nexcluded_users={}\nisolated_items={}\n",
            eval.users, eval.excluded_users, eval.isolated_items
        ));
        for (title, name) in [("ground_truth_loss", GROUND_TRUTH_LOSS), ("pretrain_loss", PRETRAIN_LOSS), ("finetune_loss", FINETUNE_LOSS)] {
            if let Ok(text) = fs::read_to_string(self.path(name)) {
                s.push_str(&format!("\n[{title}]\n{}", last_rows(&text)));
            }
        }
        for (title, name) in [("ablation", ABLATION), ("bench", BENCH)] {
            if let Ok(text) = fs::read_to_string(self.path(name)) {
                let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
                s.push_str(&format!("\n[{title}]\n{body}"));
            }
        }
        atomic_write_str(&self.path(REPORT), &s)?;
        Ok(s)
    }

    /// Every stage from ingest to report.
    pub fn run_all(&self) -> Result<EvalReport> {
        self.ingest()?;
        self.split()?;
        self.ground_truth()?;
        self.pretrain()?;
        self.finetune()?;
        let r = self.eval()?;
        self.report()?;
        Ok(r)
    }
}

/// The header and the final row of every task (or of the whole file).
fn last_rows(csv: &str) -> String {
    let mut lines = csv.lines();
    let Some(header) = lines.next() else { return String::new() };
    let rows: Vec<&str> = lines.collect();
    let mut out = format!("{header}\n");
    if header.starts_with("task,") {
        for (i, r) in rows.iter().enumerate() {
            let task = r.split(',').next();
            if rows.get(i + 1).map(|n| n.split(',').next()) != Some(task) {
                out.push_str(&format!("{r}\n"));
            }
        }
    } else if let Some(r) = rows.last() {
        out.push_str(&format!("{r}\n"));
    }
    out
}

fn split_text(prep: &Prepared) -> String {
    let mut s = String::new();
    let part = |n: &crate::data::NodeRef| {
        if prep.train_t.contains(n) {
            "train_t"
        } else if prep.test_t.contains(n) {
            "test_t"
        } else {
            "cold"
        }
    };
    for u in 0..prep.num_users() as u32 {
        s.push_str(&format!("user\t{u}\t{}\n", part(&crate::data::NodeRef::user(u))));
    }
    for i in 0..prep.num_items() as u32 {
        s.push_str(&format!("item\t{i}\t{}\n", part(&crate::data::NodeRef::item(i))));
    }
    for (kind, map) in [("train", &prep.extrinsic.train), ("test", &prep.extrinsic.test)] {
        for (u, items) in map {
            for i in items {
                s.push_str(&format!("{kind}\t{u}\t{i}\n"));
            }
        }
    }
    s.push_str(&format!("dropped\t{}\n", prep.extrinsic.dropped));
    s
}

fn assemble(cfg: &Config, intrinsic: &[(TaskId, f64, f64)], rank: &crate::finetune::RankingResult, isolated: usize) -> EvalReport {
    let mut metrics: Vec<Metric> = intrinsic
        .iter()
        .filter(|(t, _, _)| cfg.tasks.contains(t))
        .map(|&(t, v, se)| Metric { name: EvalReport::intrinsic_name(t), value: v, stderr: se })
        .collect();
    metrics.push(Metric { name: EvalReport::recall_name(rank.k), value: rank.recall, stderr: rank.recall_se });
    metrics.push(Metric { name: EvalReport::ndcg_name(rank.k), value: rank.ndcg, stderr: rank.ndcg_se });
    EvalReport {
        tasks: cfg.tasks.clone(),
        k: rank.k,
        users: rank.per_user.len(),
        excluded_users: rank.excluded,
        isolated_items: isolated,
        metrics,
    }
}

/// Intrinsic and extrinsic evaluation of a fine-tuned model.
pub fn evaluate(cfg: &Config, prep: &Prepared, gt: &NodeVectors, ckpt: &Checkpoint, model: &FusedModel) -> Result<EvalReport> {
    let intrinsic = experiment::intrinsic(cfg, prep, gt, ckpt)?;
    let ctx = experiment::eval_contexts(cfg, prep, model)?;
    let (rank, isolated) = experiment::extrinsic(cfg, prep, model, &ctx)?;
    Ok(assemble(cfg, &intrinsic, &rank, isolated))
}

/// Reads a config file (or the defaults) and applies `key value` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Config> {
    Config::load(path, overrides)
}
