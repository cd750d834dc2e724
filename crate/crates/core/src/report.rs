//! Text formats of the evaluation results.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pretrain::TaskId;

#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub tasks: Vec<TaskId>,
    pub k: usize,
    pub users: usize,
    pub excluded_users: usize,
    pub isolated_items: usize,
    /// Intrinsic cosines per task, then Recall@k and NDCG@k.
    pub metrics: Vec<Metric>,
}

impl EvalReport {
    pub fn recall_name(k: usize) -> String {
        format!("recall@{k}")
    }

    pub fn ndcg_name(k: usize) -> String {
        format!("ndcg@{k}")
    }

    pub fn intrinsic_name(task: TaskId) -> String {
        format!("intrinsic_cosine_{task}")
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn recall(&self) -> f64 {
        self.metric(&Self::recall_name(self.k)).map_or(f64::NAN, |m| m.value)
    }

    pub fn ndcg(&self) -> f64 {
        self.metric(&Self::ndcg_name(self.k)).map_or(f64::NAN, |m| m.value)
    }

    /// Mean intrinsic cosine over the report's tasks.
    pub fn intrinsic_mean(&self) -> f64 {
        let v: Vec<f64> = self.tasks.iter().filter_map(|&t| self.metric(&Self::intrinsic_name(t))).map(|m| m.value).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let tasks: Vec<&str> = self.tasks.iter().map(|t| t.as_str()).collect();
        s.push_str(&format!("tasks={}\nk={}\nusers={}\nexcluded_users={}\nisolated_items={}\n", tasks.join(","), self.k, self.users, self.excluded_users, self.isolated_items));
        for m in &self.metrics {
            s.push_str(&format!("{}={}\n{}_stderr={}\n", m.name, m.value, m.name, m.stderr));
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut order = Vec::new();
        for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::invalid(format!("bad report line `{line}`")))?;
            order.push(k.to_string());
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| map.get(k).ok_or_else(|| Error::invalid(format!("report lacks `{k}`")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::invalid(format!("bad `{k}`"))) };
        let float = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::invalid(format!("bad `{k}`"))) };
        let tasks = get("tasks")?.split(',').filter(|t| !t.is_empty()).map(str::parse).collect::<Result<Vec<TaskId>>>()?;
        let fixed = ["tasks", "k", "users", "excluded_users", "isolated_items"];
        let mut metrics = Vec::new();
        for k in order.iter().filter(|k| !fixed.contains(&k.as_str()) && !k.ends_with("_stderr")) {
            metrics.push(Metric { name: k.clone(), value: float(k)?, stderr: float(&format!("{k}_stderr"))? });
        }
        Ok(Self {
            tasks,
            k: num("k")?,
            users: num("users")?,
            excluded_users: num("excluded_users")?,
            isolated_items: num("isolated_items")?,
            metrics,
        })
    }

    /// `metric<TAB>value<TAB>stderr` with a header row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tvalue\tstderr\n");
        for m in &self.metrics {
            s.push_str(&format!("{}\t{}\t{}\n", m.name, m.value, m.stderr));
        }
        s
    }
}

/// One ablation variant: a task subset evaluated end to end.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub report: EvalReport,
}

pub fn ablation_variants() -> Vec<(String, Vec<TaskId>)> {
    let mut v: Vec<(String, Vec<TaskId>)> = TaskId::ALL.iter().map(|&t| (format!("only_{t}"), vec![t])).collect();
    for t in TaskId::ALL {
        v.push((format!("without_{t}"), TaskId::ALL.into_iter().filter(|&x| x != t).collect()));
    }
    v
}

pub fn ablation_tsv(rows: &[AblationRow], k: usize) -> String {
    let mut s = format!("variant\ttasks\tintrinsic_cosine\trecall@{k}\trecall@{k}_stderr\tndcg@{k}\tndcg@{k}_stderr\n");
    for r in rows {
        let tasks: Vec<&str> = r.report.tasks.iter().map(|t| t.as_str()).collect();
        let get = |n: String| r.report.metric(&n).map_or((f64::NAN, f64::NAN), |m| (m.value, m.stderr));
        let (rv, rs) = get(EvalReport::recall_name(k));
        let (nv, ns) = get(EvalReport::ndcg_name(k));
        s.push_str(&format!("{}\t{}\t{}\t{rv}\t{rs}\t{nv}\t{ns}\n", r.variant, tasks.join(","), r.report.intrinsic_mean()));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip() {
        let r = EvalReport {
            tasks: vec![TaskId::Rg, TaskId::Cp],
            k: 20,
            users: 10,
            excluded_users: 1,
            isolated_items: 0,
            metrics: vec![
                Metric { name: EvalReport::intrinsic_name(TaskId::Rg), value: 0.25, stderr: 0.01 },
                Metric { name: EvalReport::recall_name(20), value: 0.5, stderr: 0.1 },
                Metric { name: EvalReport::ndcg_name(20), value: 1.0 / 3.0, stderr: 0.0 },
            ],
        };
        assert_eq!(EvalReport::from_kv(&r.to_kv()).unwrap(), r);
        assert_eq!(r.to_tsv().lines().count(), 4);
        assert_eq!(ablation_variants().len(), 8);
    }
}
