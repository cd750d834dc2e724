use crate::error::Result;
use crate::pretrain::{timed_epochs, PretrainData, PretrainSettings, TaskId};
use crate::sampling::SamplerKind;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub sampler: SamplerKind,
    pub epochs: usize,
    pub sample_ms_mean: f64,
    pub sample_ms_std: f64,
    pub train_ms_mean: f64,
    pub train_ms_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Per-epoch sampling and training wall time of the subgraph reconstruction
/// task under each sampler.
pub fn sampling_benchmark(data: &PretrainData<'_>, s: &PretrainSettings, samplers: &[SamplerKind], epochs: usize) -> Result<Vec<BenchRow>> {
    let epochs = epochs.max(1);
    samplers
        .iter()
        .map(|&sampler| {
            let mut cfg = s.clone();
            cfg.sampler = sampler;
            let times = timed_epochs(TaskId::Rg, data, &cfg, epochs)?;
            let (sm, ss) = mean_std(&times.iter().map(|t| t.0).collect::<Vec<_>>());
            let (tm, ts) = mean_std(&times.iter().map(|t| t.1).collect::<Vec<_>>());
            Ok(BenchRow { sampler, epochs, sample_ms_mean: sm, sample_ms_std: ss, train_ms_mean: tm, train_ms_std: ts })
        })
        .collect()
}
