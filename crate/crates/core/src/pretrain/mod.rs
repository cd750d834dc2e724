//! Ground-truth embeddings, the four pretext tasks and their training loops.

mod ground_truth;
mod losses;
mod model;
mod train;

use std::fmt;
use std::str::FromStr;

pub use ground_truth::{train_ground_truth, GroundTruthSettings};
pub use losses::{
    bpr_loss, loss_cg, loss_contrastive, loss_cp, loss_rg, loss_rp, reconstruction_loss,
};
pub use model::{build_context, meta_table, MetaInput, NodeContext, TaskModel};
pub(crate) use train::parallel_grads;
pub use train::{
    augment_path_views, augment_subgraph_views, mask_targets, predict_targets, pretrain_all, sample_contexts,
    timed_epochs, train_task, EpochLog, PretrainData, PretrainOutcome, PretrainSettings, Target, TaskRun,
};

use crate::error::{Error, Result};

/// The four pretext tasks: reconstruction and contrastive learning, each with
/// a GNN over subgraphs and a Transformer over paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskId {
    Rg,
    Cg,
    Rp,
    Cp,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId::Rg, TaskId::Cg, TaskId::Rp, TaskId::Cp];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Rg => "Rg",
            TaskId::Cg => "Cg",
            TaskId::Rp => "Rp",
            TaskId::Cp => "Cp",
        }
    }

    pub fn uses_gnn(self) -> bool {
        matches!(self, TaskId::Rg | TaskId::Cg)
    }

    pub fn is_contrastive(self) -> bool {
        matches!(self, TaskId::Cg | TaskId::Cp)
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Rg" => Ok(TaskId::Rg),
            "Cg" => Ok(TaskId::Cg),
            "Rp" => Ok(TaskId::Rp),
            "Cp" => Ok(TaskId::Cp),
            other => Err(Error::Config(format!("unknown task `{other}` (Rg|Cg|Rp|Cp)"))),
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
