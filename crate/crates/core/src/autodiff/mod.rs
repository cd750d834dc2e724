//! Reverse-mode differentiation, parameters, optimizers and checkpoints.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, Section};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, ParamCheck};
pub use optim::Optimizer;
pub use params::{Param, ParamId, ParamStore};
pub use tape::{ParamGrad, Tape, Var};
pub use tensor::{cosine, dot, norm, Tensor, COSINE_EPS};
