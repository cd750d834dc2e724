use rand::Rng;

use super::{param, xavier, Dims, Init};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// `z = W2 tanh(W1 x + b1) + b2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProjectionHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl ProjectionHead {
    pub(crate) fn new<R: Rng>(store: &mut ParamStore, init: &mut Init<'_, R>, prefix: &str, dims: &Dims) -> Result<Self> {
        let d = dims.d;
        Ok(Self {
            w1: param(store, init, format!("{prefix}head.w1"), vec![d, d], xavier(d, d))?,
            b1: param(store, init, format!("{prefix}head.b1"), vec![d], 0.0)?,
            w2: param(store, init, format!("{prefix}head.w2"), vec![d, d], xavier(d, d))?,
            b2: param(store, init, format!("{prefix}head.b2"), vec![d], 0.0)?,
        })
    }

    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, dims: &Dims, rng: &mut R) -> Result<Self> {
        Self::new(store, &mut Init::Fresh(rng), prefix, dims)
    }

    pub fn bind(store: &mut ParamStore, prefix: &str, dims: &Dims) -> Result<Self> {
        Self::new::<rand_chacha::ChaCha8Rng>(store, &mut Init::Bind, prefix, dims)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w1 = tape.param(store, self.w1)?;
        let b1 = tape.param(store, self.b1)?;
        let w2 = tape.param(store, self.w2)?;
        let b2 = tape.param(store, self.b2)?;
        let h = tape.matvec(w1, x)?;
        let h = tape.add(h, b1)?;
        let h = tape.tanh(h)?;
        let z = tape.matvec(w2, h)?;
        tape.add(z, b2)
    }
}
