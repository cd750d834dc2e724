use rand::Rng;

use super::{param, xavier, Dims, Init};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Single-head self-attention over a node's first-order neighbor embeddings,
/// followed by a mean over rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaAggregator {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl MetaAggregator {
    pub(crate) fn new<R: Rng>(store: &mut ParamStore, init: &mut Init<'_, R>, prefix: &str, dims: &Dims) -> Result<Self> {
        let d = dims.d;
        let r = xavier(d, d);
        Ok(Self {
            wq: param(store, init, format!("{prefix}meta.wq"), vec![d, d], r)?,
            wk: param(store, init, format!("{prefix}meta.wk"), vec![d, d], r)?,
            wv: param(store, init, format!("{prefix}meta.wv"), vec![d, d], r)?,
        })
    }

    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, dims: &Dims, rng: &mut R) -> Result<Self> {
        Self::new(store, &mut Init::Fresh(rng), prefix, dims)
    }

    pub fn bind(store: &mut ParamStore, prefix: &str, dims: &Dims) -> Result<Self> {
        Self::new::<rand_chacha::ChaCha8Rng>(store, &mut Init::Bind, prefix, dims)
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.wq, self.wk, self.wv]
    }

    /// `neighbors` is a `K x d` matrix of initial embeddings.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, neighbors: Var) -> Result<Var> {
        if tape.shape(neighbors).first().copied().unwrap_or(0) == 0 {
            return Err(Error::invalid("meta aggregator needs at least one neighbor"));
        }
        let wq = tape.param(store, self.wq)?;
        let wk = tape.param(store, self.wk)?;
        let wv = tape.param(store, self.wv)?;
        let q = tape.matmul(neighbors, wq)?;
        let k = tape.matmul(neighbors, wk)?;
        let v = tape.matmul(neighbors, wv)?;
        let (h, _) = tape.scaled_dot_attention(q, k, v)?;
        tape.mean_rows(h)
    }

    /// Forward pass on plain values, for building frozen meta embeddings.
    pub fn eval(&self, store: &ParamStore, rows: &[&[f64]]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Err(Error::invalid("meta aggregator needs at least one neighbor"));
        }
        let d = rows[0].len();
        let mut tape = Tape::new();
        let m = tape.constant(crate::autodiff::Tensor::matrix(rows.len(), d, rows.concat())?)?;
        let out = self.forward(&mut tape, store, m)?;
        Ok(tape.value(out).data().to_vec())
    }
}
