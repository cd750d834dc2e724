use rand::Rng;

use super::{param, xavier, Dims, EmbeddingTable, Init};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::Subgraph;
use crate::error::{Error, Result};
use crate::sampling::NodeVectors;

/// Enhanced graph convolution. `conv[l]` is `d x 3d` and maps
/// `meta || previous || mean(children)` to the next embedding; `out` is the
/// final `d x d` transform applied to the mean of the refined first-order
/// neighbors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GnnEncoder {
    pub conv: Vec<ParamId>,
    pub out: ParamId,
}

impl GnnEncoder {
    pub(crate) fn new<R: Rng>(store: &mut ParamStore, init: &mut Init<'_, R>, prefix: &str, dims: &Dims) -> Result<Self> {
        let d = dims.d;
        let mut conv = Vec::new();
        for l in 1..dims.layers {
            conv.push(param(store, init, format!("{prefix}gnn.w{l}"), vec![d, 3 * d], xavier(3 * d, d))?);
        }
        let out = param(store, init, format!("{prefix}gnn.w{}", dims.layers), vec![d, d], xavier(d, d))?;
        Ok(Self { conv, out })
    }

    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, dims: &Dims, rng: &mut R) -> Result<Self> {
        Self::new(store, &mut Init::Fresh(rng), prefix, dims)
    }

    pub fn bind(store: &mut ParamStore, prefix: &str, dims: &Dims) -> Result<Self> {
        Self::new::<rand_chacha::ChaCha8Rng>(store, &mut Init::Bind, prefix, dims)
    }

    pub fn layers(&self) -> usize {
        self.conv.len() + 1
    }

    /// Predicted embedding of `sub.target`. Layers deeper than `L` are
    /// ignored; a node without children contributes a zero neighbor mean.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, table: &EmbeddingTable, sub: &Subgraph, meta: &NodeVectors) -> Result<Var> {
        let big_l = self.layers();
        if sub.layer(1).is_empty() {
            return Err(Error::Isolated(sub.target.to_string()));
        }
        let d = store.value(self.out).cols();
        let mut h: Vec<Option<Var>> = Vec::with_capacity(big_l + 2);
        h.push(None);
        for j in 1..=big_l {
            let layer = sub.layer(j);
            if layer.is_empty() {
                h.push(None);
                continue;
            }
            let rows = layer.iter().map(|n| table.require_row(n.node)).collect::<Result<Vec<_>>>()?;
            h.push(Some(tape.gather_rows(store, table.id, &rows)?));
        }
        h.push(None);

        for step in 1..big_l {
            let w = tape.param(store, self.conv[step - 1])?;
            let wt = tape.transpose(w)?;
            let mut next = h.clone();
            for j in 1..=big_l - step {
                let Some(hj) = h[j] else { continue };
                let layer = sub.layer(j);
                let n = layer.len();
                let mut m = Vec::with_capacity(n * d);
                for node in layer {
                    m.extend_from_slice(meta.require(node.node)?);
                }
                let m = tape.constant(Tensor::matrix(n, d, m)?)?;
                let nb = match h[j + 1] {
                    Some(hc) => {
                        let children = sub.layer(j + 1);
                        let mut counts = vec![0usize; n];
                        for c in children {
                            counts[c.parent] += 1;
                        }
                        let mut avg = vec![0.0; n * children.len()];
                        for (ci, c) in children.iter().enumerate() {
                            avg[c.parent * children.len() + ci] = 1.0 / counts[c.parent] as f64;
                        }
                        let avg = tape.constant(Tensor::matrix(n, children.len(), avg)?)?;
                        tape.matmul(avg, hc)?
                    }
                    None => tape.constant(Tensor::zeros(vec![n, d]))?,
                };
                let x = tape.concat_cols(&[m, hj, nb])?;
                let y = tape.matmul(x, wt)?;
                next[j] = Some(tape.tanh(y)?);
            }
            h = next;
        }

        let first = h[1].expect("layer 1 checked non-empty");
        let mean = tape.mean_rows(first)?;
        let w = tape.param(store, self.out)?;
        let y = tape.matvec(w, mean)?;
        tape.tanh(y)
    }
}
