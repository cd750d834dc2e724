use rand::Rng;

use super::{param, xavier, Dims, EmbeddingTable, Init, EMBED_RANGE};
use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::paths::Token;

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ff1: ParamId,
    pub fb1: ParamId,
    pub ff2: ParamId,
    pub fb2: ParamId,
}

/// Pre-norm Transformer encoder over user/item token sequences. Tokens are
/// rows of the task's [`EmbeddingTable`]; the mask token and the positional
/// table are separate learned parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransformerEncoder {
    pub pos: ParamId,
    pub mask: ParamId,
    pub blocks: Vec<Block>,
    pub heads: usize,
}

pub struct TransformerOutput {
    /// `n x d` hidden states.
    pub hidden: Var,
    /// Attention weights, one `n x n` matrix per block and head.
    pub attention: Vec<Var>,
}

impl TransformerEncoder {
    pub(crate) fn new<R: Rng>(store: &mut ParamStore, init: &mut Init<'_, R>, prefix: &str, dims: &Dims) -> Result<Self> {
        dims.validate()?;
        let d = dims.d;
        let ff = 2 * d;
        let pos = param(store, init, format!("{prefix}tr.pos"), vec![dims.max_len, d], EMBED_RANGE)?;
        let mask = param(store, init, format!("{prefix}tr.mask"), vec![d], EMBED_RANGE)?;
        let mut blocks = Vec::new();
        for b in 0..dims.blocks {
            let p = format!("{prefix}tr.b{b}.");
            let r = xavier(d, d);
            blocks.push(Block {
                wq: param(store, init, format!("{p}wq"), vec![d, d], r)?,
                wk: param(store, init, format!("{p}wk"), vec![d, d], r)?,
                wv: param(store, init, format!("{p}wv"), vec![d, d], r)?,
                wo: param(store, init, format!("{p}wo"), vec![d, d], r)?,
                ff1: param(store, init, format!("{p}ff1"), vec![d, ff], xavier(d, ff))?,
                fb1: param(store, init, format!("{p}fb1"), vec![ff], 0.0)?,
                ff2: param(store, init, format!("{p}ff2"), vec![ff, d], xavier(ff, d))?,
                fb2: param(store, init, format!("{p}fb2"), vec![d], 0.0)?,
            });
        }
        Ok(Self {
            pos,
            mask,
            blocks,
            heads: dims.heads,
        })
    }

    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, dims: &Dims, rng: &mut R) -> Result<Self> {
        Self::new(store, &mut Init::Fresh(rng), prefix, dims)
    }

    pub fn bind(store: &mut ParamStore, prefix: &str, dims: &Dims) -> Result<Self> {
        Self::new::<rand_chacha::ChaCha8Rng>(store, &mut Init::Bind, prefix, dims)
    }

    pub fn max_len(&self, store: &ParamStore) -> usize {
        store.value(self.pos).rows()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, table: &EmbeddingTable, tokens: &[Token]) -> Result<TransformerOutput> {
        let n = tokens.len();
        if n == 0 || n > self.max_len(store) {
            return Err(Error::invalid(format!(
                "sequence length {n} outside 1..={}",
                self.max_len(store)
            )));
        }
        let d = store.value(self.pos).cols();
        let mut rows = Vec::with_capacity(n);
        for tok in tokens {
            rows.push(match tok {
                Token::Mask => tape.param(store, self.mask)?,
                Token::Node(node) => {
                    let r = table.row(*node).ok_or(Error::UnknownToken(node.id as usize))?;
                    tape.embed(store, table.id, r)?
                }
            });
        }
        let x0 = tape.stack_rows(&rows)?;
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(store, self.pos, &positions)?;
        let mut x = tape.add(x0, pos)?;

        let dh = d / self.heads;
        let mut attention = Vec::new();
        for b in &self.blocks {
            let y = tape.layer_norm_rows(x, LN_EPS)?;
            let wq = tape.param(store, b.wq)?;
            let wk = tape.param(store, b.wk)?;
            let wv = tape.param(store, b.wv)?;
            let q = tape.matmul(y, wq)?;
            let k = tape.matmul(y, wk)?;
            let v = tape.matmul(y, wv)?;
            let mut outs = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let (qh, kh, vh) = if self.heads == 1 {
                    (q, k, v)
                } else {
                    (
                        tape.slice_cols(q, h * dh, (h + 1) * dh)?,
                        tape.slice_cols(k, h * dh, (h + 1) * dh)?,
                        tape.slice_cols(v, h * dh, (h + 1) * dh)?,
                    )
                };
                let (o, w) = tape.scaled_dot_attention(qh, kh, vh)?;
                outs.push(o);
                attention.push(w);
            }
            let att = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
            let wo = tape.param(store, b.wo)?;
            let att = tape.matmul(att, wo)?;
            x = tape.add(x, att)?;

            let y = tape.layer_norm_rows(x, LN_EPS)?;
            let ff1 = tape.param(store, b.ff1)?;
            let fb1 = tape.param(store, b.fb1)?;
            let ff2 = tape.param(store, b.ff2)?;
            let fb2 = tape.param(store, b.fb2)?;
            let f = tape.matmul(y, ff1)?;
            let f = tape.add_row_broadcast(f, fb1)?;
            let f = tape.gelu(f)?;
            let f = tape.matmul(f, ff2)?;
            let f = tape.add_row_broadcast(f, fb2)?;
            x = tape.add(x, f)?;
        }
        let hidden = tape.layer_norm_rows(x, LN_EPS)?;
        Ok(TransformerOutput { hidden, attention })
    }

    /// Hidden state at one position.
    pub fn read_out(&self, tape: &mut Tape, store: &ParamStore, table: &EmbeddingTable, tokens: &[Token], pos: usize) -> Result<Var> {
        let out = self.forward(tape, store, table, tokens)?;
        tape.row(out.hidden, pos)
    }
}
