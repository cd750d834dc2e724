//! Meta aggregator, GNN encoder, Transformer path encoder and projection head.
//!
//! Every encoder owns named parameters in a [`ParamStore`]. `register` creates
//! them with fresh values, `bind` looks up existing ones (after loading a
//! checkpoint) by the same names.

mod gnn;
mod meta;
mod projection;
mod transformer;

use rand::Rng;

pub use gnn::GnnEncoder;
pub use meta::MetaAggregator;
pub use projection::ProjectionHead;
pub use transformer::{TransformerEncoder, TransformerOutput};

use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::data::{NodeRef, Side};
use crate::error::{Error, Result};
use crate::sampling::NodeVectors;

/// Sizes shared by all encoders of one model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub d: usize,
    pub num_users: usize,
    pub num_items: usize,
    /// GNN layer count `L`.
    pub layers: usize,
    /// Positional table length.
    pub max_len: usize,
    pub heads: usize,
    pub blocks: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.layers == 0 || self.max_len == 0 || self.heads == 0 {
            return Err(Error::Config("d, L, T and heads must all be >= 1".into()));
        }
        if !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d = {} is not divisible by {} heads", self.d, self.heads)));
        }
        Ok(())
    }
}

/// Registers new parameters or binds to existing ones by name.
pub(crate) enum Init<'a, R: Rng> {
    Fresh(&'a mut R),
    Bind,
}

pub(crate) fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn param<R: Rng>(store: &mut ParamStore, init: &mut Init<'_, R>, name: String, shape: Vec<usize>, range: f64) -> Result<ParamId> {
    match init {
        Init::Fresh(rng) => {
            if range == 0.0 {
                store.add(name, Tensor::zeros(shape))
            } else {
                store.add_uniform(name, shape, range, *rng)
            }
        }
        Init::Bind => {
            let id = store.id(&name)?;
            if store.value(id).shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "bind",
                    lhs: store.value(id).shape().to_vec(),
                    rhs: shape,
                });
            }
            Ok(id)
        }
    }
}

/// One table holding users in rows `0..|U|` and items in rows `|U|..|U|+|I|`,
/// so user and item tokens share one vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub num_users: usize,
    pub num_items: usize,
}

pub const EMBED_RANGE: f64 = 0.1;

impl EmbeddingTable {
    pub(crate) fn new<R: Rng>(store: &mut ParamStore, init: &mut Init<'_, R>, prefix: &str, dims: &Dims) -> Result<Self> {
        let rows = dims.num_users + dims.num_items;
        let id = param(store, init, format!("{prefix}emb"), vec![rows, dims.d], EMBED_RANGE)?;
        Ok(Self {
            id,
            num_users: dims.num_users,
            num_items: dims.num_items,
        })
    }

    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, dims: &Dims, rng: &mut R) -> Result<Self> {
        Self::new(store, &mut Init::Fresh(rng), prefix, dims)
    }

    pub fn bind(store: &mut ParamStore, prefix: &str, dims: &Dims) -> Result<Self> {
        Self::new::<rand_chacha::ChaCha8Rng>(store, &mut Init::Bind, prefix, dims)
    }

    pub fn row(&self, node: NodeRef) -> Option<usize> {
        let id = node.id as usize;
        match node.side {
            Side::User if id < self.num_users => Some(id),
            Side::Item if id < self.num_items => Some(self.num_users + id),
            _ => None,
        }
    }

    pub fn require_row(&self, node: NodeRef) -> Result<usize> {
        self.row(node).ok_or_else(|| Error::MissingEmbedding(node.to_string()))
    }

    /// Copies the table into per-side vectors.
    pub fn snapshot(&self, store: &ParamStore) -> NodeVectors {
        let t = store.value(self.id);
        let d = t.cols();
        let (u, i) = t.data().split_at(self.num_users * d);
        NodeVectors {
            users: Tensor::matrix(self.num_users, d, u.to_vec()).expect("table rows"),
            items: Tensor::matrix(self.num_items, d, i.to_vec()).expect("table rows"),
        }
    }
}
