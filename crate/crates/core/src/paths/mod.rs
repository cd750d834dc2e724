//! User-item random-walk paths, masking, and the deletion/substitution
//! augmentations for paths and subgraphs.

mod augment;
mod mask;
mod walk;

pub use augment::{augment_path, augment_subgraph, AugmentOp};
pub use mask::{mask_path, plain_tokens, MaskedPath, Token};
pub use walk::{generate_paths, generate_positioned_paths, Path, TreeAdjacency, RETRY_CAP};
