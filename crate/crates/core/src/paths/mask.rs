use super::walk::Path;
use crate::data::NodeRef;
use crate::error::{Error, Result};

/// One input position of a path as seen by the sequence encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Token {
    Node(NodeRef),
    Mask,
}

/// A path with one position hidden behind the mask token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedPath {
    pub path: Path,
    pub mask_pos: usize,
    pub original: NodeRef,
}

pub fn mask_path(path: &Path, pos: usize) -> Result<MaskedPath> {
    if pos >= path.len() {
        return Err(Error::invalid(format!("mask position {pos} outside path of length {}", path.len())));
    }
    Ok(MaskedPath {
        path: path.clone(),
        mask_pos: pos,
        original: path.nodes[pos],
    })
}

impl MaskedPath {
    pub fn tokens(&self) -> Vec<Token> {
        self.path
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &n)| if i == self.mask_pos { Token::Mask } else { Token::Node(n) })
            .collect()
    }

    pub fn unmask(&self) -> Path {
        let mut p = self.path.clone();
        p.nodes[self.mask_pos] = self.original;
        p
    }
}

pub fn plain_tokens(path: &Path) -> Vec<Token> {
    path.nodes.iter().map(|&n| Token::Node(n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two() -> Path {
        Path {
            nodes: vec![NodeRef::user(4), NodeRef::item(2)],
            origin: NodeRef::user(4),
            anchor: 0,
            short: false,
        }
    }

    #[test]
    fn mask_first_position() {
        let m = mask_path(&two(), 0).unwrap();
        assert_eq!(m.mask_pos, 0);
        assert_eq!(m.original, NodeRef::user(4));
        assert_eq!(m.tokens(), vec![Token::Mask, Token::Node(NodeRef::item(2))]);
    }

    #[test]
    fn unmask_restores() {
        let m = mask_path(&two(), 1).unwrap();
        assert_eq!(m.unmask(), two());
    }

    #[test]
    fn masking_twice_is_idempotent() {
        let m = mask_path(&two(), 1).unwrap();
        let again = mask_path(&m.unmask(), 1).unwrap();
        assert_eq!(again.tokens(), m.tokens());
        let mut rendered = m.path.clone();
        rendered.nodes[1] = NodeRef::item(99);
        assert_eq!(mask_path(&rendered, 1).unwrap().tokens()[1], Token::Mask);
    }

    #[test]
    fn out_of_range() {
        assert!(mask_path(&two(), 2).is_err());
    }
}
