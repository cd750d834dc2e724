//! Little-endian binary checkpoint format.
//!
//! ```text
//! magic        8 bytes   "CSTCKPT\0"
//! version      u32       1
//! fingerprint  u64       config fingerprint
//! flags        u32       bit 0: partial (some section failed to train)
//! sections     u32       section count
//! per section (ascending name order):
//!   name       u32 length + UTF-8 bytes
//!   params     u32 count
//!   per param (ascending name order):
//!     name     u32 length + UTF-8 bytes
//!     ndim     u32
//!     dims     u64 x ndim
//!     values   f64 x product(dims)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io::atomic_write;

pub const MAGIC: &[u8; 8] = b"CSTCKPT\0";
pub const VERSION: u32 = 1;
const FLAG_PARTIAL: u32 = 1;

pub type Section = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: u64,
    pub partial: bool,
    pub sections: BTreeMap<String, Section>,
}

impl Checkpoint {
    pub fn new(fingerprint: u64) -> Self {
        Self {
            fingerprint,
            ..Self::default()
        }
    }

    pub fn insert_store(&mut self, section: impl Into<String>, store: &ParamStore) {
        let sec = store
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        self.sections.insert(section.into(), sec);
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("no section `{name}`")))
    }

    /// Overwrites the values of `store` with the tensors of `section`.
    /// Every parameter of the store must be present with a matching shape.
    pub fn load_into(&self, section: &str, store: &mut ParamStore) -> Result<()> {
        let sec = self.section(section)?;
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let t = sec
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("section `{section}` lacks `{name}`")))?;
            if t.shape() != store.value(id).shape() {
                return Err(Error::Shape {
                    op: "load_checkpoint",
                    lhs: store.value(id).shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            *store.value_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        let flags = if self.partial { FLAG_PARTIAL } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, sec) in &self.sections {
            put_str(&mut out, name);
            out.extend_from_slice(&(sec.len() as u32).to_le_bytes());
            for (pname, t) in sec {
                put_str(&mut out, pname);
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let fingerprint = r.u64()?;
        let flags = r.u32()?;
        let n_sections = r.u32()?;
        let mut sections = BTreeMap::new();
        for _ in 0..n_sections {
            let name = r.string()?;
            let n_params = r.u32()?;
            let mut sec = Section::new();
            for _ in 0..n_params {
                let pname = r.string()?;
                let ndim = r.u32()? as usize;
                let mut shape = Vec::with_capacity(ndim);
                for _ in 0..ndim {
                    shape.push(r.u64()? as usize);
                }
                let numel: usize = shape.iter().product();
                let mut data = Vec::with_capacity(numel);
                for _ in 0..numel {
                    data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
                }
                sec.insert(pname, Tensor::new(shape, data)?);
            }
            sections.insert(name, sec);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            fingerprint,
            partial: flags & FLAG_PARTIAL != 0,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}
