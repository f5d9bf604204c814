//! Named parameter storage and the `GDPW` parameter file.
//!
//! File layout, all little-endian: the magic `GDPW`, a `u32` version (1), a
//! `u32` array count, then per array a `u32` name length, the UTF-8 name,
//! `u32` rows, `u32` cols, a `u64` element count and the `f64` payload.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tape::{Gradients, Tape, Tensor, Var};

pub const PARAM_MAGIC: &[u8; 4] = b"GDPW";
pub const PARAM_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        let name = name.into();
        if let Some(i) = self.index(&name) {
            self.entries[i].1 = t;
            return i;
        }
        self.entries.push((name, t));
        self.entries.len() - 1
    }

    /// Inserts a `rows × cols` tensor drawn from `N(0, std²)`.
    pub fn insert_normal<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut R) -> usize {
        let t = if std == 0.0 {
            Tensor::zeros(rows, cols)
        } else {
            let dist = Normal::new(0.0, std).expect("finite std");
            Tensor { rows, cols, data: (0..rows * cols).map(|_| dist.sample(rng)).collect() }
        };
        self.insert(name, t)
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.entries[i].1)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Format(format!("missing parameter array `{name}`")))
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.scalar_count() {
            return Err(Error::DimensionMismatch(flat.len(), self.scalar_count()));
        }
        let mut off = 0;
        for (_, t) in &mut self.entries {
            let n = t.len();
            t.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Zero tensors shaped like every entry, for gradient accumulation.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.entries.iter().map(|(_, t)| Tensor::zeros(t.rows, t.cols)).collect()
    }

    /// Copies every entry of `other` in under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &ParamStore) {
        for (n, t) in other.iter() {
            self.insert(format!("{prefix}{n}"), t.clone());
        }
    }

    /// The entries whose names start with `prefix`, with the prefix removed.
    pub fn extract_prefixed(&self, prefix: &str) -> ParamStore {
        let mut out = ParamStore::new();
        for (n, t) in self.iter() {
            if let Some(rest) = n.strip_prefix(prefix) {
                out.insert(rest, t.clone());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.scalar_count() * 8);
        out.extend_from_slice(PARAM_MAGIC);
        out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols as u32).to_le_bytes());
            out.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != PARAM_MAGIC {
            return Err(Error::Format("bad parameter file magic".into()));
        }
        let version = r.u32()?;
        if version != PARAM_VERSION {
            return Err(Error::Format(format!("unsupported parameter file version {version}")));
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = r.u64()? as usize;
            if n != rows * cols {
                return Err(Error::Format(format!("array `{name}`: {n} values for {rows}x{cols}")));
            }
            let data = r
                .take(n.checked_mul(8).ok_or_else(|| Error::Format("array too large".into()))?)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.entries.push((name, Tensor { rows, cols, data }));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after parameter arrays".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ParamStore::from_bytes(&fs::read(path)?)
    }
}

/// A parameter store recorded as leaves on a tape.
pub struct BoundParams<'a> {
    store: &'a ParamStore,
    vars: Vec<Var>,
}

impl ParamStore {
    pub fn bind<'a>(&'a self, tape: &mut Tape) -> BoundParams<'a> {
        let vars = self.entries.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        BoundParams { store: self, vars }
    }
}

impl BoundParams<'_> {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.store
            .index(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::BadConfig(format!("unknown parameter `{name}`")))
    }

    /// Gradients for every entry, zero where the loss did not reach it.
    pub fn collect(&self, grads: &mut Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, v)| {
                grads.take(*v).unwrap_or_else(|| {
                    let t = self.store.tensor(i);
                    Tensor::zeros(t.rows, t.cols)
                })
            })
            .collect()
    }
}

/// Adds `src` into `dst` entry by entry.
pub fn accumulate(dst: &mut [Tensor], src: &[Tensor], weight: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (a, b) in d.data.iter_mut().zip(&s.data) {
            *a += weight * b;
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("truncated parameter file".into()));
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
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_roundtrip() {
        let mut s = ParamStore::new();
        s.insert("a.w", Tensor::from_vec(2, 2, vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE]).unwrap());
        s.insert("bias", Tensor::row_vector(vec![0.125]));
        let bytes = s.to_bytes();
        assert_eq!(&bytes[..4], b"GDPW");
        let back = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ParamStore::from_bytes(&bad).is_err());
    }

    #[test]
    fn flat_view() {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::row_vector(vec![1.0, 2.0]));
        s.insert("y", Tensor::row_vector(vec![3.0]));
        assert_eq!(s.flatten(), vec![1.0, 2.0, 3.0]);
        s.set_flat(&[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(s.get("y").unwrap().data, vec![6.0]);
        assert!(s.set_flat(&[1.0]).is_err());
    }
}
