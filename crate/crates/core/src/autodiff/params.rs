//! Named parameter tensors and the binary checkpoint format.
//!
//! Checkpoint layout: the magic bytes `MMEN1`, then for every tensor in
//! insertion order: name length (u64), UTF-8 name, rank (u64), each dim
//! (u64), then the `f64` payload in row-major order. All integers and
//! floats are little-endian.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::tape::Mat;
use crate::error::{MmenError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MMEN1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Mat>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(MmenError::InvalidParam(format!("duplicate parameter `{name}`")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(self.names.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Mat] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.iter().copied()).collect()
    }

    /// Overwrites every entry from a flat view of length [`numel`](Self::numel).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(MmenError::Shape {
                op: "set_flat",
                detail: format!("{} values for {} entries", flat.len(), self.numel()),
            });
        }
        let mut it = flat.iter();
        for t in &mut self.tensors {
            for x in t.iter_mut() {
                *x = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Mutable access to the `k`-th entry of the flat view.
    pub fn flat_entry_mut(&mut self, mut k: usize) -> Option<&mut f64> {
        for t in &mut self.tensors {
            if k < t.len() {
                let cols = t.ncols();
                return t.get_mut((k / cols, k % cols));
            }
            k -= t.len();
        }
        None
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.numel() * 8 + self.len() * 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u64.to_le_bytes());
            out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| MmenError::Data(format!("corrupt checkpoint: {msg}"));
        if bytes.len() < 5 || &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(bad("missing MMEN1 magic"));
        }
        let mut cur = Cursor { bytes, pos: 5 };
        let mut store = ParamStore::new();
        while cur.pos < bytes.len() {
            let len = cur.u64()? as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| bad("tensor name is not UTF-8"))?
                .to_string();
            let rank = cur.u64()? as usize;
            let dims: Vec<usize> = (0..rank)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<_>>()?;
            let (rows, cols) = match dims.as_slice() {
                [] => (1, 1),
                [n] => (1, *n),
                [r, c] => (*r, *c),
                _ => return Err(bad(&format!("tensor `{name}` has rank {rank}"))),
            };
            let bytes_needed = rows
                .checked_mul(cols)
                .and_then(|c| c.checked_mul(8))
                .ok_or_else(|| bad("dims overflow"))?;
            let data: Vec<f64> = cur
                .take(bytes_needed)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Mat::from_shape_vec((rows, cols), data).expect("length matches dims");
            store.insert(name, t)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| MmenError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| MmenError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| MmenError::Data("corrupt checkpoint: truncated".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
