//! Named-tensor parameter container and its on-disk checkpoint format.
//!
//! A checkpoint is a pair of files: `<path>` holds raw little-endian f64
//! values, and `<path>.manifest` is line-delimited `name<TAB>shape<TAB>offset`
//! with shape extents space-separated and offsets counted in values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A set of named parameter tensors backed by one flat f64 buffer.
///
/// Every entry is a contiguous slice of the buffer, so optimizers and the
/// finite-difference checker can treat the whole set as a single vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    index: BTreeMap<String, usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

impl ParamSet {
    pub fn new() -> Self {
        Self { entries: Vec::new(), index: BTreeMap::new(), data: Vec::new() }
    }

    /// Append a zero-initialized tensor; returns an error on duplicate names.
    pub fn add(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateId(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        if numel == 0 {
            return Err(Error::InvalidInput(format!("tensor '{name}' has a zero extent")));
        }
        let offset = self.data.len();
        self.data.resize(offset + numel, 0.0);
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), shape: shape.to_vec(), offset });
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn shape(&self, name: &str) -> Result<&[usize]> {
        let i = self.lookup(name)?;
        Ok(&self.entries[i].shape)
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        let i = self.lookup(name)?;
        let e = &self.entries[i];
        Ok(&self.data[e.offset..e.offset + numel(&e.shape)])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let i = self.lookup(name)?;
        let (offset, n) = {
            let e = &self.entries[i];
            (e.offset, numel(&e.shape))
        };
        Ok(&mut self.data[offset..offset + n])
    }

    /// The entire parameter vector, in declaration order.
    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// A same-layout set with all values zeroed, for accumulating gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.data.iter_mut().for_each(|v| *v = 0.0);
        z
    }

    /// True when both sets have identical layout.
    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries == other.entries
    }

    /// FNV-1a checksum over the exact bit pattern of every value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in &self.data {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut manifest = String::new();
        for e in &self.entries {
            let dims: Vec<String> = e.shape.iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("{}\t{}\t{}\n", e.name, dims.join(" "), e.offset));
        }
        fs::write(manifest_path(path), manifest)?;
        let mut blob = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, blob)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest = fs::read_to_string(manifest_path(path))?;
        let blob = fs::read(path)?;
        if blob.len() % 8 != 0 {
            return Err(Error::Format(format!("{}: blob length is not a multiple of 8", path.display())));
        }
        let data: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut set = Self { entries: Vec::new(), index: BTreeMap::new(), data };
        for (lineno, line) in manifest.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split('\t');
            let (name, dims, offset) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(Error::Format(format!("manifest line {} is malformed", lineno + 1))),
            };
            let shape: Vec<usize> = dims
                .split(' ')
                .map(|d| d.parse().map_err(|_| Error::Format(format!("bad extent '{d}'"))))
                .collect::<Result<_>>()?;
            let offset: usize =
                offset.parse().map_err(|_| Error::Format(format!("bad offset '{offset}'")))?;
            if offset + numel(&shape) > set.data.len() {
                return Err(Error::Format(format!("tensor '{name}' extends past blob end")));
            }
            if set.index.contains_key(name) {
                return Err(Error::DuplicateId(name.to_string()));
            }
            set.index.insert(name.to_string(), set.entries.len());
            set.entries.push(ParamEntry { name: name.to_string(), shape, offset });
        }
        Ok(set)
    }

    fn lookup(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown tensor '{name}'")))
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".manifest");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let mut set = ParamSet::new();
        set.add("a.w", &[2, 3]).unwrap();
        set.add("b", &[4]).unwrap();
        for (i, v) in set.flat_mut().iter_mut().enumerate() {
            *v = (i as f64) * 0.1 - 0.3;
        }
        set.save(&path).unwrap();
        let loaded = ParamSet::load(&path).unwrap();
        assert_eq!(set, loaded);
        assert_eq!(set.checksum(), loaded.checksum());
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut set = ParamSet::new();
        set.add("x", &[1]).unwrap();
        assert!(set.add("x", &[2]).is_err());
    }

    #[test]
    fn checksum_tracks_mutation() {
        let mut set = ParamSet::new();
        set.add("x", &[3]).unwrap();
        let before = set.checksum();
        set.get_mut("x").unwrap()[1] = 1.0;
        assert_ne!(before, set.checksum());
    }
}
