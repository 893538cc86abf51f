//! Persistent embedding store with exact top-k retrieval.
//!
//! On-disk layout: a fixed 32-byte header (magic `MRWB`, u32 version,
//! u32 dimension, u64 count, u32 encoding tag, padding) followed by
//! little-endian f32 rows. Ids and channels live in a `<store>.ids`
//! sidecar, one `id<TAB>channel` line per row in row order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, l2_norm};

const MAGIC: &[u8; 4] = b"MRWB";
const VERSION: u32 = 1;
const ENCODING_F32: u32 = 1;
const HEADER_LEN: usize = 32;

/// Which encoder produced a stored vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Action,
    Object,
    TextPredicate,
    TextArgument,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Channel::Action => "action",
            Channel::Object => "object",
            Channel::TextPredicate => "text-predicate",
            Channel::TextArgument => "text-argument",
        };
        f.write_str(s)
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "action" => Ok(Channel::Action),
            "object" => Ok(Channel::Object),
            "text-predicate" => Ok(Channel::TextPredicate),
            "text-argument" => Ok(Channel::TextArgument),
            other => Err(Error::Format(format!("unknown channel '{other}'"))),
        }
    }
}

/// An id plus a unit-norm feature vector.
#[derive(Debug, Clone)]
pub struct EmbeddingRecord {
    pub id: String,
    pub channel: Channel,
    pub vector: Vec<f64>,
}

/// Scoring strategy used by [`Store::top_k`].
pub trait Scorer {
    fn score(&self, record: &EmbeddingRecord) -> Result<f64>;
}

/// Raw cosine similarity against a fixed query vector.
pub struct CosineScorer<'a> {
    pub query: &'a [f64],
}

impl Scorer for CosineScorer<'_> {
    fn score(&self, record: &EmbeddingRecord) -> Result<f64> {
        cosine_similarity(self.query, &record.vector)
    }
}

/// Append-only store of embedding records.
pub struct Store {
    path: PathBuf,
    dimension: usize,
    records: Vec<EmbeddingRecord>,
    index: BTreeMap<String, usize>,
}

impl Store {
    /// Create an empty store; fails if `path` already holds a store with a
    /// different header.
    pub fn create(path: &Path, dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidInput("store dimension must be >= 1".into()));
        }
        if path.exists() {
            let existing = Self::open(path)?;
            if existing.dimension != dimension {
                return Err(Error::Format(format!(
                    "existing store at {} has dimension {}, requested {}",
                    path.display(),
                    existing.dimension,
                    dimension
                )));
            }
            return Ok(existing);
        }
        let store = Self {
            path: path.to_path_buf(),
            dimension,
            records: Vec::new(),
            index: BTreeMap::new(),
        };
        let mut file = File::create(path)?;
        file.write_all(&store.header_bytes())?;
        File::create(ids_path(path))?;
        Ok(store)
    }

    pub fn open(path: &Path) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut header = [0u8; HEADER_LEN];
        file.read_exact(&mut header)
            .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
        if &header[0..4] != MAGIC {
            return Err(Error::Format(format!("{}: bad magic", path.display())));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported store version {version}")));
        }
        let dimension = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
        let encoding = u32::from_le_bytes(header[20..24].try_into().unwrap());
        if dimension == 0 {
            return Err(Error::Format("store header has dimension 0".into()));
        }
        if encoding != ENCODING_F32 {
            return Err(Error::Format(format!("unsupported encoding tag {encoding}")));
        }
        let mut rows = Vec::new();
        file.read_to_end(&mut rows)?;
        if rows.len() != count * dimension * 4 {
            return Err(Error::Format(format!(
                "store body holds {} bytes, header promises {} rows of dimension {}",
                rows.len(),
                count,
                dimension
            )));
        }
        let ids_text = std::fs::read_to_string(ids_path(path))?;
        let mut records = Vec::with_capacity(count);
        let mut index = BTreeMap::new();
        let mut lines = ids_text.lines();
        for row in 0..count {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("ids sidecar ends before row {row}")))?;
            let (id, channel) = match line.split_once('\t') {
                Some((id, ch)) => (id.to_string(), ch.parse()?),
                None => return Err(Error::Format(format!("ids line {} lacks a channel", row + 1))),
            };
            let base = row * dimension * 4;
            let vector: Vec<f64> = (0..dimension)
                .map(|j| {
                    let b = &rows[base + j * 4..base + j * 4 + 4];
                    f32::from_le_bytes(b.try_into().unwrap()) as f64
                })
                .collect();
            if index.insert(id.clone(), row).is_some() {
                return Err(Error::DuplicateId(id));
            }
            records.push(EmbeddingRecord { id, channel, vector });
        }
        Ok(Self { path: path.to_path_buf(), dimension, records, index })
    }

    /// Append a record, persisting it immediately. Returns true when the
    /// input vector was not unit-norm and had to be normalized.
    pub fn append(&mut self, mut record: EmbeddingRecord) -> Result<bool> {
        if record.id.len() > 256 {
            return Err(Error::InvalidInput(format!("id '{}' exceeds 256 bytes", &record.id[..32])));
        }
        if record.id.contains('\t') || record.id.contains('\n') {
            return Err(Error::InvalidInput("id must not contain tab or newline".into()));
        }
        if record.vector.len() != self.dimension {
            return Err(Error::InvalidInput(format!(
                "record dimension {} does not match store dimension {}",
                record.vector.len(),
                self.dimension
            )));
        }
        if self.index.contains_key(&record.id) {
            return Err(Error::DuplicateId(record.id));
        }
        let norm = l2_norm(&record.vector);
        if norm == 0.0 {
            return Err(Error::InvalidInput("cannot store a zero vector".into()));
        }
        let normalized = (norm - 1.0).abs() > 1e-6;
        if normalized {
            record.vector.iter_mut().for_each(|v| *v /= norm);
        }
        // Store as f32 and mirror the rounding in memory so a reopened store
        // sees the same bits.
        let row: Vec<f32> = record.vector.iter().map(|&v| v as f32).collect();
        record.vector = row.iter().map(|&v| v as f64).collect();

        let mut file = OpenOptions::new().write(true).open(&self.path)?;
        file.seek(SeekFrom::End(0))?;
        let mut bytes = Vec::with_capacity(self.dimension * 4);
        for v in &row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        file.write_all(&bytes)?;
        let mut ids = OpenOptions::new().append(true).open(ids_path(&self.path))?;
        writeln!(ids, "{}\t{}", record.id, record.channel)?;

        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        file.seek(SeekFrom::Start(0))?;
        file.write_all(&self.header_bytes())?;
        Ok(normalized)
    }

    pub fn count(&self) -> usize {
        self.records.len()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    /// Exact top-k: exhaustive scan, scores non-increasing, ties broken by
    /// ascending id.
    pub fn top_k(&self, k: usize, scorer: &dyn Scorer) -> Result<Vec<(String, f64)>> {
        if k == 0 {
            return Err(Error::InvalidInput("k must be >= 1".into()));
        }
        let mut scored: Vec<(&str, f64)> = Vec::with_capacity(self.records.len());
        for rec in &self.records {
            scored.push((rec.id.as_str(), scorer.score(rec)?));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then_with(|| a.0.cmp(b.0))
        });
        scored.truncate(k);
        Ok(scored.into_iter().map(|(id, s)| (id.to_string(), s)).collect())
    }

    fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(MAGIC);
        h[4..8].copy_from_slice(&VERSION.to_le_bytes());
        h[8..12].copy_from_slice(&(self.dimension as u32).to_le_bytes());
        h[12..20].copy_from_slice(&(self.records.len() as u64).to_le_bytes());
        h[20..24].copy_from_slice(&ENCODING_F32.to_le_bytes());
        h
    }
}

fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".ids");
    s.into()
}
