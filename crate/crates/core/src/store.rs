//! Embedding store: a little-endian binary file mapping
//! `(sent_index, token_index, layer)` to a `dim`-length `f32` vector.
//!
//! Layout:
//!
//! ```text
//! magic        8 bytes   "SUBJPRB1"
//! version      u16
//! dim          u32
//! num_layers   u16
//! num_records  u64
//! lang_len     u16, followed by lang_len bytes of UTF-8
//! records      num_records x {
//!                  sent_index  u32
//!                  token_index u32
//!                  vectors     num_layers * dim f32, layer-major
//!              }
//! ```
//!
//! Records are sorted ascending by `(sent_index, token_index)` and keys are
//! unique.

use std::io::{Read, Write};

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SUBJPRB1";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate record key (sent_index={0}, token_index={1})")]
    DuplicateKey(u32, u32),

    #[error("record (sent_index={sent_index}, token_index={token_index}) has {found} values, expected {expected}")]
    Dimension { sent_index: u32, token_index: u32, expected: usize, found: usize },

    #[error("record (sent_index={0}, token_index={1}) contains a non-finite value")]
    NonFinite(u32, u32),

    #[error("invalid header: {0}")]
    Header(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Header fields other than the record count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoreHeader {
    pub language: String,
    pub dim: u32,
    pub num_layers: u16,
}

impl StoreHeader {
    pub fn new(language: impl Into<String>, dim: u32, num_layers: u16) -> Self {
        StoreHeader { language: language.into(), dim, num_layers }
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.dim == 0 {
            return Err(StoreError::Header("dim must be at least 1".into()));
        }
        if self.num_layers == 0 {
            return Err(StoreError::Header("num_layers must be at least 1".into()));
        }
        if self.language.len() > u16::MAX as usize {
            return Err(StoreError::Header("language code too long".into()));
        }
        Ok(())
    }

    fn record_len(&self) -> usize {
        self.dim as usize * self.num_layers as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub sent_index: u32,
    pub token_index: u32,
    /// `num_layers * dim` values, layer-major.
    pub vectors: Vec<f32>,
}

/// A loaded, immutable store. Lookups binary-search a sorted key index.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    header: StoreHeader,
    keys: Vec<(u32, u32)>,
    data: Vec<f32>,
}

impl EmbeddingStore {
    /// Validates and sorts `records` into a store.
    pub fn from_records<I>(header: StoreHeader, records: I) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = EmbeddingRecord>,
    {
        header.validate()?;
        let expected = header.record_len();
        let mut records: Vec<EmbeddingRecord> = records.into_iter().collect();
        for r in &records {
            if r.vectors.len() != expected {
                return Err(StoreError::Dimension {
                    sent_index: r.sent_index,
                    token_index: r.token_index,
                    expected,
                    found: r.vectors.len(),
                });
            }
            if r.vectors.iter().any(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite(r.sent_index, r.token_index));
            }
        }
        records.sort_by_key(|r| (r.sent_index, r.token_index));
        if let Some(w) = records.windows(2).find(|w| (w[0].sent_index, w[0].token_index) == (w[1].sent_index, w[1].token_index)) {
            return Err(StoreError::DuplicateKey(w[0].sent_index, w[0].token_index));
        }

        let mut keys = Vec::with_capacity(records.len());
        let mut data = Vec::with_capacity(records.len() * expected);
        for r in records {
            keys.push((r.sent_index, r.token_index));
            data.extend_from_slice(&r.vectors);
        }
        Ok(EmbeddingStore { header, keys, data })
    }

    pub fn header(&self) -> &StoreHeader {
        &self.header
    }

    pub fn language(&self) -> &str {
        &self.header.language
    }

    pub fn dim(&self) -> usize {
        self.header.dim as usize
    }

    pub fn num_layers(&self) -> usize {
        self.header.num_layers as usize
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, sent_index: u32, token_index: u32) -> bool {
        self.keys.binary_search(&(sent_index, token_index)).is_ok()
    }

    /// The vector stored for a token at `layer`, or `None` when the token has
    /// no record or the layer is out of range.
    pub fn lookup(&self, sent_index: u32, token_index: u32, layer: usize) -> Option<&[f32]> {
        if layer >= self.num_layers() {
            return None;
        }
        let pos = self.keys.binary_search(&(sent_index, token_index)).ok()?;
        let start = pos * self.header.record_len() + layer * self.dim();
        Some(&self.data[start..start + self.dim()])
    }

    /// Records in key order.
    pub fn records(&self) -> impl Iterator<Item = EmbeddingRecord> + '_ {
        let len = self.header.record_len();
        self.keys.iter().enumerate().map(move |(i, &(s, t))| EmbeddingRecord {
            sent_index: s,
            token_index: t,
            vectors: self.data[i * len..(i + 1) * len].to_vec(),
        })
    }

    /// Serializes the store and returns the number of records written.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<u64, StoreError> {
        let h = &self.header;
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&h.dim.to_le_bytes())?;
        out.write_all(&h.num_layers.to_le_bytes())?;
        out.write_all(&(self.keys.len() as u64).to_le_bytes())?;
        out.write_all(&(h.language.len() as u16).to_le_bytes())?;
        out.write_all(h.language.as_bytes())?;

        let len = h.record_len();
        let mut buf = Vec::with_capacity(8 + 4 * len);
        for (i, &(s, t)) in self.keys.iter().enumerate() {
            buf.clear();
            buf.extend_from_slice(&s.to_le_bytes());
            buf.extend_from_slice(&t.to_le_bytes());
            for v in &self.data[i * len..(i + 1) * len] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(self.keys.len() as u64)
    }

    /// Reads a store written by [`EmbeddingStore::write_to`] or any
    /// conforming writer.
    pub fn read_from<R: Read>(mut input: R) -> Result<Self, StoreError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, offset: 0 };

        let magic = cur.take(8, "magic")?;
        if magic != MAGIC {
            return Err(StoreError::Format { offset: 0, message: "bad magic".into() });
        }
        let version = u16::from_le_bytes(cur.array("version")?);
        if version != FORMAT_VERSION {
            return Err(StoreError::Format { offset: 8, message: format!("unsupported version {version}") });
        }
        let dim = u32::from_le_bytes(cur.array("dim")?);
        let num_layers = u16::from_le_bytes(cur.array("num_layers")?);
        let num_records = u64::from_le_bytes(cur.array("num_records")?);
        let lang_len = u16::from_le_bytes(cur.array("language length")?) as usize;
        let lang_offset = cur.offset;
        let language = std::str::from_utf8(cur.take(lang_len, "language")?)
            .map_err(|_| StoreError::Format { offset: lang_offset, message: "language is not UTF-8".into() })?
            .to_string();
        let header = StoreHeader { language, dim, num_layers };
        header.validate().map_err(|e| StoreError::Format { offset: 8, message: e.to_string() })?;

        let len = header.record_len();
        let record_bytes = 8 + 4 * len;
        let available = (bytes.len() - cur.offset) / record_bytes;
        if (available as u64) < num_records {
            return Err(StoreError::Format {
                offset: cur.offset + available * record_bytes,
                message: format!("truncated: header declares {num_records} records, file holds {available}"),
            });
        }
        let n = num_records as usize;
        let mut keys = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * len);
        for _ in 0..n {
            let record_offset = cur.offset;
            let s = u32::from_le_bytes(cur.array("sent_index")?);
            let t = u32::from_le_bytes(cur.array("token_index")?);
            if let Some(&prev) = keys.last() {
                if prev >= (s, t) {
                    return Err(StoreError::Format {
                        offset: record_offset,
                        message: format!("record key ({s}, {t}) is not strictly ascending"),
                    });
                }
            }
            for chunk in cur.take(4 * len, "vector")?.chunks_exact(4) {
                let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                if !v.is_finite() {
                    return Err(StoreError::Format {
                        offset: record_offset,
                        message: format!("record ({s}, {t}) contains a non-finite value"),
                    });
                }
                data.push(v);
            }
            keys.push((s, t));
        }
        if cur.offset != bytes.len() {
            return Err(StoreError::Format { offset: cur.offset, message: "trailing bytes after last record".into() });
        }
        Ok(EmbeddingStore { header, keys, data })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], StoreError> {
        if self.bytes.len() - self.offset < n {
            return Err(StoreError::Format { offset: self.offset, message: format!("truncated while reading {what}") });
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], StoreError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N, what)?);
        Ok(out)
    }
}

/// Writes `records` under `header` and returns the record count.
pub fn write_store<I, W>(header: &StoreHeader, records: I, out: W) -> Result<u64, StoreError>
where
    I: IntoIterator<Item = EmbeddingRecord>,
    W: Write,
{
    EmbeddingStore::from_records(header.clone(), records)?.write_to(out)
}

pub fn read_store<R: Read>(input: R) -> Result<EmbeddingStore, StoreError> {
    EmbeddingStore::read_from(input)
}
