//! Portable dataset container.
//!
//! Layout, all multibyte fields little-endian:
//!
//! ```text
//! header   magic "STFG" | version u32 | n_records u32 | gamma u32 | n_classes u32
//! record   i: f32 x gamma | q: f32 x gamma | snr_db i16 | label u8
//! ```
//!
//! A text sidecar `<path>.manifest` holds `key=value` lines: the label names
//! in index order (`labels=BPSK,QPSK,...`) plus whatever generator settings
//! the producer wants to record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"STFG";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum DatastoreError {
    #[error("not a dataset file: magic {found:?}, expected \"STFG\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported dataset version {found} (this build reads version {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated dataset: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("record {index} has label {label} but the header declares {n_classes} classes")]
    LabelOutOfRange { index: usize, label: u8, n_classes: u32 },
    #[error("record {index} has {len} samples, dataset frame length is {gamma}")]
    InconsistentLength { index: usize, len: usize, gamma: usize },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub type Result<T> = std::result::Result<T, DatastoreError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatastoreError + '_ {
    move |source| DatastoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub i: Vec<f32>,
    pub q: Vec<f32>,
    pub snr_db: i16,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub gamma: usize,
    pub n_classes: usize,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn new(gamma: usize, n_classes: usize) -> Self {
        Self { gamma, n_classes, records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Size in bytes of the encoded container.
    pub fn encoded_len(&self) -> u64 {
        HEADER_LEN as u64 + self.records.len() as u64 * record_len(self.gamma)
    }

    fn validate(&self) -> Result<()> {
        for (index, r) in self.records.iter().enumerate() {
            if r.i.len() != self.gamma || r.q.len() != self.gamma {
                return Err(DatastoreError::InconsistentLength {
                    index,
                    len: r.i.len().max(r.q.len()),
                    gamma: self.gamma,
                });
            }
            if usize::from(r.label) >= self.n_classes {
                return Err(DatastoreError::LabelOutOfRange {
                    index,
                    label: r.label,
                    n_classes: self.n_classes as u32,
                });
            }
        }
        Ok(())
    }

    pub fn encode<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&MAGIC)?;
        for v in [VERSION, self.records.len() as u32, self.gamma as u32, self.n_classes as u32] {
            w.write_u32::<LittleEndian>(v)?;
        }
        for r in &self.records {
            for &v in r.i.iter().chain(&r.q) {
                w.write_f32::<LittleEndian>(v)?;
            }
            w.write_i16::<LittleEndian>(r.snr_db)?;
            w.write_u8(r.label)?;
        }
        w.flush()
    }

    /// Decodes a complete container held in memory.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(DatastoreError::Truncated { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
        }
        let found: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if found != MAGIC {
            return Err(DatastoreError::BadMagic { found });
        }
        if bytes.len() < HEADER_LEN {
            return Err(DatastoreError::Truncated { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
        }
        let mut h = &bytes[4..HEADER_LEN];
        let mut next = || h.read_u32::<LittleEndian>().expect("header length checked");
        let (version, n_records, gamma, n_classes) = (next(), next(), next(), next());
        if version != VERSION {
            return Err(DatastoreError::VersionMismatch { found: version });
        }
        let expected = u64::from(n_records)
            .checked_mul(record_len(gamma as usize))
            .and_then(|b| b.checked_add(HEADER_LEN as u64))
            .unwrap_or(u64::MAX);
        if bytes.len() as u64 != expected {
            return Err(DatastoreError::Truncated { expected, found: bytes.len() as u64 });
        }
        let gamma = gamma as usize;
        let mut body = &bytes[HEADER_LEN..];
        let mut records = Vec::with_capacity(n_records as usize);
        let mut samples = vec![0f32; 2 * gamma];
        for index in 0..n_records as usize {
            body.read_f32_into::<LittleEndian>(&mut samples).expect("body length checked");
            let snr_db = body.read_i16::<LittleEndian>().expect("body length checked");
            let label = body.read_u8().expect("body length checked");
            if u32::from(label) >= n_classes {
                return Err(DatastoreError::LabelOutOfRange { index, label, n_classes });
            }
            records.push(Record { i: samples[..gamma].to_vec(), q: samples[gamma..].to_vec(), snr_db, label });
        }
        Ok(Self { gamma, n_classes: n_classes as usize, records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let f = File::create(path).map_err(io_err(path))?;
        self.encode(BufWriter::new(f)).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(io_err(path))?).read_to_end(&mut bytes).map_err(io_err(path))?;
        Self::decode(&bytes)
    }

    /// Indices of all records in a seeded random order.
    pub fn shuffled_indices<R: Rng>(&self, rng: &mut R) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.records.len()).collect();
        idx.shuffle(rng);
        idx
    }
}

/// Encoded size of one record.
pub fn record_len(gamma: usize) -> u64 {
    8 * gamma as u64 + 3
}

/// Splits `indices` into consecutive batches of at most `batch` items.
pub fn batches(indices: &[usize], batch: usize) -> impl Iterator<Item = &[usize]> {
    indices.chunks(batch.max(1))
}

/// Sidecar describing label names and generation settings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub labels: Vec<String>,
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(labels: Vec<String>) -> Self {
        Self { labels, entries: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn path_for(dataset: &Path) -> PathBuf {
        let mut s = dataset.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("labels={}\n", self.labels.join(","));
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut labels = None;
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DatastoreError::Manifest(format!("line {}: expected key=value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "labels" {
                labels = Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
            } else {
                entries.insert(k.to_string(), v.to_string());
            }
        }
        let labels = labels.ok_or_else(|| DatastoreError::Manifest("missing labels line".into()))?;
        Ok(Self { labels, entries })
    }

    pub fn write(&self, dataset: &Path) -> Result<()> {
        let path = Self::path_for(dataset);
        std::fs::write(&path, self.to_text()).map_err(io_err(&path))
    }

    pub fn read(dataset: &Path) -> Result<Self> {
        let path = Self::path_for(dataset);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        Self::parse(&text)
    }
}
