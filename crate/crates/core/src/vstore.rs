//! Exact top-k cosine search over an in-memory record set, with a compact
//! binary file format.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic     b"TRVS"
//! version   u32
//! dims      u32
//! count     u64
//! fp_len    u32, then fp_len bytes of UTF-8 provider fingerprint
//! count x { id_len u32, id bytes (UTF-8), dims x f32 }
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::embed::{cosine_slices, EmbedError, EmbeddingVector};

pub const MAGIC: &[u8; 4] = b"TRVS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("duplicate chunk id {0:?}")]
    DuplicateId(String),
    #[error("dimension mismatch: store has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("provider fingerprint mismatch: store was built with {store:?}, got {other:?}")]
    FingerprintMismatch { store: String, other: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("query vector has zero norm")]
    ZeroNormQuery,
    #[error("not a vector store file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported store format version {0}")]
    UnsupportedVersion(u32),
    #[error("store file is truncated or corrupt: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorRecord {
    pub chunk_id: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dims: usize,
    fingerprint: String,
    records: Vec<VectorRecord>,
    ids: HashSet<String>,
}

impl VectorStore {
    pub fn new(dims: usize, fingerprint: impl Into<String>) -> Self {
        Self {
            dims,
            fingerprint: fingerprint.into(),
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[VectorRecord] {
        &self.records
    }

    pub fn get(&self, chunk_id: &str) -> Option<&VectorRecord> {
        self.records.iter().find(|r| r.chunk_id == chunk_id)
    }

    pub fn check_fingerprint(&self, other: &str) -> Result<(), StoreError> {
        if self.fingerprint != other {
            return Err(StoreError::FingerprintMismatch {
                store: self.fingerprint.clone(),
                other: other.to_string(),
            });
        }
        Ok(())
    }

    pub fn insert(&mut self, record: VectorRecord) -> Result<(), StoreError> {
        if record.embedding.dims() != self.dims {
            return Err(StoreError::DimensionMismatch {
                expected: self.dims,
                actual: record.embedding.dims(),
            });
        }
        if self.ids.contains(&record.chunk_id) {
            return Err(StoreError::DuplicateId(record.chunk_id));
        }
        self.ids.insert(record.chunk_id.clone());
        self.records.push(record);
        Ok(())
    }

    /// The `k` records most similar to `query`, best first. Equal scores are
    /// ordered by ascending chunk id. Zero-norm records never match.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, StoreError> {
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        if query.dims() != self.dims {
            return Err(StoreError::DimensionMismatch {
                expected: self.dims,
                actual: query.dims(),
            });
        }
        if self.records.is_empty() {
            return Ok(Vec::new());
        }
        if query.norm() == 0.0 {
            return Err(StoreError::ZeroNormQuery);
        }
        let mut scored: Vec<(f64, &str)> = self
            .records
            .iter()
            .filter_map(|r| match cosine_slices(query.values(), r.embedding.values()) {
                Ok(score) => Some((score, r.chunk_id.as_str())),
                Err(EmbedError::ZeroNorm) => None,
                Err(_) => unreachable!("dimensions checked on insert"),
            })
            .collect();
        let by_rank = |a: &(f64, &str), b: &(f64, &str)| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_rank);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, id))| SearchHit {
                chunk_id: id.to_string(),
                score,
                rank: i + 1,
            })
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), StoreError> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&u32::try_from(self.dims).map_err(|_| corrupt("dims exceed u32"))?.to_le_bytes())?;
        out.write_all(&(self.records.len() as u64).to_le_bytes())?;
        write_str(&mut out, &self.fingerprint)?;
        for record in &self.records {
            write_str(&mut out, &record.chunk_id)?;
            for v in record.embedding.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, StoreError> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        let version = read_u32(&mut input, "version")?;
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let dims = read_u32(&mut input, "dims")? as usize;
        let mut count_buf = [0u8; 8];
        read_exact(&mut input, &mut count_buf, "count")?;
        let count = u64::from_le_bytes(count_buf);
        let fingerprint = read_str(&mut input, "fingerprint")?;
        let mut store = VectorStore::new(dims, fingerprint);
        let mut values_buf = vec![0u8; dims * 4];
        for i in 0..count {
            let chunk_id = read_str(&mut input, "chunk id")?;
            read_exact(&mut input, &mut values_buf, "embedding")?;
            let values = values_buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let embedding = EmbeddingVector::new(values)
                .map_err(|e| corrupt(&format!("record {i}: {e}")))?;
            store.insert(VectorRecord {
                chunk_id,
                embedding,
            })?;
        }
        let mut trailing = [0u8; 1];
        if input.read(&mut trailing)? != 0 {
            return Err(corrupt("trailing bytes after last record"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn corrupt(msg: &str) -> StoreError {
    StoreError::Corrupt(msg.to_string())
}

fn write_str<W: Write>(out: &mut W, s: &str) -> Result<(), StoreError> {
    let len = u32::try_from(s.len()).map_err(|_| corrupt("string exceeds u32 length"))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<(), StoreError> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => corrupt(&format!("unexpected end of file reading {what}")),
        _ => StoreError::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32, StoreError> {
    let mut buf = [0u8; 4];
    read_exact(input, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str<R: Read>(input: &mut R, what: &str) -> Result<String, StoreError> {
    let len = read_u32(input, what)? as usize;
    let mut buf = Vec::new();
    input.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(corrupt(&format!("unexpected end of file reading {what}")));
    }
    String::from_utf8(buf).map_err(|_| corrupt(&format!("{what} is not UTF-8")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, xs: &[f32]) -> VectorRecord {
        VectorRecord {
            chunk_id: id.into(),
            embedding: EmbeddingVector::new(xs.to_vec()).unwrap(),
        }
    }

    fn q(xs: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn self_retrieval() {
        let mut s = VectorStore::new(3, "fp");
        s.insert(rec("a", &[1.0, 2.0, 3.0])).unwrap();
        s.insert(rec("b", &[-1.0, 0.5, 0.0])).unwrap();
        let hits = s.search(&q(&[1.0, 2.0, 3.0]), 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].chunk_id, "a");
        assert!((hits[0].score - 1.0).abs() < 1e-12);
        assert_eq!(hits[0].rank, 1);
    }

    #[test]
    fn insert_errors_leave_store_unchanged() {
        let mut s = VectorStore::new(16, "fp");
        s.insert(rec("a", &[1.0; 16])).unwrap();
        assert!(matches!(s.insert(rec("a", &[2.0; 16])), Err(StoreError::DuplicateId(_))));
        assert!(matches!(
            s.insert(rec("b", &[1.0; 8])),
            Err(StoreError::DimensionMismatch { expected: 16, actual: 8 })
        ));
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn k_is_clamped_and_ties_break_by_id() {
        let mut s = VectorStore::new(2, "fp");
        s.insert(rec("zeta", &[1.0, 0.0])).unwrap();
        s.insert(rec("alpha", &[2.0, 0.0])).unwrap();
        s.insert(rec("mid", &[0.0, 1.0])).unwrap();
        let hits = s.search(&q(&[1.0, 0.0]), 10).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.chunk_id.as_str()).collect();
        assert_eq!(ids, vec!["alpha", "zeta", "mid"]);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn empty_store_and_bad_queries() {
        let s = VectorStore::new(2, "fp");
        assert!(s.search(&q(&[1.0, 0.0]), 3).unwrap().is_empty());
        assert!(matches!(s.search(&q(&[1.0, 0.0]), 0), Err(StoreError::ZeroK)));
        assert!(matches!(
            s.search(&q(&[1.0, 0.0, 0.0]), 1),
            Err(StoreError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn file_round_trip_is_byte_exact() {
        let mut s = VectorStore::new(2, "hash-test/seed0/2");
        s.insert(rec("d#0", &[0.25, -1.5])).unwrap();
        s.insert(rec("d#1", &[f32::MIN_POSITIVE, 3.0])).unwrap();
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"TRVS");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8 + 4 + 17 + 2 * (4 + 3 + 8));
        let loaded = VectorStore::read_from(&bytes[..]).unwrap();
        assert_eq!(loaded, s);
        let mut again = Vec::new();
        loaded.write_to(&mut again).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn empty_round_trip() {
        let s = VectorStore::new(8, "fp");
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();
        assert_eq!(VectorStore::read_from(&bytes[..]).unwrap(), s);
    }

    #[test]
    fn format_errors() {
        let mut s = VectorStore::new(2, "fp");
        s.insert(rec("a", &[1.0, 2.0])).unwrap();
        let mut bytes = Vec::new();
        s.write_to(&mut bytes).unwrap();

        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"XXXX");
        assert!(matches!(VectorStore::read_from(&wrong[..]), Err(StoreError::BadMagic(_))));

        let mut version = bytes.clone();
        version[4] = 9;
        assert!(matches!(
            VectorStore::read_from(&version[..]),
            Err(StoreError::UnsupportedVersion(9))
        ));

        for cut in [3, 10, 21, bytes.len() - 1] {
            assert!(
                matches!(VectorStore::read_from(&bytes[..cut]), Err(StoreError::Corrupt(_))),
                "cut at {cut}"
            );
        }
    }
}
