//! Plain-text ingestion and fixed-size token chunking.
//!
//! Chunks are token windows over the source text. A chunk's `text` is the
//! original substring spanning its first to last token, so formatting inside
//! a chunk is preserved while boundaries always fall between tokens.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Chunk size used for the standards corpus.
pub const DEFAULT_CHUNK_SIZE: usize = 512;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document {source_name:?} is not valid UTF-8: {source}")]
    Encoding {
        source_name: String,
        #[source]
        source: std::str::Utf8Error,
    },
    #[error("invalid chunking parameters: chunk_size={chunk_size}, overlap={overlap} (need chunk_size >= 1 and overlap < chunk_size)")]
    Params { chunk_size: usize, overlap: usize },
    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Splits text into tokens, reported as byte ranges into the input.
///
/// Implementations must be local: tokenizing `&text[a..b]`, where `a` is the
/// start of some token and `b` the end of a later one, yields exactly the
/// tokens between them. The chunker relies on this for lossless round trips.
pub trait Tokenizer: Send + Sync {
    fn spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count(&self, text: &str) -> usize {
        self.spans(text).len()
    }

    /// Token strings in order.
    fn tokens<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.spans(text).into_iter().map(|r| &text[r]).collect()
    }
}

/// Default tokenizer: runs of alphanumeric characters are one token, every
/// other non-whitespace character is a token of its own, whitespace separates.
///
/// The join rule for reassembling tokens is a single ASCII space.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, ch) in text.char_indices() {
            if ch.is_alphanumeric() {
                if word_start.is_none() {
                    word_start = Some(i);
                }
                continue;
            }
            if let Some(start) = word_start.take() {
                spans.push(start..i);
            }
            if !ch.is_whitespace() {
                spans.push(i..i + ch.len_utf8());
            }
        }
        if let Some(start) = word_start {
            spans.push(start..text.len());
        }
        spans
    }
}

/// Separator placed between chunk texts when reassembling a document.
pub const JOIN_RULE: &str = " ";

/// Number of tokens under the default tokenizer.
pub fn count_tokens(text: &str) -> usize {
    WhitespaceTokenizer.count(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source_name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
    pub token_count: usize,
}

impl Chunk {
    pub fn make_id(doc_id: &str, seq: usize) -> String {
        format!("{doc_id}#{seq}")
    }
}

/// A set of ingested documents with unique ids.
#[derive(Debug, Default, Clone)]
pub struct Corpus {
    documents: Vec<Document>,
    ids: HashSet<String>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates `bytes` as UTF-8 and adds a document whose id is derived
    /// from `source_name`. Repeated names get `-1`, `-2`, ... suffixes.
    pub fn ingest(&mut self, source_name: &str, bytes: &[u8]) -> Result<&Document, CorpusError> {
        let text = std::str::from_utf8(bytes).map_err(|source| CorpusError::Encoding {
            source_name: source_name.to_string(),
            source,
        })?;
        let base = sanitize_doc_id(source_name);
        let mut doc_id = base.clone();
        let mut suffix = 1;
        while self.ids.contains(&doc_id) {
            doc_id = format!("{base}-{suffix}");
            suffix += 1;
        }
        self.ids.insert(doc_id.clone());
        self.documents.push(Document {
            doc_id,
            source_name: source_name.to_string(),
            text: text.to_string(),
        });
        Ok(self.documents.last().expect("just pushed"))
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Chunks every document in ingestion order.
    pub fn chunk_all(
        &self,
        tokenizer: &dyn Tokenizer,
        chunk_size: usize,
        overlap: usize,
    ) -> Result<Vec<Chunk>, CorpusError> {
        let mut out = Vec::new();
        for doc in &self.documents {
            out.extend(chunk_document_with(tokenizer, doc, chunk_size, overlap)?);
        }
        Ok(out)
    }
}

/// Drops directory components and the final extension, then replaces every
/// character outside `[A-Za-z0-9_.-]` with `_`.
pub fn sanitize_doc_id(source_name: &str) -> String {
    let base = source_name
        .rsplit(['/', '\\'])
        .next()
        .unwrap_or(source_name);
    let stem = match base.rfind('.') {
        Some(idx) if idx > 0 => &base[..idx],
        _ => base,
    };
    let cleaned: String = stem
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if cleaned.is_empty() {
        "doc".to_string()
    } else {
        cleaned
    }
}

/// Splits `doc` into windows of `chunk_size` tokens advancing by
/// `chunk_size - overlap`, using the default tokenizer.
pub fn chunk_document(
    doc: &Document,
    chunk_size: usize,
    overlap: usize,
) -> Result<Vec<Chunk>, CorpusError> {
    chunk_document_with(&WhitespaceTokenizer, doc, chunk_size, overlap)
}

pub fn chunk_document_with(
    tokenizer: &dyn Tokenizer,
    doc: &Document,
    chunk_size: usize,
    overlap: usize,
) -> Result<Vec<Chunk>, CorpusError> {
    if chunk_size == 0 || overlap >= chunk_size {
        return Err(CorpusError::Params {
            chunk_size,
            overlap,
        });
    }
    let spans = tokenizer.spans(&doc.text);
    let stride = chunk_size - overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < spans.len() {
        let end = (start + chunk_size).min(spans.len());
        let seq = chunks.len();
        let byte_range = spans[start].start..spans[end - 1].end;
        chunks.push(Chunk {
            chunk_id: Chunk::make_id(&doc.doc_id, seq),
            doc_id: doc.doc_id.clone(),
            seq,
            text: doc.text[byte_range].to_string(),
            token_count: end - start,
        });
        if end == spans.len() {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

/// Expected number of chunks for `total` tokens.
pub fn expected_chunk_count(total: usize, chunk_size: usize, overlap: usize) -> usize {
    if total == 0 {
        return 0;
    }
    let stride = chunk_size - overlap;
    total.saturating_sub(overlap).div_ceil(stride).max(1)
}

/// Writes chunks as JSON lines, one object per chunk, LF terminated.
pub fn write_chunks_jsonl<W: Write>(mut out: W, chunks: &[Chunk]) -> Result<(), CorpusError> {
    for chunk in chunks {
        serde_json::to_writer(&mut out, chunk).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_chunks(path: &Path, chunks: &[Chunk]) -> Result<(), CorpusError> {
    write_chunks_jsonl(BufWriter::new(File::create(path)?), chunks)
}

pub fn read_chunks_jsonl<R: BufRead>(input: R) -> Result<Vec<Chunk>, CorpusError> {
    let mut chunks = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: Chunk = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        chunks.push(chunk);
    }
    Ok(chunks)
}

pub fn load_chunks(path: &Path) -> Result<Vec<Chunk>, CorpusError> {
    read_chunks_jsonl(BufReader::new(File::open(path)?))
}
