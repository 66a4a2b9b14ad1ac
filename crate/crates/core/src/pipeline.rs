//! Directory ingestion and store building, shared by the command line and
//! batch drivers.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Chunk, Corpus, CorpusError, Tokenizer};
use crate::embed::{EmbedError, EmbeddingProvider};
use crate::vstore::{StoreError, VectorRecord, VectorStore};

const EMBED_BATCH: usize = 32;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no .txt documents found in {0}")]
    NoDocuments(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Sizes seen during ingestion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub documents: usize,
    pub chunks: usize,
    pub total_tokens: usize,
    pub min_doc_tokens: usize,
    pub max_doc_tokens: usize,
    pub mean_chunk_tokens: f64,
}

/// `.txt` files directly inside `dir`, sorted by file name.
pub fn list_documents(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let io = |source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let is_txt = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("txt"));
        if is_txt && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Reads every `.txt` file in `dir` and chunks it.
pub fn ingest_dir(
    dir: &Path,
    tokenizer: &dyn Tokenizer,
    chunk_size: usize,
    overlap: usize,
) -> Result<(Corpus, Vec<Chunk>, IngestSummary), PipelineError> {
    let paths = list_documents(dir)?;
    if paths.is_empty() {
        return Err(PipelineError::NoDocuments(dir.to_path_buf()));
    }
    let mut corpus = Corpus::new();
    for path in &paths {
        let bytes = std::fs::read(path).map_err(|source| PipelineError::Io {
            path: path.clone(),
            source,
        })?;
        let name = path.file_name().expect("listed file").to_string_lossy();
        corpus.ingest(&name, &bytes)?;
    }
    let chunks = corpus.chunk_all(tokenizer, chunk_size, overlap)?;
    let doc_tokens: Vec<usize> = corpus
        .documents()
        .iter()
        .map(|d| tokenizer.count(&d.text))
        .collect();
    let chunk_tokens: usize = chunks.iter().map(|c| c.token_count).sum();
    let summary = IngestSummary {
        documents: corpus.len(),
        chunks: chunks.len(),
        total_tokens: doc_tokens.iter().sum(),
        min_doc_tokens: doc_tokens.iter().copied().min().unwrap_or(0),
        max_doc_tokens: doc_tokens.iter().copied().max().unwrap_or(0),
        mean_chunk_tokens: if chunks.is_empty() {
            0.0
        } else {
            chunk_tokens as f64 / chunks.len() as f64
        },
    };
    Ok((corpus, chunks, summary))
}

/// Embeds `chunks` into `store` in batches. The store is left untouched if
/// any batch fails.
pub fn embed_into(
    store: &mut VectorStore,
    provider: &dyn EmbeddingProvider,
    chunks: &[Chunk],
) -> Result<(), PipelineError> {
    store.check_fingerprint(&provider.fingerprint())?;
    let mut records = Vec::with_capacity(chunks.len());
    for batch in chunks.chunks(EMBED_BATCH) {
        let texts: Vec<&str> = batch.iter().map(|c| c.text.as_str()).collect();
        let vectors = provider.embed_batch(&texts)?;
        if vectors.len() != batch.len() {
            return Err(EmbedError::Protocol(format!(
                "asked for {} embeddings, got {}",
                batch.len(),
                vectors.len()
            ))
            .into());
        }
        records.extend(batch.iter().zip(vectors).map(|(c, v)| VectorRecord {
            chunk_id: c.chunk_id.clone(),
            embedding: v,
        }));
    }
    let mut staged = store.clone();
    for r in records {
        staged.insert(r)?;
    }
    *store = staged;
    Ok(())
}

/// A fresh store holding every chunk.
pub fn build_store(provider: &dyn EmbeddingProvider, chunks: &[Chunk]) -> Result<VectorStore, PipelineError> {
    let mut store = VectorStore::new(provider.dims(), provider.fingerprint());
    embed_into(&mut store, provider, chunks)?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::WhitespaceTokenizer;
    use crate::embed::HashTestProvider;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn ingest_two_documents() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b.txt"), words(400)).unwrap();
        std::fs::write(dir.path().join("a.txt"), words(600)).unwrap();
        std::fs::write(dir.path().join("skip.md"), words(10)).unwrap();
        let (corpus, chunks, summary) = ingest_dir(dir.path(), &WhitespaceTokenizer, 512, 0).unwrap();
        assert_eq!(corpus.documents()[0].doc_id, "a");
        assert_eq!(chunks.len(), 3);
        assert_eq!(summary.documents, 2);
        assert_eq!(summary.total_tokens, 1000);
        assert_eq!((summary.min_doc_tokens, summary.max_doc_tokens), (400, 600));
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest_dir(dir.path(), &WhitespaceTokenizer, 512, 0).unwrap_err();
        assert!(err.to_string().starts_with("no .txt documents found"));
    }

    #[test]
    fn store_holds_every_chunk() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), words(5000)).unwrap();
        let (_, chunks, _) = ingest_dir(dir.path(), &WhitespaceTokenizer, 50, 0).unwrap();
        let provider = HashTestProvider::new(32, 0);
        let store = build_store(&provider, &chunks).unwrap();
        assert_eq!(store.len(), chunks.len());
        assert_eq!(chunks.len(), 100);

        let mut same = store.clone();
        assert!(matches!(
            embed_into(&mut same, &provider, &chunks[..1]),
            Err(PipelineError::Store(StoreError::DuplicateId(_)))
        ));
        assert_eq!(same.len(), store.len());
        let other = HashTestProvider::new(32, 9);
        assert!(matches!(
            embed_into(&mut same, &other, &chunks[..1]),
            Err(PipelineError::Store(StoreError::FingerprintMismatch { .. }))
        ));
    }
}
