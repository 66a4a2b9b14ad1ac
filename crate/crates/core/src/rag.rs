//! Retrieve, augment, generate.
//!
//! The query is built from the MCQ item, the best chunks are fetched from
//! the vector store and trimmed to a token budget, and the context is placed
//! ahead of the ordinary MCQ prompt. With no context the prompt is exactly
//! the plain one, so a RAG run over an empty store matches a plain run.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{count_tokens, Chunk};
use crate::embed::{EmbedError, EmbeddingProvider};
use crate::evalharness::{answer_item, render_prompt, run_bounded, McqItem, Outcome, ParseMode};
use crate::modelclient::ModelClient;
use crate::vstore::{StoreError, VectorStore};

#[derive(Debug, Error)]
pub enum RagError {
    #[error("invalid RAG config: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("store references chunk {0:?} missing from the corpus")]
    MissingChunk(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    QuestionOnly,
    #[default]
    QuestionPlusOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagConfig {
    pub k: usize,
    pub max_context_tokens: usize,
    #[serde(default)]
    pub query_mode: QueryMode,
}

impl Default for RagConfig {
    /// Three chunks within 1536 tokens leaves room for the question in a
    /// 2048-token context window.
    fn default() -> Self {
        Self {
            k: 3,
            max_context_tokens: 1536,
            query_mode: QueryMode::QuestionPlusOptions,
        }
    }
}

impl RagConfig {
    pub fn validate(&self, chunk_size: usize) -> Result<(), RagError> {
        if self.k == 0 {
            return Err(RagError::Config("k must be at least 1".into()));
        }
        if self.max_context_tokens < chunk_size {
            return Err(RagError::Config(format!(
                "max_context_tokens ({}) is smaller than the chunk size ({chunk_size})",
                self.max_context_tokens
            )));
        }
        Ok(())
    }
}

fn one_line(s: &str) -> String {
    s.replace("\r\n", " ").replace(['\n', '\r'], " ")
}

/// Retrieval query text for an item.
pub fn build_query(item: &McqItem, mode: QueryMode) -> String {
    match mode {
        QueryMode::QuestionOnly => item.question.clone(),
        QueryMode::QuestionPlusOptions => {
            let mut q = item.question.clone();
            for (i, opt) in item.options.iter().enumerate() {
                q.push_str(&format!("\n{}. {}", i + 1, one_line(opt)));
            }
            q
        }
    }
}

/// Chunk texts by id.
#[derive(Debug, Clone, Default)]
pub struct ChunkIndex(HashMap<String, Chunk>);

impl ChunkIndex {
    pub fn get(&self, chunk_id: &str) -> Option<&Chunk> {
        self.0.get(chunk_id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<Chunk> for ChunkIndex {
    fn from_iter<I: IntoIterator<Item = Chunk>>(iter: I) -> Self {
        Self(iter.into_iter().map(|c| (c.chunk_id.clone(), c)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedChunk {
    pub chunk: Chunk,
    pub score: f64,
    pub rank: usize,
}

/// Everything retrieval needs, checked for consistency once up front.
pub struct Retriever<'a> {
    store: &'a VectorStore,
    provider: &'a dyn EmbeddingProvider,
    chunks: &'a ChunkIndex,
    cfg: RagConfig,
}

impl<'a> Retriever<'a> {
    pub fn new(
        store: &'a VectorStore,
        provider: &'a dyn EmbeddingProvider,
        chunks: &'a ChunkIndex,
        cfg: RagConfig,
    ) -> Result<Self, RagError> {
        store.check_fingerprint(&provider.fingerprint())?;
        if cfg.k == 0 {
            return Err(RagError::Config("k must be at least 1".into()));
        }
        Ok(Self {
            store,
            provider,
            chunks,
            cfg,
        })
    }

    pub fn config(&self) -> RagConfig {
        self.cfg
    }

    pub fn retrieve(&self, query: &str) -> Result<Vec<RetrievedChunk>, RagError> {
        retrieve_context(self.store, self.provider, self.chunks, query, &self.cfg)
    }
}

/// Top-k chunks for `query`, then truncated in rank order to fit
/// `max_context_tokens`. The best chunk is always kept.
pub fn retrieve_context(
    store: &VectorStore,
    provider: &dyn EmbeddingProvider,
    chunks: &ChunkIndex,
    query: &str,
    cfg: &RagConfig,
) -> Result<Vec<RetrievedChunk>, RagError> {
    store.check_fingerprint(&provider.fingerprint())?;
    if store.is_empty() {
        return Ok(Vec::new());
    }
    let query_vec = provider.embed(query)?;
    let hits = store.search(&query_vec, cfg.k)?;
    let mut out = Vec::with_capacity(hits.len());
    let mut used = 0;
    for hit in hits {
        let chunk = chunks
            .get(&hit.chunk_id)
            .ok_or_else(|| RagError::MissingChunk(hit.chunk_id.clone()))?;
        if !out.is_empty() && used + chunk.token_count > cfg.max_context_tokens {
            break;
        }
        used += chunk.token_count;
        out.push(RetrievedChunk {
            chunk: chunk.clone(),
            score: hit.score,
            rank: hit.rank,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedPrompt {
    pub context_chunk_ids: Vec<String>,
    pub prompt_text: String,
}

/// Prepends the context block to the MCQ prompt. No context, no header.
pub fn augment(item: &McqItem, context: &[Chunk]) -> AugmentedPrompt {
    let base = render_prompt(item);
    if context.is_empty() {
        return AugmentedPrompt {
            context_chunk_ids: Vec::new(),
            prompt_text: base,
        };
    }
    let body = context
        .iter()
        .map(|c| c.text.as_str())
        .collect::<Vec<_>>()
        .join("\n\n");
    AugmentedPrompt {
        context_chunk_ids: context.iter().map(|c| c.chunk_id.clone()).collect(),
        prompt_text: format!("Context:\n{body}\n\n{base}"),
    }
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub item_id: String,
    pub context_chunk_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub prompt_token_estimate: usize,
    pub raw_model_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs one item through retrieve, augment, generate and parse. Without a
/// retriever this is plain prompting. Failures mark the item errored.
pub fn answer_with_rag(
    client: &dyn ModelClient,
    retriever: Option<&Retriever<'_>>,
    item: &McqItem,
    parse_mode: ParseMode,
) -> (Outcome, AuditRecord) {
    let retrieved = match retriever {
        None => Ok(Vec::new()),
        Some(r) => r.retrieve(&build_query(item, r.config().query_mode)),
    };
    let retrieved = match retrieved {
        Ok(r) => r,
        Err(e) => {
            let message = format!("retrieval failed: {e}");
            return (
                Outcome::Errored {
                    item_id: item.item_id.clone(),
                    message: message.clone(),
                },
                AuditRecord {
                    item_id: item.item_id.clone(),
                    context_chunk_ids: Vec::new(),
                    scores: Vec::new(),
                    prompt_token_estimate: 0,
                    raw_model_output: None,
                    error: Some(message),
                },
            );
        }
    };
    let context: Vec<Chunk> = retrieved.iter().map(|r| r.chunk.clone()).collect();
    let prompt = augment(item, &context);
    let (outcome, _) = answer_item(client, item, &prompt.prompt_text, parse_mode);
    let audit = AuditRecord {
        item_id: item.item_id.clone(),
        context_chunk_ids: prompt.context_chunk_ids,
        scores: retrieved.iter().map(|r| r.score).collect(),
        prompt_token_estimate: count_tokens(&prompt.prompt_text),
        raw_model_output: outcome.raw_text().map(str::to_string),
        error: match &outcome {
            Outcome::Errored { message, .. } => Some(message.clone()),
            Outcome::Answered(_) => None,
        },
    };
    (outcome, audit)
}

/// Evaluates every item with bounded concurrency. Results come back in
/// dataset order regardless of completion order.
pub fn evaluate_with(
    client: &dyn ModelClient,
    retriever: Option<&Retriever<'_>>,
    items: &[McqItem],
    concurrency: usize,
    parse_mode: ParseMode,
) -> (Vec<Outcome>, Vec<AuditRecord>) {
    run_bounded(items, concurrency, |item| {
        answer_with_rag(client, retriever, item, parse_mode)
    })
    .into_iter()
    .unzip()
}

pub fn write_audit_jsonl<W: Write>(mut out: W, records: &[AuditRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
