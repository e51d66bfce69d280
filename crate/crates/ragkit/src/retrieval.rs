//! Document chunking, retrieval indexes, and top-k retrieval.
//!
//! Chunks are greedy fixed-size token windows over a document; chunking is
//! lossless in the sense that the chunk body spans partition the document's
//! token stream in order. Two index kinds are supported: BM25 (Okapi) and
//! exhaustive cosine over endpoint-fetched embeddings.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::corpus::Document;
use crate::gateway::Gateway;
use crate::textproc::{self, LanguageTag};

#[derive(Error, Debug)]
pub enum RetrievalError {
    #[error("empty document")]
    EmptyDocument,
    #[error("chunk_size must be >= 1")]
    ZeroChunkSize,
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("unknown chunk_id {0}")]
    UnknownChunkId(String),
    #[error("embedding retriever needs a gateway")]
    MissingGateway,
    #[error("zero-vector embedding for chunk {0}")]
    ZeroVector(String),
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
}

/// BM25 parameters. The canonical Okapi defaults, fixed for reproducibility.
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// Queries are cut to this many tokens before scoring.
pub const MAX_QUERY_TOKENS: usize = 128;

/// A contiguous token window of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub id: String,
    pub document_id: String,
    pub language: LanguageTag,
    /// Token span `[start, end)` into the document's token stream.
    pub body_tokens: std::ops::Range<usize>,
    /// Rendered meta header, when chunking ran with meta enabled.
    pub meta_prefix: Option<String>,
    /// The chunk body: the document slice from the first to the last token
    /// of the window, including the original text between them.
    pub body: String,
}

impl Chunk {
    /// Full chunk text as seen by indexing, retrieval, and the metrics:
    /// meta prefix (if any) followed by the body.
    pub fn render(&self) -> String {
        match &self.meta_prefix {
            Some(prefix) => format!("{prefix}{}", self.body),
            None => self.body.clone(),
        }
    }
}

/// Which retriever to build and its knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverSpec {
    pub kind: RetrieverKind,
    pub chunk_size: usize,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RetrieverKind {
    Bm25,
    Embedding { endpoint_model: String },
}

impl Default for RetrieverSpec {
    fn default() -> Self {
        RetrieverSpec {
            kind: RetrieverKind::Bm25,
            chunk_size: 512,
            top_k: 5,
        }
    }
}

/// Ranked retrieval output for one query: `(chunk_id, score)` pairs with
/// non-increasing scores, ties broken by ascending chunk id.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub query_id: String,
    pub ranked: Vec<(String, f64)>,
}

/// Split a document into greedy fixed-size token windows. The final window
/// may be short. With `with_meta`, every chunk is prefixed by the document's
/// meta rendered as `key: value` lines; meta tokens do not count against
/// `chunk_size`.
pub fn chunk_document(
    doc: &Document,
    chunk_size: usize,
    with_meta: bool,
) -> Result<Vec<Chunk>, RetrievalError> {
    if chunk_size == 0 {
        return Err(RetrievalError::ZeroChunkSize);
    }
    if doc.text.is_empty() {
        return Err(RetrievalError::EmptyDocument);
    }
    let tokens = textproc::tokenize_with_spans(&doc.text, doc.language);
    if tokens.is_empty() {
        return Err(RetrievalError::EmptyDocument);
    }
    let meta_prefix = if with_meta && !doc.meta.is_empty() {
        let lines: String = doc
            .meta
            .iter()
            .map(|(k, v)| format!("{k}: {v}\n"))
            .collect();
        Some(lines)
    } else {
        None
    };

    let mut chunks = Vec::new();
    let mut start = 0usize;
    while start < tokens.len() {
        let end = (start + chunk_size).min(tokens.len());
        let byte_start = tokens[start].span.start;
        let byte_end = tokens[end - 1].span.end;
        chunks.push(Chunk {
            id: format!("{}#{:04}", doc.id, chunks.len()),
            document_id: doc.id.clone(),
            language: doc.language,
            body_tokens: start..end,
            meta_prefix: meta_prefix.clone(),
            body: doc.text[byte_start..byte_end].to_string(),
        });
        start = end;
    }
    Ok(chunks)
}

struct IndexedChunk {
    id: String,
    render: String,
}

/// Okapi BM25 inverted index over chunk renders.
pub struct Bm25Index {
    chunks: Vec<IndexedChunk>,
    id_to_idx: HashMap<String, usize>,
    /// term -> (chunk index, term frequency), one posting list per term.
    postings: HashMap<String, Vec<(usize, u32)>>,
    doc_len: Vec<usize>,
    avg_len: f64,
}

impl Bm25Index {
    fn build(chunks: &[Chunk]) -> Self {
        let mut indexed: Vec<&Chunk> = chunks.iter().collect();
        indexed.sort_by(|a, b| a.id.cmp(&b.id));

        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(indexed.len());
        let mut stored = Vec::with_capacity(indexed.len());
        let mut id_to_idx = HashMap::new();
        for (idx, chunk) in indexed.iter().enumerate() {
            let render = chunk.render();
            let tokens = textproc::tokenize(&render, chunk.language);
            doc_len.push(tokens.len());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for token in tokens {
                *tf.entry(token).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push((idx, count));
            }
            id_to_idx.insert(chunk.id.clone(), idx);
            stored.push(IndexedChunk {
                id: chunk.id.clone(),
                render,
            });
        }
        let avg_len = doc_len.iter().sum::<usize>() as f64 / doc_len.len() as f64;
        Bm25Index {
            chunks: stored,
            id_to_idx,
            postings,
            doc_len,
            avg_len,
        }
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Document frequency of a term.
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.chunks.len() as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn score_all(&self, query_tokens: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.chunks.len()];
        for term in query_tokens {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(idx, tf) in postings {
                let tf = tf as f64;
                let len_norm = 1.0 - BM25_B + BM25_B * self.doc_len[idx] as f64 / self.avg_len;
                scores[idx] += idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * len_norm);
            }
        }
        scores
    }
}

/// Exhaustive-cosine index over L2-normalized embeddings.
pub struct EmbeddingIndex {
    chunks: Vec<IndexedChunk>,
    id_to_idx: HashMap<String, usize>,
    vectors: Vec<Vec<f32>>,
    gateway: Arc<Gateway>,
    model: String,
}

impl EmbeddingIndex {
    fn build(
        chunks: &[Chunk],
        gateway: Arc<Gateway>,
        model: &str,
    ) -> Result<Self, RetrievalError> {
        let mut indexed: Vec<&Chunk> = chunks.iter().collect();
        indexed.sort_by(|a, b| a.id.cmp(&b.id));
        let renders: Vec<String> = indexed.iter().map(|c| c.render()).collect();
        let raw = gateway.embed_texts(&renders, model)?;
        let mut vectors = Vec::with_capacity(raw.len());
        for (chunk, vector) in indexed.iter().zip(raw) {
            vectors.push(l2_normalize(vector).ok_or_else(|| {
                RetrievalError::ZeroVector(chunk.id.clone())
            })?);
        }
        let id_to_idx = indexed
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i))
            .collect();
        let stored = indexed
            .iter()
            .zip(renders)
            .map(|(c, render)| IndexedChunk {
                id: c.id.clone(),
                render,
            })
            .collect();
        Ok(EmbeddingIndex {
            chunks: stored,
            id_to_idx,
            vectors,
            gateway,
            model: model.to_string(),
        })
    }

    fn score_all(&self, query_text: &str) -> Result<Vec<f64>, RetrievalError> {
        let embedded = self
            .gateway
            .embed_texts(&[query_text.to_string()], &self.model)?;
        let query = l2_normalize(embedded.into_iter().next().unwrap_or_default())
            .ok_or_else(|| RetrievalError::ZeroVector("<query>".into()))?;
        Ok(self
            .vectors
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&query)
                    .map(|(a, b)| (*a as f64) * (*b as f64))
                    .sum()
            })
            .collect())
    }
}

fn l2_normalize(vector: Vec<f32>) -> Option<Vec<f32>> {
    let norm: f64 = vector.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(vector.into_iter().map(|x| (x as f64 / norm) as f32).collect())
}

/// An immutable retrieval index; build once, query from any thread.
pub enum Index {
    Bm25(Bm25Index),
    Embedding(EmbeddingIndex),
}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Index::Bm25(i) => write!(f, "Index::Bm25({} chunks)", i.chunks.len()),
            Index::Embedding(i) => write!(f, "Index::Embedding({} chunks)", i.chunks.len()),
        }
    }
}

impl Index {
    pub fn len(&self) -> usize {
        match self {
            Index::Bm25(i) => i.chunks.len(),
            Index::Embedding(i) => i.chunks.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn chunks(&self) -> &[IndexedChunk] {
        match self {
            Index::Bm25(i) => &i.chunks,
            Index::Embedding(i) => &i.chunks,
        }
    }

    /// Render text of a chunk, for prompt assembly and the metrics.
    pub fn chunk_text(&self, chunk_id: &str) -> Option<&str> {
        let idx = match self {
            Index::Bm25(i) => i.id_to_idx.get(chunk_id),
            Index::Embedding(i) => i.id_to_idx.get(chunk_id),
        };
        idx.map(|&i| self.chunks()[i].render.as_str())
    }
}

/// Build an index over the given chunks. `gateway` is required for the
/// embedding kind and ignored for BM25.
pub fn build_index(
    chunks: &[Chunk],
    spec: &RetrieverSpec,
    gateway: Option<Arc<Gateway>>,
) -> Result<Index, RetrievalError> {
    if chunks.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    match &spec.kind {
        RetrieverKind::Bm25 => Ok(Index::Bm25(Bm25Index::build(chunks))),
        RetrieverKind::Embedding { endpoint_model } => {
            let gateway = gateway.ok_or(RetrievalError::MissingGateway)?;
            Ok(Index::Embedding(EmbeddingIndex::build(
                chunks,
                gateway,
                endpoint_model,
            )?))
        }
    }
}

/// Okapi BM25 score of one chunk for a tokenized query:
/// `Σ_t idf(t) · tf·(k1+1) / (tf + k1·(1−b+b·len/avglen))` with
/// `idf(t) = ln((N−df+0.5)/(df+0.5)+1)`, k1 = 1.2, b = 0.75.
pub fn bm25_score(
    index: &Bm25Index,
    query_tokens: &[String],
    chunk_id: &str,
) -> Result<f64, RetrievalError> {
    let &idx = index
        .id_to_idx
        .get(chunk_id)
        .ok_or_else(|| RetrievalError::UnknownChunkId(chunk_id.to_string()))?;
    Ok(index.score_all(query_tokens)[idx])
}

/// Retrieve the top-k chunks for a query. The query is truncated to
/// [`MAX_QUERY_TOKENS`] tokens before scoring. Returns fewer than `k` results
/// only when the corpus is smaller. Deterministic: equal scores order by
/// ascending chunk id.
pub fn retrieve_topk(
    index: &Index,
    query_id: &str,
    query: &str,
    k: usize,
    language: LanguageTag,
) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let (query_tokens, query_text) = truncate_query(query, language);
    let scores = match index {
        Index::Bm25(i) => i.score_all(&query_tokens),
        Index::Embedding(i) => i.score_all(&query_text)?,
    };

    // Chunks are stored sorted by id, so a stable sort on descending score
    // leaves ties in ascending-id order.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let ranked = order
        .into_iter()
        .take(k)
        .map(|idx| (index.chunks()[idx].id.clone(), scores[idx]))
        .collect();
    Ok(RetrievalResult {
        query_id: query_id.to_string(),
        ranked,
    })
}

/// Cut a query to the token cap; returns the kept tokens and the raw text
/// prefix covering them (used verbatim for embedding queries).
fn truncate_query(query: &str, language: LanguageTag) -> (Vec<String>, String) {
    let spans = textproc::tokenize_with_spans(query, language);
    if spans.len() <= MAX_QUERY_TOKENS {
        return (spans.into_iter().map(|t| t.text).collect(), query.to_string());
    }
    let cut = spans[MAX_QUERY_TOKENS - 1].span.end;
    let text = query[..cut].to_string();
    (
        spans
            .into_iter()
            .take(MAX_QUERY_TOKENS)
            .map(|t| t.text)
            .collect(),
        text,
    )
}
