//! Lexical retrieval over chunks (Okapi BM25) followed by a feature rerank
//! that rewards clause proximity and matching numeric details.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::regdoc::{canonical_id_cmp, ClauseId, RefGraph, RefKind};
use crate::smartchunk::{is_numeric_token, tokenize, Chunk};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RetrieveError {
    #[error("duplicate chunk id '{0}'")]
    DuplicateChunkId(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Index {
    postings: BTreeMap<String, Vec<(String, u32)>>,
    doc_lengths: BTreeMap<String, usize>,
    avg_doc_length: f64,
    corpus_size: usize,
}

impl Index {
    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn doc_length(&self, chunk_id: &str) -> Option<usize> {
        self.doc_lengths.get(chunk_id).copied()
    }

    pub fn postings(&self, token: &str) -> &[(String, u32)] {
        self.postings.get(token).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn chunk_ids(&self) -> impl Iterator<Item = &String> {
        self.doc_lengths.keys()
    }

    fn idf(&self, token: &str) -> f64 {
        let n = self.corpus_size as f64;
        let df = self.postings(token).len() as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }
}

pub fn build_index(chunks: &[Chunk]) -> Result<Index, RetrieveError> {
    let mut doc_lengths = BTreeMap::new();
    let mut postings: BTreeMap<String, BTreeMap<String, u32>> = BTreeMap::new();
    for chunk in chunks {
        let tokens = tokenize(&chunk.text);
        if doc_lengths.insert(chunk.id.clone(), tokens.len()).is_some() {
            return Err(RetrieveError::DuplicateChunkId(chunk.id.clone()));
        }
        for token in tokens {
            *postings
                .entry(token)
                .or_default()
                .entry(chunk.id.clone())
                .or_default() += 1;
        }
    }
    let corpus_size = doc_lengths.len();
    let avg_doc_length = if corpus_size == 0 {
        0.0
    } else {
        doc_lengths.values().sum::<usize>() as f64 / corpus_size as f64
    };
    let postings = postings
        .into_iter()
        .map(|(token, per_chunk)| {
            let mut list: Vec<(String, u32)> = per_chunk.into_iter().collect();
            list.sort_by(|a, b| canonical_id_cmp(&a.0, &b.0));
            (token, list)
        })
        .collect();
    Ok(Index {
        postings,
        doc_lengths,
        avg_doc_length,
        corpus_size,
    })
}

/// Distinct query tokens in first-occurrence order.
fn query_terms(query: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    tokenize(query)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

fn term_score(index: &Index, token: &str, tf: u32, doc_len: usize) -> f64 {
    if tf == 0 {
        return 0.0;
    }
    let tf = f64::from(tf);
    let norm = if index.avg_doc_length > 0.0 {
        doc_len as f64 / index.avg_doc_length
    } else {
        0.0
    };
    index.idf(token) * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * norm))
}

/// BM25 of one chunk; each distinct query token contributes once.
pub fn score_bm25(index: &Index, query: &str, chunk_id: &str) -> f64 {
    let Some(doc_len) = index.doc_length(chunk_id) else {
        return 0.0;
    };
    query_terms(query)
        .iter()
        .map(|t| {
            let tf = index
                .postings(t)
                .binary_search_by(|(id, _)| canonical_id_cmp(id, chunk_id))
                .map(|pos| index.postings(t)[pos].1)
                .unwrap_or(0);
            term_score(index, t, tf, doc_len)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RerankComponents {
    pub bm25_norm: f64,
    pub ref_proximity: f64,
    pub numeric_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredChunk {
    pub id: String,
    pub bm25: f64,
    pub rerank: f64,
    pub components: RerankComponents,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RerankWeights {
    pub bm25: f64,
    pub proximity: f64,
    pub numeric: f64,
}

impl Default for RerankWeights {
    fn default() -> Self {
        Self {
            bm25: 0.7,
            proximity: 0.2,
            numeric: 0.1,
        }
    }
}

fn by_score_then_id(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| canonical_id_cmp(a_id, b_id))
}

/// Top-`k` chunks by BM25, ties broken by canonical chunk id.
///
/// Accumulates per-chunk scores from the postings of each query term, so
/// chunks sharing no term with the query score exactly zero.
pub fn retrieve(index: &Index, query: &str, k: usize) -> Vec<ScoredChunk> {
    let mut scores: HashMap<&str, f64> = index
        .doc_lengths
        .keys()
        .map(|id| (id.as_str(), 0.0))
        .collect();
    for term in query_terms(query) {
        for (id, tf) in index.postings(&term) {
            let doc_len = index.doc_lengths[id];
            *scores.get_mut(id.as_str()).expect("posting ids are indexed") +=
                term_score(index, &term, *tf, doc_len);
        }
    }
    let mut ranked: Vec<(&str, f64)> = scores.into_iter().collect();
    ranked.sort_by(|a, b| by_score_then_id(a.1, a.0, b.1, b.0));
    ranked
        .into_iter()
        .take(k)
        .map(|(id, bm25)| ScoredChunk {
            id: id.to_string(),
            bm25,
            rerank: 0.0,
            components: RerankComponents::default(),
        })
        .collect()
}

/// Clause ids named in a query, using the regulation reference grammar.
/// Annex mentions resolve to `A<n>/1`.
pub fn mentioned_clauses(query: &str) -> Vec<ClauseId> {
    crate::regdoc::scan_references(query)
        .into_iter()
        .filter_map(|r| match r.kind {
            RefKind::Paragraph => ClauseId::new(None, r.path),
            RefKind::Annex => ClauseId::new(Some(r.path[0]), vec![1]),
        })
        .collect()
}

/// Shortest distance (in reference edges) from any start to every reachable
/// clause.
fn distances(graph: &RefGraph, starts: &[ClauseId]) -> HashMap<ClauseId, usize> {
    let mut dist = HashMap::new();
    let mut queue = VecDeque::new();
    for s in starts {
        if dist.insert(s.clone(), 0).is_none() {
            queue.push_back(s.clone());
        }
    }
    while let Some(node) = queue.pop_front() {
        let d = dist[&node];
        for t in graph.targets(&node) {
            if !dist.contains_key(t) {
                dist.insert(t.clone(), d + 1);
                queue.push_back(t.clone());
            }
        }
    }
    dist
}

pub fn rerank(
    candidates: &[ScoredChunk],
    query: &str,
    graph: &RefGraph,
    chunks: &BTreeMap<String, Chunk>,
    weights: RerankWeights,
) -> Vec<ScoredChunk> {
    let max_bm25 = candidates.iter().map(|c| c.bm25).fold(0.0_f64, f64::max);
    let mentioned = mentioned_clauses(query);
    let dist = distances(graph, &mentioned);
    let numeric: BTreeSet<String> = tokenize(query)
        .into_iter()
        .filter(|t| is_numeric_token(t))
        .collect();

    let mut out: Vec<ScoredChunk> = candidates
        .iter()
        .map(|c| {
            let chunk = chunks.get(&c.id);
            let bm25_norm = if max_bm25 > 0.0 { c.bm25 / max_bm25 } else { 0.0 };
            let ref_proximity = chunk
                .and_then(|ch| ch.member_clauses.iter().filter_map(|m| dist.get(m)).min())
                .map_or(0.0, |d| 1.0 / (1.0 + *d as f64));
            let numeric_overlap = match chunk {
                Some(ch) if !numeric.is_empty() => {
                    let tokens: BTreeSet<String> = tokenize(&ch.text).into_iter().collect();
                    numeric.intersection(&tokens).count() as f64 / numeric.len() as f64
                }
                _ => 0.0,
            };
            let rerank = weights.bm25 * bm25_norm
                + weights.proximity * ref_proximity
                + weights.numeric * numeric_overlap;
            ScoredChunk {
                id: c.id.clone(),
                bm25: c.bm25,
                rerank,
                components: RerankComponents {
                    bm25_norm,
                    ref_proximity,
                    numeric_overlap,
                },
            }
        })
        .collect();
    out.sort_by(|a, b| by_score_then_id(a.rerank, &a.id, b.rerank, &b.id));
    out
}

pub fn format_results(results: &[ScoredChunk]) -> String {
    results
        .iter()
        .map(|r| {
            format!(
                "{}\tbm25={:.6}\trerank={:.6}\tbm25_norm={:.6}\tref_proximity={:.6}\tnumeric_overlap={:.6}\n",
                r.id,
                r.bm25,
                r.rerank,
                r.components.bm25_norm,
                r.components.ref_proximity,
                r.components.numeric_overlap
            )
        })
        .collect()
}
