//! Retrieval chunks built from the clause tree and enlarged by walking the
//! reference graph under a token budget.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::regdoc::{ClauseId, RefGraph, RegDocument};

pub const DEFAULT_GRANULARITY: usize = 1;
pub const DEFAULT_DEPTH_LIMIT: usize = 2;
pub const DEFAULT_MAX_TOKENS: usize = 512;

/// Lowercased tokens: maximal alphanumeric runs, except that an all-digit run
/// followed by `.` and a digit absorbs one fractional part (`5.2.1` gives
/// `5.2`, `1`).
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_alphanumeric() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_alphanumeric() {
            i += 1;
        }
        let mut token: String = chars[start..i].iter().collect();
        let all_digits = token.chars().all(|c| c.is_ascii_digit());
        if all_digits
            && i + 1 < chars.len()
            && chars[i] == '.'
            && chars[i + 1].is_ascii_digit()
        {
            token.push('.');
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                token.push(chars[i]);
                i += 1;
            }
        }
        tokens.push(token.to_lowercase());
    }
    tokens
}

/// True for tokens of the form `\d+(\.\d+)?`.
pub fn is_numeric_token(token: &str) -> bool {
    let mut parts = token.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    digits(int) && parts.next().is_none_or(digits)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("token budget must be at least 1")]
pub struct ZeroBudget;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TokenBudget {
    max_tokens: usize,
}

impl TokenBudget {
    pub fn new(max_tokens: usize) -> Result<Self, ZeroBudget> {
        if max_tokens == 0 {
            return Err(ZeroBudget);
        }
        Ok(Self { max_tokens })
    }

    pub fn unlimited() -> Self {
        Self {
            max_tokens: usize::MAX,
        }
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }
}

impl Default for TokenBudget {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Chunk {
    pub id: String,
    pub member_clauses: Vec<ClauseId>,
    pub text: String,
    pub token_count: usize,
    pub expansion_depth: usize,
}

impl Chunk {
    fn from_members(
        id: String,
        members: Vec<ClauseId>,
        doc: &RegDocument,
        expansion_depth: usize,
    ) -> Chunk {
        let text = members
            .iter()
            .map(|m| member_line(m, doc))
            .collect::<Vec<_>>()
            .join("\n");
        let token_count = tokenize(&text).len();
        Chunk {
            id,
            member_clauses: members,
            text,
            token_count,
            expansion_depth,
        }
    }

    pub fn seed(&self) -> &ClauseId {
        &self.member_clauses[0]
    }
}

fn member_line(id: &ClauseId, doc: &RegDocument) -> String {
    let text = doc.clause(id).map(|c| c.text.as_str()).unwrap_or("");
    format!("{id} {text}")
}

/// One chunk per clause of depth at most `granularity`; deeper clauses are
/// absorbed by their ancestor at that depth. Members are listed seed first,
/// then the rest of the absorbed subtree in canonical order.
pub fn base_chunks(doc: &RegDocument, granularity: usize) -> Vec<Chunk> {
    let granularity = granularity.max(1);
    let mut groups: Vec<(ClauseId, Vec<ClauseId>)> = Vec::new();
    // canonical order visits every seed before its descendants
    for clause in doc.clauses() {
        if clause.id.depth() <= granularity {
            groups.push((clause.id.clone(), vec![clause.id.clone()]));
        } else {
            let seed = clause.id.ancestor_at(granularity);
            let group = groups
                .iter_mut()
                .rev()
                .find(|(s, _)| *s == seed)
                .expect("parents precede children in canonical order");
            group.1.push(clause.id.clone());
        }
    }
    groups
        .into_iter()
        .map(|(seed, members)| Chunk::from_members(seed.to_string(), members, doc, 0))
        .collect()
}

/// Breadth-first enrichment over outgoing references and parent links.
///
/// Each layer expands the clauses appended in the previous layer, in
/// canonical order; a clause contributes its resolved reference targets in
/// textual order followed by its parent. A discovered clause is appended
/// whole if the chunk stays within budget, otherwise it is dropped and not
/// traversed further.
pub fn expand_chunk(
    chunk: &Chunk,
    graph: &RefGraph,
    doc: &RegDocument,
    depth_limit: usize,
    budget: TokenBudget,
) -> Chunk {
    let mut members = chunk.member_clauses.clone();
    let mut visited: BTreeSet<ClauseId> = members.iter().cloned().collect();
    let mut tokens = chunk.token_count;
    let mut frontier: Vec<ClauseId> = visited.iter().cloned().collect();
    let mut reached = chunk.expansion_depth;

    for layer in 1..=depth_limit {
        if frontier.is_empty() {
            break;
        }
        frontier.sort();
        let mut next = Vec::new();
        for node in &frontier {
            let parent = node.parent();
            let neighbours = graph
                .targets(node)
                .into_iter()
                .cloned()
                .chain(parent.filter(|p| doc.contains(p)));
            for candidate in neighbours {
                if !visited.insert(candidate.clone()) {
                    continue;
                }
                let cost = tokenize(&member_line(&candidate, doc)).len();
                if tokens.saturating_add(cost) <= budget.max_tokens() {
                    tokens += cost;
                    members.push(candidate.clone());
                    next.push(candidate);
                    reached = reached.max(layer);
                }
            }
        }
        frontier = next;
    }

    let expanded = Chunk::from_members(chunk.id.clone(), members, doc, reached);
    debug_assert_eq!(expanded.token_count, tokens);
    expanded
}

/// Expands every chunk with the same parameters.
pub fn expand_all(
    chunks: &[Chunk],
    graph: &RefGraph,
    doc: &RegDocument,
    depth_limit: usize,
    budget: TokenBudget,
) -> Vec<Chunk> {
    chunks
        .iter()
        .map(|c| expand_chunk(c, graph, doc, depth_limit, budget))
        .collect()
}

/// Stable text dump: a header line per chunk, then one `| ` line per member.
pub fn dump_chunks(chunks: &[Chunk]) -> String {
    let mut out = String::new();
    for chunk in chunks {
        let members: Vec<String> = chunk.member_clauses.iter().map(|m| m.to_string()).collect();
        let _ = writeln!(
            out,
            "chunk {} depth={} tokens={} members={}",
            chunk.id,
            chunk.expansion_depth,
            chunk.token_count,
            members.join(",")
        );
        for line in chunk.text.lines() {
            let _ = writeln!(out, "| {line}");
        }
    }
    out
}
