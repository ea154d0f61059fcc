//! Regulation documents: clause tree and cross-reference graph.
//!
//! Input is plain text in UN-regulation numbering style. A clause header is a
//! line such as `5.2.1. text`; an annex header is a line starting with
//! `Annex <n>`. Inside an annex the numbering restarts and clause ids are
//! qualified by the annex number (`A3/1.2`). Lines before the first header are
//! front matter and are ignored; every other line continues the most recent
//! clause.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegDocError {
    #[error("duplicate clause id {0}")]
    DuplicateClauseId(ClauseId),
    #[error("clause {0} has no parent clause in the document")]
    OrphanClause(ClauseId),
    #[error("no clause headers found")]
    EmptyDocument,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid clause id '{0}'")]
pub struct ClauseIdParseError(pub String);

/// Identifier of a clause: a numeric path, optionally qualified by an annex.
///
/// The derived ordering is the canonical one: main-body clauses first, then
/// annexes by number, and within each part lexicographic by path components
/// (so `5` < `5.1` < `5.2` < `6`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClauseId {
    annex: Option<u32>,
    path: Vec<u32>,
}

impl ClauseId {
    /// Returns `None` if `path` is empty or has a zero component, or if the
    /// annex number is zero.
    pub fn new(annex: Option<u32>, path: Vec<u32>) -> Option<Self> {
        if path.is_empty() || path.contains(&0) || annex == Some(0) {
            return None;
        }
        Some(Self { annex, path })
    }

    pub fn main(path: &[u32]) -> Option<Self> {
        Self::new(None, path.to_vec())
    }

    pub fn annex(&self) -> Option<u32> {
        self.annex
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    pub fn depth(&self) -> usize {
        self.path.len()
    }

    pub fn parent(&self) -> Option<ClauseId> {
        if self.path.len() <= 1 {
            return None;
        }
        Some(ClauseId {
            annex: self.annex,
            path: self.path[..self.path.len() - 1].to_vec(),
        })
    }

    /// Ancestor at `depth`, or the clause itself when it is not deeper.
    pub fn ancestor_at(&self, depth: usize) -> ClauseId {
        let depth = depth.max(1).min(self.path.len());
        ClauseId {
            annex: self.annex,
            path: self.path[..depth].to_vec(),
        }
    }

    pub fn child(&self, component: u32) -> Option<ClauseId> {
        let mut path = self.path.clone();
        path.push(component);
        ClauseId::new(self.annex, path)
    }

    fn dotted(&self) -> String {
        self.path
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(".")
    }
}

impl fmt::Display for ClauseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.annex {
            Some(annex) => write!(f, "A{annex}/{}", self.dotted()),
            None => f.write_str(&self.dotted()),
        }
    }
}

impl FromStr for ClauseId {
    type Err = ClauseIdParseError;

    /// Accepts `5.2.1`, `5.2.1.` and `A3/1.2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ClauseIdParseError(s.to_string());
        let (annex, rest) = match s.strip_prefix('A') {
            Some(rest) => {
                let (num, path) = rest.split_once('/').ok_or_else(err)?;
                (Some(parse_component(num).ok_or_else(err)?), path)
            }
            None => (None, s),
        };
        let rest = rest.strip_suffix('.').unwrap_or(rest);
        let path = rest
            .split('.')
            .map(parse_component)
            .collect::<Option<Vec<_>>>()
            .ok_or_else(err)?;
        ClauseId::new(annex, path).ok_or_else(err)
    }
}

fn parse_component(s: &str) -> Option<u32> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

impl Serialize for ClauseId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Total order on chunk ids: ids that parse as clause ids come first in
/// canonical clause order, anything else follows in byte order.
pub fn canonical_id_cmp(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<ClauseId>(), b.parse::<ClauseId>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Clause {
    pub id: ClauseId,
    pub text: String,
    pub children: Vec<ClauseId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegDocument {
    clauses: BTreeMap<ClauseId, Clause>,
    roots: Vec<ClauseId>,
}

impl RegDocument {
    pub fn clauses(&self) -> impl Iterator<Item = &Clause> {
        self.clauses.values()
    }

    pub fn clause(&self, id: &ClauseId) -> Option<&Clause> {
        self.clauses.get(id)
    }

    pub fn contains(&self, id: &ClauseId) -> bool {
        self.clauses.contains_key(id)
    }

    pub fn roots(&self) -> &[ClauseId] {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    /// First clause of an annex in canonical order.
    pub fn annex_start(&self, annex: u32) -> Option<&ClauseId> {
        self.clauses.keys().find(|id| id.annex == Some(annex))
    }

    /// One clause per line, `<id>\t<text>`, in canonical order.
    pub fn to_canonical(&self) -> String {
        let mut out = String::new();
        for clause in self.clauses.values() {
            out.push_str(&format!("{}\t{}\n", clause.id, clause.text));
        }
        out
    }

    /// Renders the tree back into regulation text that parses to an equal
    /// document.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut annex = None;
        for clause in self.clauses.values() {
            if clause.id.annex != annex {
                annex = clause.id.annex;
                if let Some(n) = annex {
                    out.push_str(&format!("Annex {n}\n"));
                }
            }
            out.push_str(&format!("{}. {}\n", clause.id.dotted(), clause.text));
        }
        out
    }
}

fn header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+(?:\.\d+)*)\.\s+(.*)$").unwrap())
}

fn annex_header_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^Annex\s+(\d+)\b.*$").unwrap())
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_document(text: &str) -> Result<RegDocument, RegDocError> {
    let mut raw: BTreeMap<ClauseId, String> = BTreeMap::new();
    let mut annex: Option<u32> = None;
    let mut current: Option<ClauseId> = None;

    for line in text.lines() {
        let line = line.trim_end();
        if let Some(caps) = annex_header_re().captures(line) {
            // annex numbers that do not fit or are zero leave the context unchanged
            // but still close the current clause
            if let Some(n) = parse_component(&caps[1]).filter(|n| *n > 0) {
                annex = Some(n);
            }
            current = None;
            continue;
        }
        if let Some(caps) = header_re().captures(line) {
            let path: Option<Vec<u32>> = caps[1].split('.').map(parse_component).collect();
            if let Some(id) = path.and_then(|p| ClauseId::new(annex, p)) {
                if raw.contains_key(&id) {
                    return Err(RegDocError::DuplicateClauseId(id));
                }
                raw.insert(id.clone(), caps[2].to_string());
                current = Some(id);
                continue;
            }
        }
        if let Some(id) = &current {
            let text = raw.get_mut(id).expect("current clause is registered");
            text.push(' ');
            text.push_str(line);
        }
    }

    if raw.is_empty() {
        return Err(RegDocError::EmptyDocument);
    }

    let mut clauses: BTreeMap<ClauseId, Clause> = raw
        .into_iter()
        .map(|(id, text)| {
            let clause = Clause {
                id: id.clone(),
                text: normalize_ws(&text),
                children: Vec::new(),
            };
            (id, clause)
        })
        .collect();

    let mut roots = Vec::new();
    let ids: Vec<ClauseId> = clauses.keys().cloned().collect();
    for id in ids {
        match id.parent() {
            None => roots.push(id),
            Some(parent) => match clauses.get_mut(&parent) {
                Some(p) => p.children.push(id),
                None => return Err(RegDocError::OrphanClause(id)),
            },
        }
    }

    Ok(RegDocument { clauses, roots })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RefKind {
    Paragraph,
    Annex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CrossRef {
    pub source: ClauseId,
    pub target: ClauseId,
    pub kind: RefKind,
    pub resolved: bool,
}

impl fmt::Display for CrossRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let state = if self.resolved { "resolved" } else { "dangling" };
        write!(f, "{} -> {} [{state}]", self.source, self.target)
    }
}

/// A reference found in free text, before resolution against a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextRef {
    pub kind: RefKind,
    /// Paragraph refs carry the main-body path; annex refs the annex number.
    pub path: Vec<u32>,
    pub offset: usize,
}

fn paragraph_ref_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\bparagraphs?\s+(\d+(?:\.\d+)*)\.?((?:(?:\s*,\s*|\s*,?\s+and\s+)\d+(?:\.\d+)*\.?)*)",
        )
        .unwrap()
    })
}

fn annex_ref_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\bannex\s+(\d+)\b").unwrap())
}

fn id_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\d+(?:\.\d+)*").unwrap())
}

/// Finds paragraph and annex references in `text`, in occurrence order.
/// Enumerations (`paragraphs 5.1. and 5.2.`) yield one entry per id.
pub fn scan_references(text: &str) -> Vec<TextRef> {
    let mut refs = Vec::new();
    for caps in paragraph_ref_re().captures_iter(text) {
        let first = caps.get(1).unwrap();
        let mut ids = vec![(first.start(), first.as_str())];
        if let Some(tail) = caps.get(2) {
            for m in id_re().find_iter(tail.as_str()) {
                ids.push((tail.start() + m.start(), m.as_str()));
            }
        }
        for (offset, raw) in ids {
            let path: Option<Vec<u32>> = raw.split('.').map(parse_component).collect();
            if let Some(path) = path.filter(|p| !p.contains(&0)) {
                refs.push(TextRef {
                    kind: RefKind::Paragraph,
                    path,
                    offset,
                });
            }
        }
    }
    for caps in annex_ref_re().captures_iter(text) {
        let m = caps.get(1).unwrap();
        if let Some(n) = parse_component(m.as_str()).filter(|n| *n > 0) {
            refs.push(TextRef {
                kind: RefKind::Annex,
                path: vec![n],
                offset: m.start(),
            });
        }
    }
    refs.sort_by_key(|r| r.offset);
    refs
}

/// Resolves a text reference to a target id. Paragraph references point into
/// the main body; annex references point at the annex's first clause, or at
/// `A<n>/1` when the annex is absent.
pub fn resolve_ref(r: &TextRef, doc: &RegDocument) -> (ClauseId, bool) {
    match r.kind {
        RefKind::Paragraph => {
            let id = ClauseId::new(None, r.path.clone()).expect("validated path");
            let resolved = doc.contains(&id);
            (id, resolved)
        }
        RefKind::Annex => {
            let annex = r.path[0];
            match doc.annex_start(annex) {
                Some(id) => (id.clone(), true),
                None => (
                    ClauseId::new(Some(annex), vec![1]).expect("annex > 0"),
                    false,
                ),
            }
        }
    }
}

pub fn extract_references(clause: &Clause, doc: &RegDocument) -> Vec<CrossRef> {
    scan_references(&clause.text)
        .iter()
        .map(|r| {
            let (target, resolved) = resolve_ref(r, doc);
            CrossRef {
                source: clause.id.clone(),
                target,
                kind: r.kind,
                resolved,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RefGraph {
    adjacency: BTreeMap<ClauseId, Vec<CrossRef>>,
}

impl RefGraph {
    pub fn edges(&self, id: &ClauseId) -> &[CrossRef] {
        self.adjacency.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_edges(&self) -> impl Iterator<Item = &CrossRef> {
        self.adjacency.values().flatten()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.values().map(Vec::len).sum()
    }

    /// Resolved outgoing targets, in textual order, without repeats.
    pub fn targets(&self, id: &ClauseId) -> Vec<&ClauseId> {
        let mut seen = BTreeSet::new();
        self.edges(id)
            .iter()
            .filter(|e| e.resolved && seen.insert(&e.target))
            .map(|e| &e.target)
            .collect()
    }

    /// `<src> -> <dst> [resolved|dangling]`, one per line.
    pub fn to_text(&self) -> String {
        self.all_edges().map(|e| format!("{e}\n")).collect()
    }
}

pub fn build_reference_graph(doc: &RegDocument) -> RefGraph {
    let adjacency = doc
        .clauses()
        .map(|c| (c.id.clone(), extract_references(c, doc)))
        .collect();
    RefGraph { adjacency }
}
