//! Generation steps behind a backend trait, with validation of every
//! candidate and majority selection over canonical forms.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::mmcore::{check_conformance, parse_instance, parse_plantuml, serialize_instance, MetaModel};
use crate::ocl::{parse_ocl, to_canonical};
use crate::scenario::{parse_section, Section};
use crate::template::placeholders;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Metamodel,
    Instance,
    Ocl,
    ScenarioVehicle,
    ScenarioPre,
    ScenarioPost,
    ControlCode,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Metamodel,
        Stage::Instance,
        Stage::Ocl,
        Stage::ScenarioVehicle,
        Stage::ScenarioPre,
        Stage::ScenarioPost,
        Stage::ControlCode,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Metamodel => "metamodel",
            Stage::Instance => "instance",
            Stage::Ocl => "ocl",
            Stage::ScenarioVehicle => "scenario_vehicle",
            Stage::ScenarioPre => "scenario_pre",
            Stage::ScenarioPost => "scenario_post",
            Stage::ControlCode => "control_code",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Prompt {
    pub stage: Stage,
    pub key: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Candidate {
    pub index: usize,
    pub text: String,
    pub valid: bool,
    pub canonical: Option<String>,
    pub diagnostic: Option<String>,
}

impl Candidate {
    pub fn new(index: usize, text: impl Into<String>) -> Self {
        Candidate { index, text: text.into(), valid: false, canonical: None, diagnostic: None }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Other(String),
}

pub trait GeneratorBackend: Send + Sync {
    /// Up to `n` candidate texts for `prompt`.
    fn generate(&self, prompt: &Prompt, n: usize) -> Result<Vec<String>, BackendError>;
}

/// Replays `<stage>.<key>.<i>.txt` (i = 1..=n) from a directory. Missing
/// files simply mean fewer candidates.
#[derive(Debug, Clone)]
pub struct MockBackend {
    dir: PathBuf,
}

impl MockBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        MockBackend { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn file_name(stage: Stage, key: &str, i: usize) -> String {
        format!("{}.{key}.{i}.txt", stage.name())
    }
}

impl GeneratorBackend for MockBackend {
    fn generate(&self, prompt: &Prompt, n: usize) -> Result<Vec<String>, BackendError> {
        let mut out = Vec::new();
        for i in 1..=n {
            let path = self.dir.join(Self::file_name(prompt.stage, &prompt.key, i));
            match std::fs::read_to_string(&path) {
                Ok(text) => out.push(text),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => return Err(BackendError::Io { path, source }),
            }
        }
        Ok(out)
    }
}

/// What validators may need beyond the candidate text.
#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationContext<'a> {
    pub metamodel: Option<&'a MetaModel>,
}

pub const CODE_PLACEHOLDERS: [&str; 3] = ["signal_declarations", "subscriptions", "handlers"];

fn canonical_for(text: &str, stage: Stage, ctx: ValidationContext<'_>) -> Result<String, String> {
    match stage {
        Stage::Metamodel => parse_plantuml(text).map(|mm| mm.to_canonical()).map_err(|e| e.to_string()),
        Stage::Instance => {
            let mm = ctx.metamodel.ok_or("no metamodel to check the instance against")?;
            let inst = parse_instance(text, mm).map_err(|e| e.to_string())?;
            let report = check_conformance(&inst, mm);
            if !report.conforms() {
                return Err(format!("instance does not conform:\n{}", report.to_text().trim_end()));
            }
            Ok(serialize_instance(&inst, mm))
        }
        Stage::Ocl => parse_ocl(text).map(|cs| to_canonical(&cs)).map_err(|e| e.to_string()),
        Stage::ScenarioVehicle => parse_section(text, Section::Vehicle).map_err(|e| e.to_string()),
        Stage::ScenarioPre => parse_section(text, Section::Pre).map_err(|e| e.to_string()),
        Stage::ScenarioPost => parse_section(text, Section::Post).map_err(|e| e.to_string()),
        Stage::ControlCode => {
            let names = placeholders(text).map_err(|e| e.to_string())?;
            if let Some(bad) = names.iter().find(|n| !CODE_PLACEHOLDERS.contains(&n.as_str())) {
                return Err(format!("unknown placeholder '{{{{{bad}}}}}'"));
            }
            let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
            while lines.last().is_some_and(|l| l.is_empty()) {
                lines.pop();
            }
            Ok(lines.iter().map(|l| format!("{l}\n")).collect())
        }
    }
}

/// Runs the stage's validator; a valid candidate carries its canonical form.
pub fn validate_candidate(c: Candidate, stage: Stage, ctx: ValidationContext<'_>) -> Candidate {
    match canonical_for(&c.text, stage, ctx) {
        Ok(canonical) => Candidate { valid: true, canonical: Some(canonical), diagnostic: None, ..c },
        Err(d) => Candidate { valid: false, canonical: None, diagnostic: Some(d), ..c },
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("policy needs n >= 1 and min_valid >= 1")]
    BadPolicy,
    #[error("generation failed: {valid} valid candidate(s), {required} required\n{}", diagnostics.join("\n"))]
    GenerationFailed { valid: usize, required: usize, diagnostics: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConsensusPolicy {
    pub n: usize,
    pub min_valid: usize,
}

impl Default for ConsensusPolicy {
    fn default() -> Self {
        ConsensusPolicy { n: 5, min_valid: 1 }
    }
}

impl ConsensusPolicy {
    pub fn new(n: usize, min_valid: usize) -> Result<Self, ConsensusError> {
        if n == 0 || min_valid == 0 {
            return Err(ConsensusError::BadPolicy);
        }
        Ok(ConsensusPolicy { n, min_valid })
    }
}

/// Largest group of agreeing valid candidates (by canonical form); ties go
/// to the group whose first member has the smallest index. Returns that
/// first member.
pub fn select(candidates: &[Candidate], policy: ConsensusPolicy) -> Result<Candidate, ConsensusError> {
    let valid: Vec<&Candidate> = candidates.iter().filter(|c| c.valid).collect();
    if valid.len() < policy.min_valid || valid.is_empty() {
        return Err(ConsensusError::GenerationFailed {
            valid: valid.len(),
            required: policy.min_valid,
            diagnostics: candidates
                .iter()
                .filter_map(|c| c.diagnostic.as_ref().map(|d| format!("candidate {}: {d}", c.index)))
                .collect(),
        });
    }
    let mut groups: BTreeMap<&str, (usize, &Candidate)> = BTreeMap::new();
    for c in valid {
        let key = c.canonical.as_deref().unwrap_or("");
        let entry = groups.entry(key).or_insert((0, c));
        entry.0 += 1;
        if c.index < entry.1.index {
            entry.1 = c;
        }
    }
    let (_, winner) = groups
        .values()
        .max_by(|(na, a), (nb, b)| na.cmp(nb).then(b.index.cmp(&a.index)))
        .expect("at least one valid candidate");
    Ok((*winner).clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Selection {
    pub chosen: Candidate,
    pub candidates: Vec<Candidate>,
}

impl Selection {
    /// Per-candidate status lines followed by the chosen text.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for c in &self.candidates {
            let status = if c.valid { "valid" } else { "invalid" };
            out.push_str(&format!("# candidate {} {status}", c.index));
            if let Some(d) = &c.diagnostic {
                out.push_str(&format!(": {}", d.lines().next().unwrap_or("")));
            }
            out.push('\n');
        }
        out.push_str(&format!("# selected candidate {}\n", self.chosen.index));
        out
    }
}

/// Requests `policy.n` candidates, validates each and selects one.
pub fn generate(
    backend: &dyn GeneratorBackend,
    prompt: &Prompt,
    policy: ConsensusPolicy,
    ctx: ValidationContext<'_>,
) -> Result<Selection, ConsensusError> {
    let texts = backend.generate(prompt, policy.n).map_err(|e| ConsensusError::GenerationFailed {
        valid: 0,
        required: policy.min_valid,
        diagnostics: vec![e.to_string()],
    })?;
    let candidates: Vec<Candidate> = texts
        .into_iter()
        .enumerate()
        .map(|(i, t)| validate_candidate(Candidate::new(i, t), prompt.stage, ctx))
        .collect();
    let chosen = select(&candidates, policy)?;
    Ok(Selection { chosen, candidates })
}
