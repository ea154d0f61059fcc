//! The fixed stage DAG from regulation text to a simulated command trace.
//!
//! ```text
//! 1 regdoc -> 2 chunks -> 3 retrieval -> 4 scenario -> 5 scenario report --+
//!                                                                          +-> 8 sim script -> 9 mappings -> 10 control code -> 11 trace
//! 6 metamodel -> 7 consistency ---------------------------------------------+
//! ```
//!
//! Branches 1-5 and 6-7 run on separate threads. A failed stage skips
//! everything downstream of it, and no artifact is left behind for a skipped
//! stage.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genconsensus::{
    generate, ConsensusPolicy, GeneratorBackend, MockBackend, Prompt, Selection, Stage, ValidationContext,
};
use crate::mmcore::{check_conformance, parse_instance, parse_metamodel, parse_plantuml, MetaModel, ModelInstance};
use crate::ocl::{check_all, parse_ocl, Constraint};
use crate::regdoc::{build_reference_graph, parse_document, ClauseId, RefGraph, RegDocument};
use crate::retrieve::{build_index, format_results, mentioned_clauses, rerank, retrieve, RerankWeights, ScoredChunk};
use crate::scenario::{
    emit_sim_config, emit_sim_script, merge_sections, parse_scenario, validate_scenario, Finding, TestScenario,
    DEFAULT_SIM_TEMPLATE,
};
use crate::smartchunk::{base_chunks, dump_chunks, expand_all, Chunk, TokenBudget};
use crate::vehiclecode::{
    emit_control_code, format_mappings, map_signals, parse_aliases, parse_events, parse_rules, parse_vss_catalog,
    simulate_bridge, validate_rules, Action, ExperimentModel, Role, SignalMapping, DEFAULT_CODE_TEMPLATE,
};

pub const MOCK_DIR_ENV: &str = "SDVGEN_MOCK_DIR";

pub const ARTIFACTS: [&str; 11] = [
    "01_regdoc.txt",
    "02_chunks.txt",
    "03_retrieval.txt",
    "04_scenario.txt",
    "05_scenario_report.txt",
    "06_metamodel.txt",
    "07_consistency.txt",
    "08_sim_script.txt",
    "09_mappings.txt",
    "10_control_code.txt",
    "11_trace.txt",
];

pub const STAGE_NAMES: [&str; 11] = [
    "regdoc",
    "chunk",
    "retrieve",
    "scenario",
    "scenario-validate",
    "metamodel",
    "consistency",
    "sim-emit",
    "map-signals",
    "control-code",
    "bridge",
];

/// Upstream stage of each stage (1-based), as edges of the DAG.
const DEPENDS_ON: [&[usize]; 11] = [&[], &[1], &[2], &[3], &[4], &[], &[6], &[5, 7], &[8], &[9], &[10]];

pub const CONFIG_HELP: &str = "\
Config file: TOML. Relative paths are resolved against the config file's
directory.

[workspace]   dir                      artifact directory (created if missing)
[inputs]      regulation, vss, aliases, rules, events
              metamodel, instance, constraints   a path, or \"generate\"
              sim_template, code_template        optional; built-in default if absent
[chunking]    granularity (1), depth (2), budget (512 or \"unlimited\")
[retrieval]   query (string or list), k (5), weight_bm25 (0.7),
              weight_proximity (0.2), weight_numeric (0.1)
[scenario]    id
[mapping]     threshold (0.5), extra = [{ phrase = \"...\", role = \"telemetry\" }]
[generation]  backend = \"mock:<dir>\", key, n (5), min_valid (1)

The mock directory may be overridden with SDVGEN_MOCK_DIR or --backend.";

// ---------------------------------------------------------------- config

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Syntax(String),
    #[error("config: {0}")]
    Invalid(String),
    #[error("input '{key}' not found: {path}")]
    MissingInput { key: String, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    File(PathBuf),
    Generate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Mock(PathBuf),
}

impl BackendSpec {
    /// Parses `mock:<dir>`, resolving the directory against `base`.
    pub fn parse_arg(arg: &str, base: &Path) -> Result<BackendSpec, ConfigError> {
        match arg.split_once(':') {
            Some(("mock", dir)) if !dir.is_empty() => Ok(BackendSpec::Mock(base.join(dir))),
            _ => Err(ConfigError::Invalid(format!("unsupported backend '{arg}' (expected mock:<dir>)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub workspace: PathBuf,
    pub regulation: PathBuf,
    pub metamodel: Source,
    pub instance: Source,
    pub constraints: Source,
    pub vss: PathBuf,
    pub aliases: Option<PathBuf>,
    pub rules: PathBuf,
    pub events: PathBuf,
    pub sim_template: Option<PathBuf>,
    pub code_template: Option<Source>,
    pub granularity: usize,
    pub depth: usize,
    pub budget: TokenBudget,
    pub queries: Vec<String>,
    pub k: usize,
    pub weights: RerankWeights,
    pub scenario_id: String,
    pub threshold: f64,
    pub extras: Vec<Action>,
    pub backend: Option<BackendSpec>,
    pub key: String,
    pub policy: ConsensusPolicy,
}

// On-disk shape of the config, before paths are resolved.

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    workspace: RawWorkspace,
    inputs: RawInputs,
    #[serde(default)]
    chunking: RawChunking,
    retrieval: RawRetrieval,
    scenario: RawScenario,
    #[serde(default)]
    mapping: RawMapping,
    generation: RawGeneration,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkspace {
    dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInputs {
    regulation: PathBuf,
    metamodel: String,
    instance: String,
    constraints: String,
    vss: PathBuf,
    aliases: Option<PathBuf>,
    rules: PathBuf,
    events: PathBuf,
    sim_template: Option<PathBuf>,
    code_template: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawBudget {
    Tokens(usize),
    Named(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawChunking {
    granularity: usize,
    depth: usize,
    budget: RawBudget,
}

impl Default for RawChunking {
    fn default() -> Self {
        RawChunking {
            granularity: crate::smartchunk::DEFAULT_GRANULARITY,
            depth: crate::smartchunk::DEFAULT_DEPTH_LIMIT,
            budget: RawBudget::Tokens(crate::smartchunk::DEFAULT_MAX_TOKENS),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

fn default_k() -> usize {
    5
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRetrieval {
    query: OneOrMany,
    #[serde(default = "default_k")]
    k: usize,
    weight_bm25: Option<f64>,
    weight_proximity: Option<f64>,
    weight_numeric: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExtra {
    phrase: String,
    role: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawMapping {
    threshold: f64,
    extra: Vec<RawExtra>,
}

impl Default for RawMapping {
    fn default() -> Self {
        RawMapping { threshold: crate::vehiclecode::DEFAULT_THRESHOLD, extra: Vec::new() }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeneration {
    backend: Option<String>,
    key: String,
    n: Option<usize>,
    min_valid: Option<usize>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string().trim_end().to_string()))?;
        let source = |v: &str| match v {
            "generate" => Source::Generate,
            p => Source::File(base.join(p)),
        };
        let budget = match raw.chunking.budget {
            RawBudget::Named(n) if n == "unlimited" => TokenBudget::unlimited(),
            RawBudget::Named(n) => return Err(ConfigError::Invalid(format!("budget '{n}' is neither a number nor \"unlimited\""))),
            RawBudget::Tokens(t) => {
                TokenBudget::new(t).map_err(|_| ConfigError::Invalid("budget must be positive".into()))?
            }
        };
        let extras = raw
            .mapping
            .extra
            .into_iter()
            .map(|e| {
                let role = match e.role.as_str() {
                    "telemetry" => Role::Telemetry,
                    "actuation" => Role::Actuation,
                    other => return Err(ConfigError::Invalid(format!("unknown role '{other}'"))),
                };
                Ok(Action { phrase: e.phrase, role })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let queries = match raw.retrieval.query {
            OneOrMany::One(q) => vec![q],
            OneOrMany::Many(qs) => qs,
        };
        if queries.is_empty() {
            return Err(ConfigError::Invalid("at least one retrieval query is required".into()));
        }
        let defaults = ConsensusPolicy::default();
        let policy = ConsensusPolicy::new(
            raw.generation.n.unwrap_or(defaults.n),
            raw.generation.min_valid.unwrap_or(defaults.min_valid),
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let weights = RerankWeights::default();
        Ok(PipelineConfig {
            workspace: base.join(raw.workspace.dir),
            regulation: base.join(raw.inputs.regulation),
            metamodel: source(&raw.inputs.metamodel),
            instance: source(&raw.inputs.instance),
            constraints: source(&raw.inputs.constraints),
            vss: base.join(raw.inputs.vss),
            aliases: raw.inputs.aliases.map(|p| base.join(p)),
            rules: base.join(raw.inputs.rules),
            events: base.join(raw.inputs.events),
            sim_template: raw.inputs.sim_template.map(|p| base.join(p)),
            code_template: raw.inputs.code_template.as_deref().map(source),
            granularity: raw.chunking.granularity,
            depth: raw.chunking.depth,
            budget,
            queries,
            k: raw.retrieval.k,
            weights: RerankWeights {
                bm25: raw.retrieval.weight_bm25.unwrap_or(weights.bm25),
                proximity: raw.retrieval.weight_proximity.unwrap_or(weights.proximity),
                numeric: raw.retrieval.weight_numeric.unwrap_or(weights.numeric),
            },
            scenario_id: raw.scenario.id,
            threshold: raw.mapping.threshold,
            extras,
            backend: raw.generation.backend.map(|b| BackendSpec::parse_arg(&b, base)).transpose()?,
            key: raw.generation.key,
            policy,
        })
    }

    /// Every input file and the mock directory must exist.
    pub fn check_inputs(&self) -> Result<(), ConfigError> {
        let mut paths: Vec<(&str, &Path)> = vec![
            ("regulation", &self.regulation),
            ("vss", &self.vss),
            ("rules", &self.rules),
            ("events", &self.events),
        ];
        for (key, src) in [
            ("metamodel", Some(&self.metamodel)),
            ("instance", Some(&self.instance)),
            ("constraints", Some(&self.constraints)),
            ("code_template", self.code_template.as_ref()),
        ] {
            if let Some(Source::File(p)) = src {
                paths.push((key, p));
            }
        }
        if let Some(p) = &self.aliases {
            paths.push(("aliases", p));
        }
        if let Some(p) = &self.sim_template {
            paths.push(("sim_template", p));
        }
        match &self.backend {
            Some(BackendSpec::Mock(dir)) => paths.push(("backend", dir)),
            None => return Err(ConfigError::Invalid("no generation backend configured".into())),
        }
        for (key, p) in paths {
            if !p.exists() {
                return Err(ConfigError::MissingInput { key: key.into(), path: p.to_path_buf() });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- results

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::Failed => "failed",
            Status::Skipped => "skipped",
        })
    }
}

/// Why a stage failed; ordered by exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Validation,
    Input,
    Generation,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Validation => 1,
            FailureKind::Input => 2,
            FailureKind::Generation => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageResult {
    pub stage: usize,
    pub name: &'static str,
    pub status: Status,
    pub artifacts: Vec<String>,
    pub diagnostics: Vec<String>,
    pub failure: Option<FailureKind>,
}

/// Exit code for a finished run: the failure of the first failed stage.
pub fn exit_code(results: &[StageResult]) -> i32 {
    results.iter().find_map(|r| r.failure).map_or(0, FailureKind::exit_code)
}

pub fn summary(results: &[StageResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!("{:>2} {:<18} {}", r.stage, r.name, r.status));
        if let Some(a) = r.artifacts.first() {
            out.push_str(&format!("  {a}"));
        }
        out.push('\n');
        for d in &r.diagnostics {
            for line in d.lines() {
                out.push_str(&format!("     {line}\n"));
            }
        }
    }
    out
}

// ---------------------------------------------------------------- running

struct Failure {
    kind: FailureKind,
    message: String,
    /// Artifact to keep despite the failure (the diagnostic report).
    artifact: Option<String>,
}

fn fail(kind: FailureKind, message: impl fmt::Display) -> Failure {
    Failure { kind, message: message.to_string(), artifact: None }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(FailureKind::Input, format!("{}: {e}", path.display())))
}

/// Write-then-rename so readers never observe a partial artifact.
fn write_atomic(dir: &Path, name: &str, content: &str) -> std::io::Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, content)?;
    fs::rename(&tmp, dir.join(name))
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    backend: &'a dyn GeneratorBackend,
}

type StageOutput = Result<String, Failure>;

impl Runner<'_> {
    fn generate(&self, stage: Stage, text: String, ctx: ValidationContext<'_>) -> Result<Selection, Failure> {
        let prompt = Prompt { stage, key: self.cfg.key.clone(), text };
        generate(self.backend, &prompt, self.cfg.policy, ctx).map_err(|e| fail(FailureKind::Generation, e))
    }

    fn regdoc(&self) -> Result<(RegDocument, RefGraph, String), Failure> {
        let doc = parse_document(&read(&self.cfg.regulation)?).map_err(|e| fail(FailureKind::Input, e))?;
        let graph = build_reference_graph(&doc);
        let text = format!("{}\n# references\n{}", doc.to_canonical(), graph.to_text());
        Ok((doc, graph, text))
    }

    fn chunks(&self, doc: &RegDocument, graph: &RefGraph) -> (Vec<Chunk>, String) {
        let base = base_chunks(doc, self.cfg.granularity);
        let expanded = expand_all(&base, graph, doc, self.cfg.depth, self.cfg.budget);
        let text = dump_chunks(&expanded);
        (expanded, text)
    }

    fn retrieval(&self, chunks: &[Chunk], graph: &RefGraph) -> Result<(Vec<Vec<ScoredChunk>>, String), Failure> {
        let index = build_index(chunks).map_err(|e| fail(FailureKind::Validation, e))?;
        let by_id: BTreeMap<String, Chunk> = chunks.iter().map(|c| (c.id.clone(), c.clone())).collect();
        let mut all = Vec::new();
        let mut text = String::new();
        for q in &self.cfg.queries {
            let ranked = rerank(&retrieve(&index, q, self.cfg.k), q, graph, &by_id, self.cfg.weights);
            text.push_str(&format!("query: {q}\n{}\n", format_results(&ranked)));
            all.push(ranked);
        }
        Ok((all, text))
    }

    /// Source clauses: those named in the queries that exist, else the top
    /// hit of the first query.
    fn provenance(&self, doc: &RegDocument, ranked: &[Vec<ScoredChunk>]) -> Vec<ClauseId> {
        let mut out: Vec<ClauseId> = Vec::new();
        for id in self.cfg.queries.iter().flat_map(|q| mentioned_clauses(q)) {
            if doc.contains(&id) && !out.contains(&id) {
                out.push(id);
            }
        }
        if out.is_empty() {
            if let Some(id) = ranked.first().and_then(|r| r.first()).and_then(|c| c.id.parse().ok()) {
                out.push(id);
            }
        }
        out
    }

    fn scenario(
        &self,
        doc: &RegDocument,
        chunks: &[Chunk],
        ranked: &[Vec<ScoredChunk>],
    ) -> Result<(TestScenario, Vec<Finding>, String), Failure> {
        let by_id: BTreeMap<&str, &Chunk> = chunks.iter().map(|c| (c.id.as_str(), c)).collect();
        let mut context = String::new();
        for (q, hits) in self.cfg.queries.iter().zip(ranked) {
            context.push_str(&format!("Question: {q}\n"));
            for h in hits {
                if let Some(c) = by_id.get(h.id.as_str()) {
                    context.push_str(&c.text);
                    context.push('\n');
                }
            }
        }
        let mut reports = String::new();
        let mut sections = Vec::new();
        for (stage, what) in [
            (Stage::ScenarioVehicle, "the vehicle definition including sensor specifications"),
            (Stage::ScenarioPre, "the pre-conditions: scene setup, agent positioning and weather"),
            (Stage::ScenarioPost, "the post-conditions: telemetry assertions and expected outcomes"),
        ] {
            let prompt = format!("Extract {what} of a test scenario from:\n{context}");
            let sel = self.generate(stage, prompt, ValidationContext::default())?;
            reports.push_str(&format!("# {stage}\n{}", sel.report()));
            sections.push(sel.chosen.text);
        }
        let sources: Vec<String> = self.provenance(doc, ranked).iter().map(|c| c.to_string()).collect();
        let mut header = format!("scenario {}\n", self.cfg.scenario_id);
        if !sources.is_empty() {
            header.push_str(&format!("source {}\n", sources.join(" ")));
        }
        let mut parts = vec![header.as_str()];
        parts.extend(sections.iter().map(String::as_str));
        let (merged, conflicts) = merge_sections(&parts);
        let s = parse_scenario(&merged).map_err(|e| fail(FailureKind::Validation, e))?;
        let text = format!("{reports}{}", emit_sim_config(&s));
        Ok((s, conflicts, text))
    }

    fn scenario_report(&self, s: &TestScenario, doc: &RegDocument, conflicts: &[Finding]) -> StageOutput {
        let mut findings = conflicts.to_vec();
        findings.extend(validate_scenario(s, Some(doc)));
        if findings.is_empty() {
            return Ok("valid: no findings\n".into());
        }
        let text: String = findings.iter().map(|f| format!("{f}\n")).collect();
        Err(Failure {
            kind: FailureKind::Validation,
            message: format!("{} scenario finding(s)", findings.len()),
            artifact: Some(text),
        })
    }

    fn metamodel(&self) -> Result<(MetaModel, String), Failure> {
        match &self.cfg.metamodel {
            Source::File(p) => {
                let text = read(p)?;
                let parsed = if text.trim_start().starts_with("@startuml") {
                    parse_plantuml(&text)
                } else {
                    parse_metamodel(&text)
                };
                let mm = parsed.map_err(|e| fail(FailureKind::Input, format!("{}: {e}", p.display())))?;
                let canonical = mm.to_canonical();
                Ok((mm, canonical))
            }
            Source::Generate => {
                let sel = self.generate(
                    Stage::Metamodel,
                    "Produce a PlantUML class diagram of the vehicle configuration domain.".into(),
                    ValidationContext::default(),
                )?;
                let mm = parse_plantuml(&sel.chosen.text).map_err(|e| fail(FailureKind::Generation, e))?;
                let canonical = mm.to_canonical();
                Ok((mm, format!("{}{canonical}", sel.report())))
            }
        }
    }

    fn consistency(&self, mm: &MetaModel) -> StageOutput {
        let ctx = ValidationContext { metamodel: Some(mm) };
        let mut text = String::new();
        let inst: ModelInstance = match &self.cfg.instance {
            Source::File(p) => {
                parse_instance(&read(p)?, mm).map_err(|e| fail(FailureKind::Input, format!("{}: {e}", p.display())))?
            }
            Source::Generate => {
                // Generation validates conformance, so a non-conforming
                // instance never gets this far.
                let sel = self.generate(Stage::Instance, "Produce an XMI instance of the metamodel.".into(), ctx)?;
                text.push_str(&sel.report());
                parse_instance(&sel.chosen.text, mm).map_err(|e| fail(FailureKind::Generation, e))?
            }
        };
        let constraints: Vec<Constraint> = match &self.cfg.constraints {
            Source::File(p) => {
                parse_ocl(&read(p)?).map_err(|e| fail(FailureKind::Input, format!("{}: {e}", p.display())))?
            }
            Source::Generate => {
                let sel = self.generate(Stage::Ocl, "Produce OCL invariants for the metamodel.".into(), ctx)?;
                text.push_str(&sel.report());
                parse_ocl(&sel.chosen.text).map_err(|e| fail(FailureKind::Generation, e))?
            }
        };
        let conformance = check_conformance(&inst, mm);
        text.push_str("# conformance\n");
        if conformance.conforms() {
            text.push_str("conforms\n");
        } else {
            text.push_str(&conformance.to_text());
        }
        text.push_str("# constraints\n");
        let report = check_all(&constraints, &inst, mm).map_err(|e| Failure {
            kind: FailureKind::Validation,
            message: e.to_string(),
            artifact: Some(text.clone()),
        })?;
        text.push_str(&report.to_text());
        if conformance.conforms() && report.all_pass() {
            Ok(text)
        } else {
            let message = if conformance.conforms() {
                "OCL constraints not satisfied".to_string()
            } else {
                format!("{} conformance violation(s)", conformance.violations.len())
            };
            Err(Failure { kind: FailureKind::Validation, message, artifact: Some(text) })
        }
    }

    fn sim_script(&self, s: &TestScenario) -> StageOutput {
        let template = match &self.cfg.sim_template {
            Some(p) => read(p)?,
            None => DEFAULT_SIM_TEMPLATE.to_string(),
        };
        emit_sim_script(s, &template).map_err(|e| fail(FailureKind::Validation, e))
    }

    fn mappings(&self, s: &TestScenario) -> Result<(ExperimentModel, Vec<SignalMapping>, String), Failure> {
        let catalog = parse_vss_catalog(&read(&self.cfg.vss)?).map_err(|e| fail(FailureKind::Input, e))?;
        let aliases = match &self.cfg.aliases {
            Some(p) => parse_aliases(&read(p)?).map_err(|e| fail(FailureKind::Input, e))?,
            None => BTreeMap::new(),
        };
        let exp = ExperimentModel::from_scenario(s.clone(), &self.cfg.extras)
            .map_err(|e| fail(FailureKind::Validation, e))?;
        let maps = map_signals(&exp, &catalog, &aliases, self.cfg.threshold)
            .map_err(|e| fail(FailureKind::Validation, e))?;
        let text = format_mappings(&maps);
        Ok((exp, maps, text))
    }

    fn control_code(
        &self,
        exp: &ExperimentModel,
        maps: &[SignalMapping],
    ) -> Result<(Vec<crate::vehiclecode::ControlRule>, String), Failure> {
        let catalog = parse_vss_catalog(&read(&self.cfg.vss)?).map_err(|e| fail(FailureKind::Input, e))?;
        let rules = parse_rules(&read(&self.cfg.rules)?).map_err(|e| fail(FailureKind::Input, e))?;
        validate_rules(&rules, &catalog).map_err(|e| fail(FailureKind::Validation, e))?;
        let template = match &self.cfg.code_template {
            None => DEFAULT_CODE_TEMPLATE.to_string(),
            Some(Source::File(p)) => read(p)?,
            Some(Source::Generate) => {
                let prompt = "Produce a comAPI control code template.".to_string();
                self.generate(Stage::ControlCode, prompt, ValidationContext::default())?.chosen.text
            }
        };
        let code = emit_control_code(exp, maps, &rules, &template).map_err(|e| fail(FailureKind::Validation, e))?;
        Ok((rules, code))
    }

    fn trace(&self, rules: &[crate::vehiclecode::ControlRule]) -> StageOutput {
        let events = parse_events(&read(&self.cfg.events)?).map_err(|e| fail(FailureKind::Input, e))?;
        let trace = simulate_bridge(rules, &events).map_err(|e| fail(FailureKind::Input, e))?;
        Ok(trace.to_text())
    }
}

/// Collects stage outcomes and writes artifacts.
struct Recorder<'a> {
    dir: &'a Path,
    results: BTreeMap<usize, StageResult>,
}

impl Recorder<'_> {
    fn blocked(&self, stage: usize) -> bool {
        DEPENDS_ON[stage - 1]
            .iter()
            .any(|d| self.results.get(d).is_none_or(|r| r.status != Status::Ok))
    }

    fn skip(&mut self, stage: usize) {
        self.results.insert(stage, result(stage, Status::Skipped, None, Vec::new(), None));
    }

    /// Records a stage's outcome; returns the payload if it succeeded.
    fn record<T>(&mut self, stage: usize, outcome: Result<(T, String), Failure>) -> Option<T> {
        let name = ARTIFACTS[stage - 1];
        match outcome {
            Ok((value, text)) => match write_atomic(self.dir, name, &text) {
                Ok(()) => {
                    self.results.insert(stage, result(stage, Status::Ok, Some(name), Vec::new(), None));
                    Some(value)
                }
                Err(e) => {
                    let msg = format!("cannot write {name}: {e}");
                    self.results.insert(stage, result(stage, Status::Failed, None, vec![msg], Some(FailureKind::Input)));
                    None
                }
            },
            Err(f) => {
                let written = f.artifact.as_ref().is_some_and(|a| write_atomic(self.dir, name, a).is_ok());
                let artifact = written.then_some(name);
                self.results.insert(stage, result(stage, Status::Failed, artifact, vec![f.message], Some(f.kind)));
                None
            }
        }
    }
}

fn result(
    stage: usize,
    status: Status,
    artifact: Option<&str>,
    diagnostics: Vec<String>,
    failure: Option<FailureKind>,
) -> StageResult {
    StageResult {
        stage,
        name: STAGE_NAMES[stage - 1],
        status,
        artifacts: artifact.map(|a| vec![a.to_string()]).unwrap_or_default(),
        diagnostics,
        failure,
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot prepare workspace {path}")]
    Workspace { path: PathBuf, source: std::io::Error },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

fn prepare_workspace(dir: &Path) -> Result<(), PipelineError> {
    let ws = |source| PipelineError::Workspace { path: dir.to_path_buf(), source };
    fs::create_dir_all(dir).map_err(ws)?;
    for name in ARTIFACTS {
        for p in [dir.join(name), dir.join(format!(".{name}.tmp"))] {
            match fs::remove_file(&p) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(ws(e)),
            }
        }
    }
    Ok(())
}

/// Builds the backend named in the config (after any override).
pub fn make_backend(spec: &BackendSpec) -> Box<dyn GeneratorBackend> {
    match spec {
        BackendSpec::Mock(dir) => Box::new(MockBackend::new(dir.clone())),
    }
}

/// Applies `--backend` and the mock-directory environment override.
pub fn apply_overrides(cfg: &mut PipelineConfig, backend_arg: Option<&str>) -> Result<(), ConfigError> {
    if let Some(arg) = backend_arg {
        cfg.backend = Some(BackendSpec::parse_arg(arg, Path::new("."))?);
    } else if let Ok(dir) = std::env::var(MOCK_DIR_ENV) {
        if !dir.is_empty() {
            cfg.backend = Some(BackendSpec::Mock(PathBuf::from(dir)));
        }
    }
    Ok(())
}

/// Runs all stages. Input paths are checked before anything runs.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Vec<StageResult>, PipelineError> {
    cfg.check_inputs()?;
    let spec = cfg.backend.as_ref().expect("checked by check_inputs");
    let backend = make_backend(spec);
    run_with_backend(cfg, backend.as_ref())
}

pub fn run_with_backend(cfg: &PipelineConfig, backend: &dyn GeneratorBackend) -> Result<Vec<StageResult>, PipelineError> {
    prepare_workspace(&cfg.workspace)?;
    let runner = Runner { cfg, backend };
    let dir = cfg.workspace.as_path();

    let (left, right) = std::thread::scope(|scope| {
        let left = scope.spawn(|| {
            let mut rec = Recorder { dir, results: BTreeMap::new() };
            let reg = rec.record(1, runner.regdoc().map(|(d, g, t)| ((d, g), t)));
            let chunks = match &reg {
                Some((doc, graph)) => rec.record(2, Ok(runner.chunks(doc, graph))),
                None => None,
            };
            let ranked = match (&reg, &chunks) {
                (Some((_, graph)), Some(ch)) => rec.record(3, runner.retrieval(ch, graph)),
                _ => None,
            };
            let scenario = match (&reg, &chunks, &ranked) {
                (Some((doc, _)), Some(ch), Some(r)) => {
                    rec.record(4, runner.scenario(doc, ch, r).map(|(s, c, t)| ((s, c), t)))
                }
                _ => None,
            };
            let valid = match (&reg, &scenario) {
                (Some((doc, _)), Some((s, conflicts))) => {
                    rec.record(5, runner.scenario_report(s, doc, conflicts).map(|t| (s.clone(), t)))
                }
                _ => None,
            };
            for stage in 1..=5 {
                if !rec.results.contains_key(&stage) {
                    rec.skip(stage);
                }
            }
            (rec.results, valid)
        });
        let right = scope.spawn(|| {
            let mut rec = Recorder { dir, results: BTreeMap::new() };
            let mm = rec.record(6, runner.metamodel());
            match &mm {
                Some(mm) => {
                    rec.record(7, runner.consistency(mm).map(|t| ((), t)));
                }
                None => rec.skip(7),
            }
            rec.results
        });
        (left.join().expect("stage thread panicked"), right.join().expect("stage thread panicked"))
    });

    let (left_results, scenario) = left;
    let mut rec = Recorder { dir, results: left_results };
    rec.results.extend(right);

    let mut scenario = scenario.filter(|_| !rec.blocked(8));
    let script = scenario.as_ref().and_then(|s| rec.record(8, runner.sim_script(s).map(|t| ((), t))));
    if script.is_none() {
        scenario = None;
    }
    let mapped = match (&scenario, rec.blocked(9)) {
        (Some(s), false) => rec.record(9, runner.mappings(s).map(|(e, m, t)| ((e, m), t))),
        _ => None,
    };
    let rules = match (&mapped, rec.blocked(10)) {
        (Some((exp, maps)), false) => rec.record(10, runner.control_code(exp, maps)),
        _ => None,
    };
    if let (Some(rules), false) = (&rules, rec.blocked(11)) {
        rec.record(11, runner.trace(rules).map(|t| ((), t)));
    }
    for stage in 1..=11 {
        if !rec.results.contains_key(&stage) {
            rec.skip(stage);
        }
    }
    Ok(rec.results.into_values().collect())
}
