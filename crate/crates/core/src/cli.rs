//! Command-line surface. Each subcommand wraps one library operation.
//!
//! Exit codes: 0 success, 1 validation or consistency failure, 2 usage or
//! input error, 3 generation failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::mmcore::{check_conformance, parse_instance, parse_metamodel, parse_plantuml, to_plantuml, MetaModel};
use crate::ocl::{check_all, parse_ocl};
use crate::pipeline::{self, PipelineConfig, CONFIG_HELP};
use crate::regdoc::{build_reference_graph, parse_document, RegDocument};
use crate::retrieve::{build_index, format_results, rerank, retrieve, RerankWeights};
use crate::scenario::{emit_sim_config, emit_sim_script, parse_scenario, validate_scenario, TestScenario, DEFAULT_SIM_TEMPLATE};
use crate::smartchunk::{
    base_chunks, dump_chunks, expand_all, Chunk, TokenBudget, DEFAULT_DEPTH_LIMIT, DEFAULT_GRANULARITY,
    DEFAULT_MAX_TOKENS,
};
use crate::vehiclecode::{
    emit_control_code, format_mappings, map_signals, parse_aliases, parse_events, parse_rules, parse_vss_catalog,
    simulate_bridge, validate_rules, Action, ExperimentModel, Role, SignalMapping, VssCatalog,
    DEFAULT_CODE_TEMPLATE, DEFAULT_THRESHOLD,
};
use crate::Format;

#[derive(Debug, Parser)]
#[command(name = "sdvgen", version, about = "Regulation-to-vehicle-code generation toolkit")]
pub struct Cli {
    /// Output format
    #[arg(long, value_enum, global = true, default_value = "text")]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Regulation documents
    #[command(subcommand)]
    Reg(RegCmd),
    /// Build and expand retrieval chunks
    #[command(subcommand)]
    Chunk(ChunkCmd),
    /// Rank chunks against a query
    Retrieve(RetrieveArgs),
    /// Metamodels
    #[command(subcommand)]
    Mm(MmCmd),
    /// Model instances
    #[command(subcommand)]
    Inst(InstCmd),
    /// OCL constraints
    #[command(subcommand)]
    Ocl(OclCmd),
    /// Test scenarios
    #[command(subcommand)]
    Scenario(ScenarioCmd),
    /// VSS signal catalogs
    #[command(subcommand)]
    Vss(VssCmd),
    /// Map experiment actions onto catalog signals
    MapSignals(MapArgs),
    /// Render control code from rules
    EmitCode(EmitCodeArgs),
    /// Event bridge
    #[command(subcommand)]
    Bridge(BridgeCmd),
    /// Full pipeline
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Debug, Subcommand)]
pub enum RegCmd {
    /// Print the canonical clause list
    Parse { file: PathBuf },
    /// Print the cross-reference graph
    Refs { file: PathBuf },
}

#[derive(Debug, Args)]
pub struct ChunkOpts {
    /// Regulation text
    pub file: PathBuf,
    #[arg(long, default_value_t = DEFAULT_GRANULARITY)]
    pub granularity: usize,
    #[arg(long, default_value_t = DEFAULT_DEPTH_LIMIT)]
    pub depth: usize,
    /// Token budget per chunk, or `unlimited`
    #[arg(long, default_value_t = DEFAULT_MAX_TOKENS.to_string())]
    pub budget: String,
}

#[derive(Debug, Subcommand)]
pub enum ChunkCmd {
    /// Print base chunks without expansion
    Build {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRANULARITY)]
        granularity: usize,
    },
    /// Print chunks expanded along references
    Expand(ChunkOpts),
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub opts: ChunkOpts,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Apply the second-stage rerank to the BM25 candidates
    #[arg(long)]
    pub rerank: bool,
}

#[derive(Debug, Subcommand)]
pub enum MmCmd {
    /// Convert a PlantUML class diagram to the canonical form
    FromPlantuml { file: PathBuf },
    /// Check a metamodel (PlantUML or canonical) for well-formedness
    Validate { file: PathBuf },
    /// Print a metamodel as PlantUML
    ToPlantuml { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum InstCmd {
    /// Check an instance against a metamodel
    Validate {
        file: PathBuf,
        #[arg(long)]
        metamodel: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum OclCmd {
    /// Evaluate constraints on an instance
    Check {
        #[arg(long)]
        metamodel: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        constraints: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCmd {
    /// Check scenario invariants and, optionally, provenance
    Validate {
        file: PathBuf,
        #[arg(long)]
        regulation: Option<PathBuf>,
    },
    /// Print the canonical simulation config
    EmitConfig { file: PathBuf },
    /// Render a simulation script template
    EmitSim {
        file: PathBuf,
        /// Script template (built-in CARLA template if omitted)
        #[arg(long)]
        template: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum VssCmd {
    /// Parse a catalog and print it canonically
    Parse { file: PathBuf },
}

#[derive(Debug, Args)]
pub struct MapOpts {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub aliases: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Extra action as `phrase:role` (role is telemetry or actuation)
    #[arg(long = "extra")]
    pub extras: Vec<String>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub opts: MapOpts,
}

#[derive(Debug, Args)]
pub struct EmitCodeArgs {
    #[command(flatten)]
    pub opts: MapOpts,
    #[arg(long)]
    pub rules: PathBuf,
    /// Code template (built-in comAPI template if omitted)
    #[arg(long)]
    pub template: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BridgeCmd {
    /// Replay an event file against control rules
    Simulate {
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        events: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Run all stages
    #[command(after_help = CONFIG_HELP)]
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Generator backend, `mock:<dir>`
        #[arg(long)]
        backend: Option<String>,
        /// Artifact directory (overrides the config)
        #[arg(long)]
        workspace: Option<PathBuf>,
    },
}

/// A command's result: text for stdout, JSON for `--format json`, an
/// optional message for stderr, and the exit code.
struct Output {
    text: String,
    json: serde_json::Value,
    error: Option<String>,
    code: i32,
}

fn ok(text: String, json: impl Serialize) -> Output {
    Output { text, json: serde_json::to_value(json).expect("serializable"), error: None, code: 0 }
}

/// Validation or consistency failure.
fn failure(message: String) -> Output {
    Output { text: String::new(), json: json!({ "error": message }), error: Some(message), code: 1 }
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_doc(path: &Path) -> anyhow::Result<RegDocument> {
    parse_document(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn load_metamodel(path: &Path) -> anyhow::Result<MetaModel> {
    let text = read(path)?;
    let mm = if text.trim_start().starts_with("@startuml") {
        parse_plantuml(&text)
    } else {
        parse_metamodel(&text)
    };
    mm.with_context(|| format!("{}", path.display()))
}

fn load_scenario(path: &Path) -> anyhow::Result<TestScenario> {
    parse_scenario(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn load_catalog(path: &Path) -> anyhow::Result<VssCatalog> {
    parse_vss_catalog(&read(path)?).with_context(|| format!("{}", path.display()))
}

fn budget(raw: &str) -> anyhow::Result<TokenBudget> {
    if raw == "unlimited" {
        return Ok(TokenBudget::unlimited());
    }
    let n: usize = raw.parse().map_err(|_| anyhow!("budget must be a positive integer or 'unlimited'"))?;
    TokenBudget::new(n).map_err(|e| anyhow!("{e}"))
}

fn chunks(opts: &ChunkOpts) -> anyhow::Result<(RegDocument, Vec<Chunk>)> {
    let doc = load_doc(&opts.file)?;
    let graph = build_reference_graph(&doc);
    let base = base_chunks(&doc, opts.granularity);
    let expanded = expand_all(&base, &graph, &doc, opts.depth, budget(&opts.budget)?);
    Ok((doc, expanded))
}

fn parse_extra(raw: &str) -> anyhow::Result<Action> {
    let (phrase, role) = raw
        .rsplit_once(':')
        .ok_or_else(|| anyhow!("extra '{raw}' must look like phrase:role"))?;
    let role = match role.trim() {
        "telemetry" => Role::Telemetry,
        "actuation" => Role::Actuation,
        other => return Err(anyhow!("unknown role '{other}'")),
    };
    Ok(Action { phrase: phrase.trim().to_string(), role })
}

fn mapping(opts: &MapOpts) -> anyhow::Result<(ExperimentModel, VssCatalog, Result<Vec<SignalMapping>, String>)> {
    let scenario = load_scenario(&opts.scenario)?;
    let catalog = load_catalog(&opts.catalog)?;
    let aliases = match &opts.aliases {
        Some(p) => parse_aliases(&read(p)?).with_context(|| format!("{}", p.display()))?,
        None => BTreeMap::new(),
    };
    let extras = opts.extras.iter().map(|e| parse_extra(e)).collect::<anyhow::Result<Vec<_>>>()?;
    let exp = ExperimentModel::from_scenario(scenario, &extras)?;
    let maps = map_signals(&exp, &catalog, &aliases, opts.threshold).map_err(|e| e.to_string());
    Ok((exp, catalog, maps))
}

fn dispatch(cli: &Cli) -> anyhow::Result<Output> {
    let out = match &cli.command {
        Command::Reg(RegCmd::Parse { file }) => {
            let doc = load_doc(file)?;
            ok(doc.to_canonical(), &doc)
        }
        Command::Reg(RegCmd::Refs { file }) => {
            let doc = load_doc(file)?;
            let graph = build_reference_graph(&doc);
            ok(graph.to_text(), &graph)
        }
        Command::Chunk(ChunkCmd::Build { file, granularity }) => {
            let doc = load_doc(file)?;
            let base = base_chunks(&doc, *granularity);
            ok(dump_chunks(&base), &base)
        }
        Command::Chunk(ChunkCmd::Expand(opts)) => {
            let (_, expanded) = chunks(opts)?;
            ok(dump_chunks(&expanded), &expanded)
        }
        Command::Retrieve(args) => {
            let (doc, expanded) = chunks(&args.opts)?;
            let index = build_index(&expanded)?;
            let mut results = retrieve(&index, &args.query, args.k);
            if args.rerank {
                let graph = build_reference_graph(&doc);
                let by_id: BTreeMap<String, Chunk> = expanded.iter().map(|c| (c.id.clone(), c.clone())).collect();
                results = rerank(&results, &args.query, &graph, &by_id, RerankWeights::default());
            }
            ok(format_results(&results), &results)
        }
        Command::Mm(MmCmd::FromPlantuml { file }) => {
            let mm = parse_plantuml(&read(file)?).with_context(|| format!("{}", file.display()))?;
            ok(mm.to_canonical(), &mm)
        }
        Command::Mm(MmCmd::Validate { file }) => {
            let mm = load_metamodel(file)?;
            ok(format!("valid: {} classes\n", mm.len()), &mm)
        }
        Command::Mm(MmCmd::ToPlantuml { file }) => {
            let mm = load_metamodel(file)?;
            ok(to_plantuml(&mm), &mm)
        }
        Command::Inst(InstCmd::Validate { file, metamodel }) => {
            let mm = load_metamodel(metamodel)?;
            let inst = parse_instance(&read(file)?, &mm).with_context(|| format!("{}", file.display()))?;
            let report = check_conformance(&inst, &mm);
            let text = if report.conforms() { "conforms\n".to_string() } else { report.to_text() };
            let mut out = ok(text, &report);
            out.code = if report.conforms() { 0 } else { 1 };
            out
        }
        Command::Ocl(OclCmd::Check { constraints, metamodel, instance }) => {
            let mm = load_metamodel(metamodel)?;
            let inst = parse_instance(&read(instance)?, &mm).with_context(|| format!("{}", instance.display()))?;
            let cs = parse_ocl(&read(constraints)?).with_context(|| format!("{}", constraints.display()))?;
            let report = check_all(&cs, &inst, &mm)?;
            let mut out = ok(report.to_text(), &report);
            out.code = if report.all_pass() { 0 } else { 1 };
            out
        }
        Command::Scenario(ScenarioCmd::Validate { file, regulation }) => {
            let s = load_scenario(file)?;
            let doc = regulation.as_deref().map(load_doc).transpose()?;
            let findings = validate_scenario(&s, doc.as_ref());
            let text = if findings.is_empty() {
                "valid: no findings\n".to_string()
            } else {
                findings.iter().map(|f| format!("{f}\n")).collect()
            };
            let mut out = ok(text, &findings);
            out.code = if findings.is_empty() { 0 } else { 1 };
            out
        }
        Command::Scenario(ScenarioCmd::EmitConfig { file }) => {
            let s = load_scenario(file)?;
            ok(emit_sim_config(&s), &s)
        }
        Command::Scenario(ScenarioCmd::EmitSim { file, template }) => {
            let s = load_scenario(file)?;
            let template = match template {
                Some(p) => read(p)?,
                None => DEFAULT_SIM_TEMPLATE.to_string(),
            };
            match emit_sim_script(&s, &template) {
                Ok(script) => ok(script.clone(), json!({ "script": script })),
                Err(e) => failure(e.to_string()),
            }
        }
        Command::Vss(VssCmd::Parse { file }) => {
            let catalog = load_catalog(file)?;
            ok(catalog.to_text(), &catalog)
        }
        Command::MapSignals(args) => match mapping(&args.opts)? {
            (_, _, Ok(maps)) => ok(format_mappings(&maps), &maps),
            (_, _, Err(e)) => failure(e),
        },
        Command::EmitCode(args) => {
            let (exp, catalog, maps) = mapping(&args.opts)?;
            let rules = parse_rules(&read(&args.rules)?).with_context(|| format!("{}", args.rules.display()))?;
            let template = match &args.template {
                Some(p) => read(p)?,
                None => DEFAULT_CODE_TEMPLATE.to_string(),
            };
            let result = maps.and_then(|maps| {
                validate_rules(&rules, &catalog).map_err(|e| e.to_string())?;
                emit_control_code(&exp, &maps, &rules, &template).map_err(|e| e.to_string())
            });
            match result {
                Ok(code) => ok(code.clone(), json!({ "code": code })),
                Err(e) => failure(e),
            }
        }
        Command::Bridge(BridgeCmd::Simulate { rules, events }) => {
            let rules = parse_rules(&read(rules)?).with_context(|| format!("{}", rules.display()))?;
            let events = parse_events(&read(events)?).with_context(|| format!("{}", events.display()))?;
            let trace = simulate_bridge(&rules, &events)?;
            ok(trace.to_text(), &trace)
        }
        Command::Pipeline(PipelineCmd::Run { config, backend, workspace }) => {
            let mut cfg = PipelineConfig::load(config)?;
            pipeline::apply_overrides(&mut cfg, backend.as_deref())?;
            if let Some(ws) = workspace {
                cfg.workspace = ws.clone();
            }
            let results = pipeline::run_pipeline(&cfg)?;
            let code = pipeline::exit_code(&results);
            Output { text: pipeline::summary(&results), json: serde_json::to_value(&results)?, error: None, code }
        }
    };
    Ok(out)
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
            } else {
                let _ = write!(stdout, "{rendered}");
            }
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(out) => {
            let _ = match cli.format {
                Format::Text => write!(stdout, "{}", out.text),
                Format::Json => writeln!(stdout, "{}", serde_json::to_string_pretty(&out.json).expect("json")),
            };
            if let Some(e) = out.error {
                let _ = writeln!(stderr, "error: {e}");
            }
            out.code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            2
        }
    }
}
