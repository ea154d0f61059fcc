//! Vehicle-side artifacts: the VSS signal catalog, mapping experiment actions
//! onto signals, rendering control code from rules, and an in-process event
//! bridge that replays telemetry against those rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::scenario::{Comparator, Outcome, TestScenario};
use crate::smartchunk::tokenize;
use crate::template::{self, TemplateError};

pub const DEFAULT_CODE_TEMPLATE: &str = include_str!("../templates/comapi_control.cpp.tmpl");
pub const DEFAULT_THRESHOLD: f64 = 0.5;

// ---------------------------------------------------------------- catalog

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VssError {
    #[error("line {line}: {reason}")]
    SyntaxError { line: usize, reason: String },
    #[error("line {line}: path '{path}' already declared")]
    DuplicatePath { line: usize, path: String },
    #[error("line {line}: min {min} > max {max} for '{path}'")]
    BadRange { line: usize, path: String, min: String, max: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Boolean,
    Int,
    Float,
    String,
}

impl DataType {
    pub fn name(self) -> &'static str {
        match self {
            DataType::Boolean => "boolean",
            DataType::Int => "int",
            DataType::Float => "float",
            DataType::String => "string",
        }
    }
}

impl FromStr for DataType {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "boolean" => Ok(DataType::Boolean),
            "int" => Ok(DataType::Int),
            "float" => Ok(DataType::Float),
            "string" => Ok(DataType::String),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VssEntry {
    pub datatype: DataType,
    pub unit: Option<String>,
    pub min: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct VssCatalog {
    pub entries: BTreeMap<String, VssEntry>,
}

impl VssCatalog {
    pub fn get(&self, path: &str) -> Option<&VssEntry> {
        self.entries.get(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (path, e) in &self.entries {
            out.push_str(path);
            out.push(';');
            out.push_str(e.datatype.name());
            if e.unit.is_some() || e.min.is_some() || e.max.is_some() {
                out.push(';');
                out.push_str(e.unit.as_deref().unwrap_or(""));
            }
            if e.min.is_some() || e.max.is_some() {
                let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                out.push_str(&format!(";{};{}", num(e.min), num(e.max)));
            }
            out.push('\n');
        }
        out
    }
}

fn valid_path(path: &str) -> bool {
    !path.is_empty()
        && path.split('.').all(|seg| !seg.is_empty())
        && !path.chars().any(|c| c.is_whitespace() || c == ';')
}

/// One entry per line: `path;datatype[;unit[;min;max]]`.
pub fn parse_vss_catalog(text: &str) -> Result<VssCatalog, VssError> {
    let mut catalog = VssCatalog::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let syntax = |reason: String| VssError::SyntaxError { line, reason };
        let fields: Vec<&str> = trimmed.split(';').map(str::trim).collect();
        if !matches!(fields.len(), 2 | 3 | 5) {
            return Err(syntax(format!("expected 2, 3 or 5 fields, got {}", fields.len())));
        }
        let path = fields[0];
        if !valid_path(path) {
            return Err(syntax(format!("bad signal path '{path}'")));
        }
        let datatype = fields[1]
            .parse::<DataType>()
            .map_err(|_| syntax(format!("unknown datatype '{}'", fields[1])))?;
        let unit = fields.get(2).filter(|u| !u.is_empty()).map(|u| u.to_string());
        let bound = |idx: usize| -> Result<Option<f64>, VssError> {
            match fields.get(idx) {
                None | Some(&"") => Ok(None),
                Some(raw) => raw
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Some)
                    .ok_or_else(|| VssError::SyntaxError { line, reason: format!("bad bound '{raw}'") }),
            }
        };
        let (min, max) = (bound(3)?, bound(4)?);
        if let (Some(lo), Some(hi)) = (min, max) {
            if lo > hi {
                return Err(VssError::BadRange {
                    line,
                    path: path.into(),
                    min: fields[3].into(),
                    max: fields[4].into(),
                });
            }
        }
        if catalog.entries.contains_key(path) {
            return Err(VssError::DuplicatePath { line, path: path.into() });
        }
        catalog.entries.insert(path.to_string(), VssEntry { datatype, unit, min, max });
    }
    Ok(catalog)
}

/// Alias table: lines `phrase=path`.
pub fn parse_aliases(text: &str) -> Result<BTreeMap<String, String>, VssError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (phrase, path) = trimmed
            .split_once('=')
            .map(|(a, b)| (a.trim(), b.trim()))
            .filter(|(a, b)| !a.is_empty() && !b.is_empty())
            .ok_or_else(|| VssError::SyntaxError { line, reason: "expected phrase=path".into() })?;
        if out.insert(phrase.to_string(), path.to_string()).is_some() {
            return Err(VssError::SyntaxError { line, reason: format!("alias '{phrase}' repeated") });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- experiment

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Actuation,
    Telemetry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Action {
    pub phrase: String,
    pub role: Role,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExperimentError {
    #[error("experiment has no actions")]
    NoActions,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentModel {
    pub scenario: TestScenario,
    pub actions: Vec<Action>,
}

fn outcome_phrase(o: Outcome) -> &'static str {
    match o {
        Outcome::CollisionAvoided | Outcome::Stopped => "brake",
        Outcome::WarningIssued => "collision warning",
    }
}

impl ExperimentModel {
    /// Telemetry actions from the post-condition assertions, actuation actions
    /// from the expected outcomes, then `extras`. A phrase appears once.
    pub fn from_scenario(scenario: TestScenario, extras: &[Action]) -> Result<Self, ExperimentError> {
        let mut actions: Vec<Action> = Vec::new();
        let mut push = |phrase: &str, role: Role| {
            if !actions.iter().any(|a| a.phrase == phrase) {
                actions.push(Action { phrase: phrase.to_string(), role });
            }
        };
        for a in &scenario.post.assertions {
            push(&a.signal, Role::Telemetry);
        }
        for o in &scenario.post.outcomes {
            push(outcome_phrase(*o), Role::Actuation);
        }
        for e in extras {
            push(&e.phrase, e.role);
        }
        if actions.is_empty() {
            return Err(ExperimentError::NoActions);
        }
        Ok(ExperimentModel { scenario, actions })
    }
}

// ---------------------------------------------------------------- mapping

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Alias,
    Fuzzy,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::Alias => "alias",
            Method::Fuzzy => "fuzzy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalMapping {
    pub phrase: String,
    pub role: Role,
    pub path: String,
    pub score: f64,
    pub method: Method,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("no signal for '{phrase}' (best {best_score:.3}: {})", candidates.join(", "))]
    NoMatch { phrase: String, best_score: f64, candidates: Vec<String> },
    #[error("'{phrase}' matches {} equally ({score:.3})", candidates.join(", "))]
    AmbiguousMapping { phrase: String, score: f64, candidates: Vec<String> },
    #[error("alias for '{phrase}' points at '{path}', which is not in the catalog")]
    AliasTargetMissing { phrase: String, path: String },
    #[error("signal catalog is empty")]
    EmptyCatalog,
}

/// Share of the phrase's distinct tokens found among the path's tokens.
pub fn overlap_score(phrase: &str, path: &str) -> f64 {
    let p: BTreeSet<String> = tokenize(phrase).into_iter().collect();
    if p.is_empty() {
        return 0.0;
    }
    let t: BTreeSet<String> = tokenize(path).into_iter().collect();
    p.intersection(&t).count() as f64 / p.len() as f64
}

/// Maps one phrase: exact path, then alias, then the unique best fuzzy match.
pub fn map_phrase(
    phrase: &str,
    catalog: &VssCatalog,
    aliases: &BTreeMap<String, String>,
    threshold: f64,
) -> Result<(String, f64, Method), MappingError> {
    if catalog.get(phrase).is_some() {
        return Ok((phrase.to_string(), 1.0, Method::Exact));
    }
    if let Some(path) = aliases.get(phrase) {
        if catalog.get(path).is_none() {
            return Err(MappingError::AliasTargetMissing { phrase: phrase.into(), path: path.clone() });
        }
        return Ok((path.clone(), 1.0, Method::Alias));
    }
    let mut best = 0.0_f64;
    let mut leaders: Vec<String> = Vec::new();
    for path in catalog.entries.keys() {
        let s = overlap_score(phrase, path);
        if s > best {
            best = s;
            leaders = vec![path.clone()];
        } else if s == best && s > 0.0 {
            leaders.push(path.clone());
        }
    }
    if best <= 0.0 || best < threshold {
        return Err(MappingError::NoMatch { phrase: phrase.into(), best_score: best, candidates: leaders });
    }
    if leaders.len() > 1 {
        return Err(MappingError::AmbiguousMapping { phrase: phrase.into(), score: best, candidates: leaders });
    }
    Ok((leaders.remove(0), best, Method::Fuzzy))
}

pub fn map_signals(
    exp: &ExperimentModel,
    catalog: &VssCatalog,
    aliases: &BTreeMap<String, String>,
    threshold: f64,
) -> Result<Vec<SignalMapping>, MappingError> {
    if catalog.is_empty() {
        return Err(MappingError::EmptyCatalog);
    }
    exp.actions
        .iter()
        .map(|a| {
            let (path, score, method) = map_phrase(&a.phrase, catalog, aliases, threshold)?;
            Ok(SignalMapping { phrase: a.phrase.clone(), role: a.role, path, score, method })
        })
        .collect()
}

pub fn format_mappings(mappings: &[SignalMapping]) -> String {
    mappings
        .iter()
        .map(|m| {
            format!(
                "{}\t{}\t{}\t{:.4}\t{}\n",
                m.phrase,
                match m.role {
                    Role::Actuation => "actuation",
                    Role::Telemetry => "telemetry",
                },
                m.path,
                m.score,
                m.method.name()
            )
        })
        .collect()
}

// ---------------------------------------------------------------- rules

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlRule {
    pub name: String,
    pub when_path: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub then_path: String,
    pub value: f64,
}

impl ControlRule {
    pub fn holds(&self, observed: f64) -> bool {
        self.comparator.holds(observed, self.threshold)
    }
}

impl fmt::Display for ControlRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: when {} {} {} then {} = {}",
            self.name,
            self.when_path,
            self.comparator.symbol(),
            self.threshold,
            self.then_path,
            self.value
        )
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("line {line}: {reason}")]
    SyntaxError { line: usize, reason: String },
    #[error("rule {rule}: signal '{path}' is not in the catalog")]
    UnknownSignal { rule: String, path: String },
    #[error("rule {rule}: {reason}")]
    BadValue { rule: String, reason: String },
}

fn parse_value(raw: &str) -> Option<f64> {
    match raw {
        "true" => Some(1.0),
        "false" => Some(0.0),
        _ => raw.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Lines `[Name:] when <path> <cmp> <threshold> then <path> = <value>`.
/// Unnamed rules are called `rule<N>`.
pub fn parse_rules(text: &str) -> Result<Vec<ControlRule>, RuleError> {
    let mut rules: Vec<ControlRule> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let syntax = |reason: &str| RuleError::SyntaxError { line, reason: reason.into() };
        let mut words: Vec<&str> = trimmed.split_whitespace().collect();
        let name = match words.first().and_then(|w| w.strip_suffix(':')) {
            Some(label) => {
                if !is_ident(label) {
                    return Err(syntax("rule name must be alphanumeric"));
                }
                words.remove(0);
                label.to_string()
            }
            None => format!("rule{}", rules.len() + 1),
        };
        if rules.iter().any(|r| r.name == name) {
            return Err(syntax(&format!("rule name '{name}' repeated")));
        }
        let ["when", when_path, cmp, threshold, "then", then_path, "=", value] = words[..] else {
            return Err(syntax("expected 'when <path> <cmp> <threshold> then <path> = <value>'"));
        };
        rules.push(ControlRule {
            name,
            when_path: when_path.into(),
            comparator: cmp.parse().map_err(|_| syntax(&format!("unknown comparator '{cmp}'")))?,
            threshold: parse_value(threshold).ok_or_else(|| syntax("threshold must be a finite number"))?,
            then_path: then_path.into(),
            value: parse_value(value).ok_or_else(|| syntax("value must be a finite number or boolean"))?,
        });
    }
    Ok(rules)
}

/// Both paths in the catalog, a numeric or boolean telemetry signal, and a
/// command value that fits the actuation signal's type and declared range.
pub fn validate_rules(rules: &[ControlRule], catalog: &VssCatalog) -> Result<(), RuleError> {
    for r in rules {
        let lookup = |path: &str| {
            catalog
                .get(path)
                .ok_or_else(|| RuleError::UnknownSignal { rule: r.name.clone(), path: path.into() })
        };
        let when = lookup(&r.when_path)?;
        let then = lookup(&r.then_path)?;
        let bad = |reason: String| RuleError::BadValue { rule: r.name.clone(), reason };
        if when.datatype == DataType::String {
            return Err(bad(format!("'{}' is a string signal", r.when_path)));
        }
        match then.datatype {
            DataType::String => return Err(bad(format!("'{}' is a string signal", r.then_path))),
            DataType::Boolean if r.value != 0.0 && r.value != 1.0 => {
                return Err(bad(format!("{} is not a boolean", r.value)))
            }
            DataType::Int if r.value.fract() != 0.0 => {
                return Err(bad(format!("{} is not an integer", r.value)))
            }
            _ => {}
        }
        if then.min.is_some_and(|lo| r.value < lo) || then.max.is_some_and(|hi| r.value > hi) {
            return Err(bad(format!("{} outside the range of '{}'", r.value, r.then_path)));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- code

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("rule {rule} uses '{path}', which no action maps to")]
    UnmappedSignalInRule { rule: String, path: String },
}

/// C identifier derived from a signal path.
pub fn signal_ident(path: &str) -> String {
    let body: String = path
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    format!("sig_{body}")
}

pub fn code_placeholders(
    mappings: &[SignalMapping],
    rules: &[ControlRule],
) -> Result<BTreeMap<&'static str, String>, CodeError> {
    let mapped: BTreeSet<&str> = mappings.iter().map(|m| m.path.as_str()).collect();
    for r in rules {
        for path in [&r.when_path, &r.then_path] {
            if !mapped.contains(path.as_str()) {
                return Err(CodeError::UnmappedSignalInRule { rule: r.name.clone(), path: path.clone() });
            }
        }
    }
    let declarations: Vec<String> = mapped
        .iter()
        .map(|p| format!("static const comapi::Signal {}{{\"{p}\"}};", signal_ident(p)))
        .collect();
    let handlers: Vec<String> = rules
        .iter()
        .map(|r| {
            format!(
                "// {r}\n\
                 static bool armed_rule_{name} = true;\n\
                 void handle_rule_{name}(double value) {{\n    \
                 const bool active = value {cmp} {thr};\n    \
                 if (active && armed_rule_{name}) {{\n        \
                 comapi::set({target}, {val});\n    \
                 }}\n    \
                 armed_rule_{name} = !active;\n\
                 }}\n",
                name = r.name,
                cmp = match r.comparator {
                    Comparator::Eq => "==",
                    c => c.symbol(),
                },
                thr = r.threshold,
                target = signal_ident(&r.then_path),
                val = r.value,
            )
        })
        .collect();
    let mut by_telemetry: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in rules {
        by_telemetry.entry(&r.when_path).or_default().push(&r.name);
    }
    let subscriptions: Vec<String> = by_telemetry
        .iter()
        .map(|(path, names)| {
            let calls: String = names.iter().map(|n| format!("    handle_rule_{n}(value);\n")).collect();
            format!("comapi::subscribe({}, [](double value) {{\n{calls}}});", signal_ident(path))
        })
        .collect();
    let mut values = BTreeMap::new();
    values.insert("signal_declarations", declarations.join("\n"));
    values.insert("handlers", handlers.join("\n").trim_end().to_string());
    values.insert("subscriptions", subscriptions.join("\n"));
    Ok(values)
}

/// Renders target code: a declaration per mapped signal, a subscription per
/// distinct telemetry path and a handler per rule.
pub fn emit_control_code(
    _exp: &ExperimentModel,
    mappings: &[SignalMapping],
    rules: &[ControlRule],
    template: &str,
) -> Result<String, CodeError> {
    Ok(template::render(template, &code_placeholders(mappings, rules)?)?)
}

// ---------------------------------------------------------------- bridge

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub path: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Command {
    pub time: f64,
    pub path: String,
    pub value: f64,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CommandTrace {
    pub commands: Vec<Command>,
}

impl CommandTrace {
    pub fn to_text(&self) -> String {
        self.commands
            .iter()
            .map(|c| format!("{};{};{}\n", c.time, c.path, c.value))
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("line {line}: {reason}")]
    SyntaxError { line: usize, reason: String },
    #[error("event {index} at t={time} precedes the previous event")]
    UnsortedEvents { index: usize, time: f64 },
}

/// Event file: lines `time;path;value`.
pub fn parse_events(text: &str) -> Result<Vec<Event>, BridgeError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let syntax = |reason: &str| BridgeError::SyntaxError { line, reason: reason.into() };
        let fields: Vec<&str> = trimmed.split(';').map(str::trim).collect();
        let [time, path, value] = fields[..] else {
            return Err(syntax("expected time;path;value"));
        };
        let time = time
            .parse::<f64>()
            .ok()
            .filter(|t| t.is_finite())
            .ok_or_else(|| syntax("time must be a finite number"))?;
        if !valid_path(path) {
            return Err(syntax("bad signal path"));
        }
        let value = parse_value(value).ok_or_else(|| syntax("value must be a finite number or boolean"))?;
        out.push(Event { time, path: path.into(), value });
    }
    Ok(out)
}

/// Replays `events` in order. A rule fires when its condition goes from
/// false or unknown to true, and is re-armed only by an event that makes the
/// condition false.
pub fn simulate_bridge(rules: &[ControlRule], events: &[Event]) -> Result<CommandTrace, BridgeError> {
    for (i, pair) in events.windows(2).enumerate() {
        if pair[1].time < pair[0].time {
            return Err(BridgeError::UnsortedEvents { index: i + 1, time: pair[1].time });
        }
    }
    let mut armed = vec![true; rules.len()];
    let mut trace = CommandTrace::default();
    for e in events {
        for (r, armed) in rules.iter().zip(armed.iter_mut()) {
            if r.when_path != e.path {
                continue;
            }
            if r.holds(e.value) {
                if *armed {
                    trace.commands.push(Command {
                        time: e.time,
                        path: r.then_path.clone(),
                        value: r.value,
                        rule: r.name.clone(),
                    });
                    *armed = false;
                }
            } else {
                *armed = true;
            }
        }
    }
    Ok(trace)
}
