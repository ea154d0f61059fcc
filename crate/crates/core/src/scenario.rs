//! Regulation-derived test scenarios: the line-oriented file format,
//! invariant checks, and emission of simulator configuration and scripts.
//!
//! ```text
//! scenario aebs_stationary
//! source 6.4
//! vehicle model=sedan
//! sensor radar pos=2.3,0.0,0.5 range=150
//! pre map=straight_road ego_pos=0,0,0 ego_speed=30
//! agent car pos=60,0,0 speed=0 heading=0
//! weather precipitation=0
//! post assert ego.speed = 0 eventually
//! post outcome collision_avoided
//! ```
//!
//! Speeds are km/h, positions meters, headings degrees.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::regdoc::{ClauseId, RegDocument};
use crate::template::{self, TemplateError};

pub const DEFAULT_SIM_TEMPLATE: &str = include_str!("../templates/carla_scenario.py.tmpl");

/// Weather keys understood by the simulator, with their admissible ranges.
pub const WEATHER_KEYS: &[(&str, f64, f64)] = &[
    ("cloudiness", 0.0, 100.0),
    ("fog_density", 0.0, 100.0),
    ("fog_distance", 0.0, f64::MAX),
    ("precipitation", 0.0, 100.0),
    ("precipitation_deposits", 0.0, 100.0),
    ("sun_altitude_angle", -90.0, 90.0),
    ("sun_azimuth_angle", 0.0, 360.0),
    ("wetness", 0.0, 100.0),
    ("wind_intensity", 0.0, 100.0),
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {reason}")]
    SyntaxError { line: usize, reason: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("invalid scenario: {}", .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    RangeError(Vec<Finding>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EmitError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("invalid scenario: {}", .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidScenario(Vec<Finding>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum SensorKind {
    Radar,
    Camera,
    Lidar,
}

impl SensorKind {
    pub fn name(self) -> &'static str {
        match self {
            SensorKind::Radar => "radar",
            SensorKind::Camera => "camera",
            SensorKind::Lidar => "lidar",
        }
    }
}

impl FromStr for SensorKind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "radar" => Ok(SensorKind::Radar),
            "camera" => Ok(SensorKind::Camera),
            "lidar" => Ok(SensorKind::Lidar),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sensor {
    pub kind: SensorKind,
    pub pos: [f64; 3],
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleDefinition {
    pub model: String,
    pub sensors: Vec<Sensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agent {
    pub id: String,
    pub kind: String,
    pub pos: [f64; 3],
    pub speed: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreConditions {
    pub map_name: String,
    pub ego_pos: [f64; 3],
    pub ego_speed: f64,
    pub agents: Vec<Agent>,
    pub weather: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Eq => "=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
            Comparator::Eq => lhs == rhs,
        }
    }
}

impl FromStr for Comparator {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "<" => Ok(Comparator::Lt),
            "<=" => Ok(Comparator::Le),
            ">" => Ok(Comparator::Gt),
            ">=" => Ok(Comparator::Ge),
            "=" => Ok(Comparator::Eq),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Window {
    Always,
    Eventually,
    AtEnd,
}

impl Window {
    pub fn name(self) -> &'static str {
        match self {
            Window::Always => "always",
            Window::Eventually => "eventually",
            Window::AtEnd => "at_end",
        }
    }
}

impl FromStr for Window {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "always" => Ok(Window::Always),
            "eventually" => Ok(Window::Eventually),
            "at_end" => Ok(Window::AtEnd),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub signal: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Outcome {
    CollisionAvoided,
    WarningIssued,
    Stopped,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::CollisionAvoided => "collision_avoided",
            Outcome::WarningIssued => "warning_issued",
            Outcome::Stopped => "stopped",
        }
    }
}

impl FromStr for Outcome {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "collision_avoided" => Ok(Outcome::CollisionAvoided),
            "warning_issued" => Ok(Outcome::WarningIssued),
            "stopped" => Ok(Outcome::Stopped),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PostConditions {
    pub assertions: Vec<Assertion>,
    pub outcomes: BTreeSet<Outcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestScenario {
    pub id: String,
    pub source_clauses: Vec<ClauseId>,
    pub vehicle: VehicleDefinition,
    pub pre: PreConditions,
    pub post: PostConditions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum FindingKind {
    EmptyId,
    NoSensors,
    NonFinite,
    NegativeSpeed,
    HeadingOutOfRange,
    DuplicateAgent,
    WeatherOutOfRange,
    EmptyPost,
    UnknownClause,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub message: String,
}

impl Finding {
    fn new(kind: FindingKind, message: impl Into<String>) -> Self {
        Finding { kind, message: message.into() }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

fn finite(findings: &mut Vec<Finding>, what: &str, values: &[f64]) {
    if values.iter().any(|v| !v.is_finite()) {
        findings.push(Finding::new(FindingKind::NonFinite, format!("{what} is not finite")));
    }
}

fn vehicle_findings(v: &VehicleDefinition, out: &mut Vec<Finding>) {
    if v.sensors.is_empty() {
        out.push(Finding::new(FindingKind::NoSensors, "vehicle has no sensors"));
    }
    for (i, s) in v.sensors.iter().enumerate() {
        finite(out, &format!("sensor {} position", i + 1), &s.pos);
    }
}

fn pre_findings(p: &PreConditions, out: &mut Vec<Finding>) {
    finite(out, "ego position", &p.ego_pos);
    finite(out, "ego speed", &[p.ego_speed]);
    if p.ego_speed < 0.0 {
        out.push(Finding::new(FindingKind::NegativeSpeed, format!("ego speed {} < 0", p.ego_speed)));
    }
    let mut seen = BTreeSet::new();
    for a in &p.agents {
        if !seen.insert(a.id.as_str()) {
            out.push(Finding::new(FindingKind::DuplicateAgent, format!("agent id '{}' repeated", a.id)));
        }
        finite(out, &format!("agent {} position", a.id), &a.pos);
        finite(out, &format!("agent {} speed", a.id), &[a.speed]);
        finite(out, &format!("agent {} heading", a.id), &[a.heading]);
        if a.speed < 0.0 {
            out.push(Finding::new(
                FindingKind::NegativeSpeed,
                format!("agent {} speed {} < 0", a.id, a.speed),
            ));
        }
        if !(0.0..360.0).contains(&a.heading) && a.heading.is_finite() {
            out.push(Finding::new(
                FindingKind::HeadingOutOfRange,
                format!("agent {} heading {} outside [0, 360)", a.id, a.heading),
            ));
        }
    }
    for (key, value) in &p.weather {
        let range = WEATHER_KEYS.iter().find(|(k, _, _)| k == key);
        let ok = match range {
            Some((_, lo, hi)) => value.is_finite() && *lo <= *value && *value <= *hi,
            None => false,
        };
        if !ok {
            out.push(Finding::new(
                FindingKind::WeatherOutOfRange,
                format!("weather {key}={value} out of range"),
            ));
        }
    }
}

fn post_findings(p: &PostConditions, out: &mut Vec<Finding>) {
    if p.assertions.is_empty() && p.outcomes.is_empty() {
        out.push(Finding::new(FindingKind::EmptyPost, "no assertion or expected outcome"));
    }
    for a in &p.assertions {
        finite(out, &format!("threshold of {}", a.signal), &[a.threshold]);
    }
}

/// Invariant findings, plus a provenance check when `doc` is given. An empty
/// report means the scenario is valid.
pub fn validate_scenario(s: &TestScenario, doc: Option<&RegDocument>) -> Vec<Finding> {
    let mut out = Vec::new();
    if s.id.is_empty() {
        out.push(Finding::new(FindingKind::EmptyId, "scenario id is empty"));
    }
    vehicle_findings(&s.vehicle, &mut out);
    pre_findings(&s.pre, &mut out);
    post_findings(&s.post, &mut out);
    if let Some(doc) = doc {
        for id in &s.source_clauses {
            if !doc.contains(id) {
                out.push(Finding::new(
                    FindingKind::UnknownClause,
                    format!("source clause {id} is not in the regulation"),
                ));
            }
        }
    }
    out
}

// ---------------------------------------------------------------- parsing

/// Lines of one scenario file, grouped by leading keyword.
#[derive(Default)]
struct Draft {
    id: Option<String>,
    sources: Vec<ClauseId>,
    model: Option<String>,
    sensors: Vec<Sensor>,
    map: Option<String>,
    ego_pos: Option<[f64; 3]>,
    ego_speed: Option<f64>,
    agents: Vec<Agent>,
    weather: BTreeMap<String, f64>,
    post: PostConditions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Vehicle,
    Pre,
    Post,
}

impl Section {
    fn admits(self, keyword: &str) -> bool {
        match self {
            Section::Vehicle => matches!(keyword, "vehicle" | "sensor"),
            Section::Pre => matches!(keyword, "pre" | "agent" | "weather"),
            Section::Post => keyword == "post",
        }
    }
}

fn syntax(line: usize, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::SyntaxError { line, reason: reason.into() }
}

fn number(line: usize, key: &str, raw: &str) -> Result<f64, ScenarioError> {
    raw.parse::<f64>()
        .map_err(|_| syntax(line, format!("'{key}' expects a number, got '{raw}'")))
}

fn triple(line: usize, key: &str, raw: &str) -> Result<[f64; 3], ScenarioError> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 3 {
        return Err(syntax(line, format!("'{key}' expects x,y,z, got '{raw}'")));
    }
    Ok([
        number(line, key, parts[0])?,
        number(line, key, parts[1])?,
        number(line, key, parts[2])?,
    ])
}

/// `key=value` pairs; each key at most once per line.
fn pairs<'a>(line: usize, words: &[&'a str]) -> Result<Vec<(&'a str, &'a str)>, ScenarioError> {
    let mut out: Vec<(&str, &str)> = Vec::new();
    for w in words {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| syntax(line, format!("expected key=value, got '{w}'")))?;
        if k.is_empty() || v.is_empty() {
            return Err(syntax(line, format!("expected key=value, got '{w}'")));
        }
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(syntax(line, format!("key '{k}' given twice")));
        }
        out.push((k, v));
    }
    Ok(out)
}

fn set_once<T>(slot: &mut Option<T>, value: T, line: usize, what: &str) -> Result<(), ScenarioError> {
    if slot.is_some() {
        return Err(syntax(line, format!("'{what}' given more than once")));
    }
    *slot = Some(value);
    Ok(())
}

fn parse_lines(text: &str, section: Option<Section>) -> Result<Draft, ScenarioError> {
    let mut d = Draft::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let words: Vec<&str> = trimmed.split_whitespace().collect();
        let keyword = words[0];
        if let Some(sec) = section {
            if !sec.admits(keyword) {
                return Err(syntax(line, format!("'{keyword}' does not belong in the {sec:?} section")));
            }
        }
        let args = &words[1..];
        match keyword {
            "scenario" => {
                let id = match args {
                    [] => String::new(),
                    [id] => id.to_string(),
                    _ => return Err(syntax(line, "scenario id must be one word")),
                };
                set_once(&mut d.id, id, line, "scenario")?;
            }
            "source" => {
                for word in args.iter().flat_map(|a| a.split(',')).filter(|w| !w.is_empty()) {
                    let id = word
                        .parse::<ClauseId>()
                        .map_err(|_| syntax(line, format!("bad clause id '{word}'")))?;
                    d.sources.push(id);
                }
            }
            "vehicle" => {
                let mut model = None;
                for (k, v) in pairs(line, args)? {
                    match k {
                        "model" => model = Some(v.to_string()),
                        _ => return Err(ScenarioError::UnknownKey { line, key: k.into() }),
                    }
                }
                let model = model.ok_or_else(|| syntax(line, "vehicle needs model="))?;
                set_once(&mut d.model, model, line, "vehicle")?;
            }
            "sensor" => {
                let (kind, rest) = args.split_first().ok_or_else(|| syntax(line, "sensor needs a kind"))?;
                let kind = kind
                    .parse::<SensorKind>()
                    .map_err(|_| syntax(line, format!("unknown sensor kind '{kind}'")))?;
                let mut pos = None;
                let mut params = BTreeMap::new();
                for (k, v) in pairs(line, rest)? {
                    match k {
                        "pos" => pos = Some(triple(line, k, v)?),
                        _ => {
                            params.insert(k.to_string(), v.to_string());
                        }
                    }
                }
                let pos = pos.ok_or_else(|| syntax(line, "sensor needs pos=x,y,z"))?;
                d.sensors.push(Sensor { kind, pos, params });
            }
            "pre" => {
                for (k, v) in pairs(line, args)? {
                    match k {
                        "map" => set_once(&mut d.map, v.to_string(), line, "map")?,
                        "ego_pos" => set_once(&mut d.ego_pos, triple(line, k, v)?, line, k)?,
                        "ego_speed" => set_once(&mut d.ego_speed, number(line, k, v)?, line, k)?,
                        _ => return Err(ScenarioError::UnknownKey { line, key: k.into() }),
                    }
                }
            }
            "agent" => {
                let (kind, rest) = args.split_first().ok_or_else(|| syntax(line, "agent needs a kind"))?;
                if kind.contains('=') {
                    return Err(syntax(line, "agent needs a kind before its keys"));
                }
                let (mut id, mut pos, mut speed, mut heading) = (None, None, None, None);
                for (k, v) in pairs(line, rest)? {
                    match k {
                        "id" => id = Some(v.to_string()),
                        "pos" => pos = Some(triple(line, k, v)?),
                        "speed" => speed = Some(number(line, k, v)?),
                        "heading" => heading = Some(number(line, k, v)?),
                        _ => return Err(ScenarioError::UnknownKey { line, key: k.into() }),
                    }
                }
                let missing = |what: &str| syntax(line, format!("agent needs {what}="));
                d.agents.push(Agent {
                    id: id.unwrap_or_else(|| format!("agent{}", d.agents.len() + 1)),
                    kind: kind.to_string(),
                    pos: pos.ok_or_else(|| missing("pos"))?,
                    speed: speed.ok_or_else(|| missing("speed"))?,
                    heading: heading.ok_or_else(|| missing("heading"))?,
                });
            }
            "weather" => {
                for (k, v) in pairs(line, args)? {
                    if !WEATHER_KEYS.iter().any(|(name, _, _)| *name == k) {
                        return Err(ScenarioError::UnknownKey { line, key: k.into() });
                    }
                    if d.weather.insert(k.to_string(), number(line, k, v)?).is_some() {
                        return Err(syntax(line, format!("weather '{k}' given more than once")));
                    }
                }
            }
            "post" => match args {
                ["assert", signal, cmp, threshold, window] => {
                    let comparator = cmp
                        .parse::<Comparator>()
                        .map_err(|_| syntax(line, format!("unknown comparator '{cmp}'")))?;
                    let window = window
                        .parse::<Window>()
                        .map_err(|_| syntax(line, format!("unknown window '{window}'")))?;
                    d.post.assertions.push(Assertion {
                        signal: signal.to_string(),
                        comparator,
                        threshold: number(line, "threshold", threshold)?,
                        window,
                    });
                }
                ["assert", ..] => {
                    return Err(syntax(line, "expected 'post assert <signal> <cmp> <threshold> <window>'"))
                }
                ["outcome", name] => {
                    let outcome = name
                        .parse::<Outcome>()
                        .map_err(|_| syntax(line, format!("unknown outcome '{name}'")))?;
                    d.post.outcomes.insert(outcome);
                }
                _ => return Err(syntax(line, "expected 'post assert ...' or 'post outcome ...'")),
            },
            other => return Err(ScenarioError::UnknownKey { line, key: other.into() }),
        }
    }
    Ok(d)
}

fn need<T>(v: Option<T>, what: &str) -> Result<T, ScenarioError> {
    v.ok_or_else(|| syntax(0, format!("missing {what}")))
}

fn range_check(findings: Vec<Finding>) -> Result<(), ScenarioError> {
    if findings.is_empty() {
        Ok(())
    } else {
        Err(ScenarioError::RangeError(findings))
    }
}

/// Parses a complete scenario file. Invariant breaches surface as
/// `RangeError` carrying the validation findings.
pub fn parse_scenario(text: &str) -> Result<TestScenario, ScenarioError> {
    let d = parse_lines(text, None)?;
    let s = TestScenario {
        id: need(d.id, "'scenario' line")?,
        source_clauses: d.sources,
        vehicle: VehicleDefinition { model: need(d.model, "'vehicle' line")?, sensors: d.sensors },
        pre: PreConditions {
            map_name: need(d.map, "pre map=")?,
            ego_pos: need(d.ego_pos, "pre ego_pos=")?,
            ego_speed: need(d.ego_speed, "pre ego_speed=")?,
            agents: d.agents,
            weather: d.weather,
        },
        post: d.post,
    };
    range_check(validate_scenario(&s, None))?;
    Ok(s)
}

/// Parses a single category section (as produced by one generation step)
/// and returns its canonical text.
pub fn parse_section(text: &str, section: Section) -> Result<String, ScenarioError> {
    let d = parse_lines(text, Some(section))?;
    let mut findings = Vec::new();
    let canonical = match section {
        Section::Vehicle => {
            let v = VehicleDefinition { model: need(d.model, "'vehicle' line")?, sensors: d.sensors };
            vehicle_findings(&v, &mut findings);
            emit_vehicle(&v)
        }
        Section::Pre => {
            let p = PreConditions {
                map_name: need(d.map, "pre map=")?,
                ego_pos: need(d.ego_pos, "pre ego_pos=")?,
                ego_speed: need(d.ego_speed, "pre ego_speed=")?,
                agents: d.agents,
                weather: d.weather,
            };
            pre_findings(&p, &mut findings);
            emit_pre(&p)
        }
        Section::Post => {
            post_findings(&d.post, &mut findings);
            emit_post(&d.post)
        }
    };
    range_check(findings)?;
    Ok(canonical)
}

/// Concatenates independently generated scenario texts into one file.
/// Lines repeated verbatim are kept once; a singleton setting (scenario id,
/// vehicle, a `pre` or `weather` key) given different values is reported as
/// a `Conflict` and the first value wins.
pub fn merge_sections(parts: &[&str]) -> (String, Vec<Finding>) {
    let mut lines: Vec<String> = Vec::new();
    let mut singletons: BTreeMap<String, String> = BTreeMap::new();
    let mut findings = Vec::new();
    for part in parts {
        for raw in part.lines() {
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let words: Vec<&str> = trimmed.split_whitespace().collect();
            let normalized = words.join(" ");
            if lines.contains(&normalized) {
                continue;
            }
            let keys: Vec<(String, String)> = match words[0] {
                "scenario" | "vehicle" => vec![(words[0].to_string(), words[1..].join(" "))],
                "pre" | "weather" => words[1..]
                    .iter()
                    .map(|w| match w.split_once('=') {
                        Some((k, v)) => (format!("{} {k}", words[0]), v.to_string()),
                        None => (format!("{} {w}", words[0]), String::new()),
                    })
                    .collect(),
                _ => Vec::new(),
            };
            let mut kept: Vec<&str> = vec![words[0]];
            let mut conflicted = false;
            for ((key, value), word) in keys.iter().zip(words[1..].iter().chain(std::iter::repeat(&""))) {
                match singletons.get(key) {
                    Some(prev) if prev != value => {
                        findings.push(Finding::new(
                            FindingKind::Conflict,
                            format!("'{key}' is '{prev}' in one section and '{value}' in another"),
                        ));
                        conflicted = true;
                    }
                    Some(_) => {}
                    None => {
                        singletons.insert(key.clone(), value.clone());
                        kept.push(word);
                    }
                }
            }
            if keys.is_empty() {
                lines.push(normalized);
            } else if matches!(words[0], "scenario" | "vehicle") {
                if !conflicted {
                    lines.push(normalized);
                }
            } else if kept.len() > 1 {
                lines.push(kept.join(" "));
            }
        }
    }
    let mut text = lines.join("\n");
    text.push('\n');
    (text, findings)
}

// ---------------------------------------------------------------- emission

fn fmt3(p: &[f64; 3]) -> String {
    format!("{},{},{}", p[0], p[1], p[2])
}

fn emit_vehicle(v: &VehicleDefinition) -> String {
    let mut out = format!("vehicle model={}\n", v.model);
    for s in &v.sensors {
        out.push_str(&format!("sensor {} pos={}", s.kind.name(), fmt3(&s.pos)));
        for (k, val) in &s.params {
            out.push_str(&format!(" {k}={val}"));
        }
        out.push('\n');
    }
    out
}

fn emit_pre(p: &PreConditions) -> String {
    let mut out = format!(
        "pre map={} ego_pos={} ego_speed={}\n",
        p.map_name,
        fmt3(&p.ego_pos),
        p.ego_speed
    );
    for a in &p.agents {
        out.push_str(&format!(
            "agent {} id={} pos={} speed={} heading={}\n",
            a.kind,
            a.id,
            fmt3(&a.pos),
            a.speed,
            a.heading
        ));
    }
    if !p.weather.is_empty() {
        out.push_str("weather");
        for (k, v) in &p.weather {
            out.push_str(&format!(" {k}={v}"));
        }
        out.push('\n');
    }
    out
}

fn emit_post(p: &PostConditions) -> String {
    let mut out = String::new();
    for a in &p.assertions {
        out.push_str(&format!(
            "post assert {} {} {} {}\n",
            a.signal,
            a.comparator.symbol(),
            a.threshold,
            a.window.name()
        ));
    }
    for o in &p.outcomes {
        out.push_str(&format!("post outcome {}\n", o.name()));
    }
    out
}

/// Canonical scenario file text; `parse_scenario` reads it back unchanged.
pub fn emit_sim_config(s: &TestScenario) -> String {
    let mut out = format!("scenario {}\n", s.id);
    if !s.source_clauses.is_empty() {
        let ids: Vec<String> = s.source_clauses.iter().map(|c| c.to_string()).collect();
        out.push_str(&format!("source {}\n", ids.join(" ")));
    }
    out.push_str(&emit_vehicle(&s.vehicle));
    out.push_str(&emit_pre(&s.pre));
    out.push_str(&emit_post(&s.post));
    out
}

fn py_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn py_num(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Values for every placeholder a simulation script template may use.
pub fn script_placeholders(s: &TestScenario) -> BTreeMap<&'static str, String> {
    let [x, y, z] = s.pre.ego_pos;
    let sensors: Vec<String> = s
        .vehicle
        .sensors
        .iter()
        .map(|sn| {
            let params: Vec<String> =
                sn.params.iter().map(|(k, v)| format!("{}: {}", py_str(k), py_str(v))).collect();
            format!(
                "attach_sensor(ego, {}, x={}, y={}, z={}, params={{{}}})",
                py_str(sn.kind.name()),
                py_num(sn.pos[0]),
                py_num(sn.pos[1]),
                py_num(sn.pos[2]),
                params.join(", ")
            )
        })
        .collect();
    let agents: Vec<String> = s
        .pre
        .agents
        .iter()
        .map(|a| {
            format!(
                "spawn_agent(world, {}, {}, x={}, y={}, z={}, speed={}, heading={})",
                py_str(&a.id),
                py_str(&a.kind),
                py_num(a.pos[0]),
                py_num(a.pos[1]),
                py_num(a.pos[2]),
                py_num(a.speed),
                py_num(a.heading)
            )
        })
        .collect();
    let weather: Vec<String> = s.pre.weather.iter().map(|(k, v)| format!("{k}={}", py_num(*v))).collect();
    let assertions: Vec<String> = s
        .post
        .assertions
        .iter()
        .map(|a| {
            format!(
                "check_assertion(log, {}, {}, {}, {})",
                py_str(&a.signal),
                py_str(a.comparator.symbol()),
                py_num(a.threshold),
                py_str(a.window.name())
            )
        })
        .collect();
    let outcomes: Vec<String> = s.post.outcomes.iter().map(|o| py_str(o.name())).collect();

    let mut values = BTreeMap::new();
    values.insert("scenario_id", py_str(&s.id));
    values.insert("map", py_str(&s.pre.map_name));
    values.insert("ego_spawn", format!("x={}, y={}, z={}", py_num(x), py_num(y), py_num(z)));
    values.insert("ego_speed", py_num(s.pre.ego_speed));
    values.insert("sensors", sensors.join("\n"));
    values.insert("agents", agents.join("\n"));
    values.insert("weather", weather.join(", "));
    values.insert("assertions", assertions.join("\n"));
    values.insert("outcomes", format!("[{}]", outcomes.join(", ")));
    values
}

/// Renders `template` for a valid scenario.
pub fn emit_sim_script(s: &TestScenario, template: &str) -> Result<String, EmitError> {
    let findings = validate_scenario(s, None);
    if !findings.is_empty() {
        return Err(EmitError::InvalidScenario(findings));
    }
    Ok(template::render(template, &script_placeholders(s))?)
}
