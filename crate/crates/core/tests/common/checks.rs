//! One function per acceptance property. Each returns a short summary on
//! success and the first counterexample on failure, so the same check can run
//! small under `cargo test` and at full size in the acceptance binary.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use sdvgen::genconsensus::{select, Candidate, ConsensusError, ConsensusPolicy};
use sdvgen::mmcore::{
    check_conformance, parse_instance, parse_metamodel, parse_plantuml, serialize_instance,
    to_plantuml, AttrValue, MetaModel, ModelInstance, Object, ViolationKind,
};
use sdvgen::ocl::{evaluate, parse_ocl};
use sdvgen::regdoc::{build_reference_graph, parse_document};
use sdvgen::retrieve::{build_index, retrieve};
use sdvgen::scenario::{emit_sim_config, parse_scenario};
use sdvgen::smartchunk::{base_chunks, expand_chunk, Chunk, TokenBudget};
use sdvgen::vehiclecode::{parse_events, parse_rules, simulate_bridge, Event};

use super::*;

pub type Check = Result<String, String>;

// ------------------------------------------------------------------ 1

pub fn ocl_equivalence(constraints: usize, seed: u64) -> Check {
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    let mut r = rng(seed);
    let mut made = 0;
    while made < constraints {
        let mm = random_metamodel(&mut r);
        let Some(inst) = random_instance(&mut r, &mm) else { continue };
        if !check_conformance(&inst, &mm).conforms() {
            return Err(format!("generator produced a non-conforming instance:\n{}", serialize_instance(&inst, &mm)));
        }
        // a handful of constraints per (metamodel, instance) pair
        for _ in 0..5.min(constraints - made) {
            let ctx = mm.classes().map(|c| c.name.clone()).collect::<Vec<_>>().choose(&mut r).unwrap().clone();
            let body = OclGen::new(&mm).constraint(&mut r, &ctx);
            let text = format!("context {ctx} inv: {}", print(&body));
            let parsed = parse_ocl(&text).map_err(|e| format!("{text}: {e}"))?;
            made += 1;
            for (id, obj) in &inst.objects {
                if !mm.conforms_to(&obj.class, &ctx) {
                    continue;
                }
                let (got, _) = evaluate(&parsed[0], id, &inst, &mm);
                let want = RefInterp { mm: &mm, inst: &inst, this: id.clone() }.verdict(&body);
                if got.to_string() != want {
                    return Err(format!(
                        "{text}\non {id}: evaluator {got}, reference {want}\n{}",
                        serialize_instance(&inst, &mm)
                    ));
                }
                *tally.entry(want).or_default() += 1;
            }
        }
    }
    Ok(format!("{made} constraints, verdicts {tally:?}"))
}

// ------------------------------------------------------------------ 2

fn chunk(id: &str, text: &str) -> Chunk {
    Chunk {
        id: id.to_string(),
        member_clauses: Vec::new(),
        text: text.to_string(),
        token_count: text.split_whitespace().count(),
        expansion_depth: 0,
    }
}

pub fn retrieval_equivalence(queries: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let per_corpus = 20;
    let mut done = 0;
    while done < queries {
        let size = r.gen_range(50..=80);
        let corpus = random_corpus(&mut r, size);
        let chunks: Vec<Chunk> = corpus.iter().map(|(id, t)| chunk(id, t)).collect();
        let index = build_index(&chunks).map_err(|e| e.to_string())?;
        for _ in 0..per_corpus.min(queries - done) {
            let q = random_query(&mut r);
            let got = retrieve(&index, &q, 10);
            let want = brute_force_bm25(&corpus, &q, 10);
            let got_ids: Vec<&str> = got.iter().map(|c| c.id.as_str()).collect();
            let want_ids: Vec<&str> = want.iter().map(|c| c.0.as_str()).collect();
            if got_ids != want_ids {
                return Err(format!("query '{q}': retrieve {got_ids:?}, brute force {want_ids:?}"));
            }
            for (g, w) in got.iter().zip(&want) {
                if (g.bm25 - w.1).abs() > 1e-9 {
                    return Err(format!("query '{q}', chunk {}: {} vs {}", g.id, g.bm25, w.1));
                }
            }
            done += 1;
        }
    }
    Ok(format!("{done} queries, top-10 identical"))
}

// ------------------------------------------------------------------ 3

fn f1_edges() -> Edges {
    let pairs = [
        ("1.1", "1"),
        ("2.1", "2"),
        ("5.1", "5"),
        ("5.2", "5"),
        ("6.4", "6"),
        ("5.1", "5.2"),
        ("5.2", "6.4"),
        ("6.4", "5.1"),
    ];
    let mut edges = Edges::new();
    for (a, b) in pairs {
        edges.entry(a.to_string()).or_default().insert(b.to_string());
    }
    edges
}

fn closure_on(text: &str, edges: &Edges, r: &mut Rng8) -> Result<usize, String> {
    let doc = parse_document(text).map_err(|e| format!("{e}\n{text}"))?;
    let graph = build_reference_graph(&doc);
    let mut checked = 0;
    for granularity in 1..=2 {
        for seed in base_chunks(&doc, granularity) {
            let seeds: Vec<String> = seed.member_clauses.iter().map(|m| m.to_string()).collect();
            for depth in 0..=3 {
                let grown = expand_chunk(&seed, &graph, &doc, depth, TokenBudget::unlimited());
                let got: BTreeSet<String> = grown.member_clauses.iter().map(|m| m.to_string()).collect();
                let want = reachable(edges, &seeds, depth);
                if got != want {
                    return Err(format!(
                        "chunk {} depth {depth}: expansion {got:?}, reachability {want:?}\n{text}",
                        seed.id
                    ));
                }
                if got.len() != grown.member_clauses.len() {
                    return Err(format!("chunk {} depth {depth}: repeated member", seed.id));
                }
                let max = r.gen_range(1..=120);
                let budget = TokenBudget::new(max).unwrap();
                let tight = expand_chunk(&seed, &graph, &doc, depth, budget);
                if tight.token_count > max.max(seed.token_count) {
                    return Err(format!(
                        "chunk {} depth {depth} budget {max}: {} tokens",
                        seed.id, tight.token_count
                    ));
                }
                if tight.member_clauses[..seed.member_clauses.len()] != seed.member_clauses[..] {
                    return Err(format!("chunk {} lost a seed member under budget {max}", seed.id));
                }
                checked += 2;
            }
        }
    }
    Ok(checked)
}

pub fn expansion_closure(docs: usize, seed: u64) -> Check {
    let mut r = rng(seed);
    let mut expansions = closure_on(F1, &f1_edges(), &mut r)?;
    for _ in 0..docs {
        let d = random_document(&mut r);
        expansions += closure_on(&d.text, &d.edges, &mut r)?;
    }
    Ok(format!("F1 + {docs} documents, {expansions} expansions"))
}

// ------------------------------------------------------------------ 4

fn metamodel_round_trip(mm: &MetaModel) -> Result<(), String> {
    let puml = to_plantuml(mm);
    let from_puml = parse_plantuml(&puml).map_err(|e| format!("{e}\n{puml}"))?;
    if normalized(&from_puml) != normalized(mm) {
        return Err(format!("PlantUML round trip changed the metamodel:\n{puml}"));
    }
    let canonical = from_puml.to_canonical();
    let back = parse_metamodel(&canonical).map_err(|e| format!("{e}\n{canonical}"))?;
    if normalized(&back) != normalized(mm) || back.to_canonical() != canonical {
        return Err(format!("canonical round trip is not a fixpoint:\n{canonical}"));
    }
    Ok(())
}

fn instance_round_trip(inst: &ModelInstance, mm: &MetaModel) -> Result<(), String> {
    let text = serialize_instance(inst, mm);
    let back = parse_instance(&text, mm).map_err(|e| format!("{e}\n{text}"))?;
    if &back != inst {
        return Err(format!("instance round trip changed the model:\n{text}"));
    }
    Ok(())
}

fn scenario_round_trip(s: &sdvgen::scenario::TestScenario) -> Result<(), String> {
    let text = emit_sim_config(s);
    let back = parse_scenario(&text).map_err(|e| format!("{e}\n{text}"))?;
    if &back != s {
        return Err(format!("scenario round trip changed the scenario:\n{text}"));
    }
    Ok(())
}

pub fn round_trips(n: usize, seed: u64) -> Check {
    let p1 = parse_plantuml(P1).map_err(|e| e.to_string())?;
    metamodel_round_trip(&p1)?;
    instance_round_trip(&parse_instance(I1, &p1).map_err(|e| e.to_string())?, &p1)?;
    scenario_round_trip(&parse_scenario(S1).map_err(|e| e.to_string())?)?;

    let mut r = rng(seed);
    let (mut models, mut instances) = (0, 0);
    while models < n || instances < n {
        let mm = random_metamodel(&mut r);
        if models < n {
            metamodel_round_trip(&mm)?;
            models += 1;
        }
        if instances < n {
            if let Some(inst) = random_instance(&mut r, &mm) {
                instance_round_trip(&inst, &mm)?;
                instances += 1;
            }
        }
    }
    for _ in 0..n {
        scenario_round_trip(&random_scenario(&mut r))?;
    }
    Ok(format!("P1/I1/S1 + {n} metamodels, {n} instances, {n} scenarios"))
}

// ------------------------------------------------------------------ 5

type Mutant = (&'static str, ViolationKind, fn(&mut ModelInstance));

fn obj<'a>(inst: &'a mut ModelInstance, id: &str) -> &'a mut Object {
    inst.objects.get_mut(id).unwrap()
}

fn vehicle(sensors: &[&str]) -> Object {
    let mut v = Object::new("Vehicle");
    v.attributes.insert("name".into(), AttrValue::Str("other".into()));
    v.attributes.insert("maxSpeed".into(), AttrValue::Int(90));
    v.links.insert("sensors".into(), sensors.iter().map(|s| s.to_string()).collect());
    v
}

fn mutants() -> Vec<Mutant> {
    use ViolationKind::*;
    vec![
        ("s1", UnknownClass, |i| obj(i, "s1").class = "Radar".into()),
        ("v1", UnknownClass, |i| obj(i, "v1").class = "Car".into()),
        ("w1", UnknownClass, |i| {
            i.objects.insert("w1".into(), Object::new("Wheel"));
        }),
        ("v1", UnknownFeature, |i| {
            obj(i, "v1").attributes.insert("color".into(), AttrValue::Str("red".into()));
        }),
        ("s2", UnknownFeature, |i| {
            obj(i, "s2").attributes.insert("gain".into(), AttrValue::Int(3));
        }),
        ("v1", UnknownFeature, |i| {
            obj(i, "v1").links.insert("wheels".into(), vec!["s1".into()]);
        }),
        ("v1", TypeMismatch, |i| {
            obj(i, "v1").attributes.insert("maxSpeed".into(), AttrValue::Str("fast".into()));
        }),
        ("s1", TypeMismatch, |i| {
            obj(i, "s1").attributes.insert("range".into(), AttrValue::Bool(true));
        }),
        ("s2", TypeMismatch, |i| {
            obj(i, "s2").attributes.insert("type".into(), AttrValue::Int(3));
        }),
        ("v1", MultiplicityViolation, |i| {
            obj(i, "v1").links.remove("sensors");
        }),
        ("s1", MultiplicityViolation, |i| {
            obj(i, "s1").attributes.remove("range");
        }),
        ("v1", MultiplicityViolation, |i| {
            obj(i, "v1").attributes.remove("name");
        }),
        ("v1", DanglingReference, |i| obj(i, "v1").links.get_mut("sensors").unwrap().push("ghost".into())),
        ("v1", DanglingReference, |i| {
            obj(i, "v1").links.insert("sensors".into(), vec!["s1".into(), "s9".into()]);
        }),
        ("v2", DanglingReference, |i| {
            i.objects.insert("v2".into(), vehicle(&["nobody"]));
        }),
        ("v1", ContainmentCycle, |i| obj(i, "v1").links.get_mut("sensors").unwrap().push("v1".into())),
        ("v1", ContainmentCycle, |i| {
            i.objects.insert("v2".into(), vehicle(&["v1"]));
            obj(i, "v1").links.get_mut("sensors").unwrap().push("v2".into());
        }),
        ("v2", ContainmentCycle, |i| {
            i.objects.insert("v2".into(), vehicle(&["v2"]));
        }),
    ]
}

pub fn mutation_kill() -> Check {
    let mm = parse_plantuml(P1).map_err(|e| e.to_string())?;
    let base = parse_instance(I1, &mm).map_err(|e| e.to_string())?;
    let clean = check_conformance(&base, &mm);
    if !clean.violations.is_empty() {
        return Err(format!("unmutated I1 reported:\n{}", clean.to_text()));
    }
    let mut per_kind: BTreeMap<String, usize> = BTreeMap::new();
    for (n, (target, kind, mutate)) in mutants().into_iter().enumerate() {
        let mut inst = base.clone();
        mutate(&mut inst);
        let report = check_conformance(&inst, &mm);
        if !report.violations.iter().any(|v| v.object == target && v.kind == kind) {
            return Err(format!("mutant {n} ({kind:?} on {target}) survived:\n{}", report.to_text()));
        }
        *per_kind.entry(format!("{kind:?}")).or_default() += 1;
    }
    if per_kind.len() != 6 || per_kind.values().any(|&c| c < 3) {
        return Err(format!("mutant mix is too thin: {per_kind:?}"));
    }
    Ok(format!("{} mutants killed {per_kind:?}, unmutated clean", per_kind.values().sum::<usize>()))
}

// ------------------------------------------------------------------ 6

const DISTANCE: &str = "Vehicle.ADAS.ObstacleDistance";
const SPEED: &str = "Vehicle.Speed";

fn events(list: &[(f64, &str, f64)]) -> Vec<Event> {
    list.iter()
        .map(|(t, p, v)| Event { time: *t, path: p.to_string(), value: *v })
        .collect()
}

fn trace_of(rules: &str, evs: &[Event]) -> Result<Vec<(f64, String, f64)>, String> {
    let rules = parse_rules(rules).map_err(|e| e.to_string())?;
    let trace = simulate_bridge(&rules, evs).map_err(|e| e.to_string())?;
    Ok(trace.commands.into_iter().map(|c| (c.time, c.path, c.value)).collect())
}

pub fn bridge(random_traces: usize, seed: u64) -> Check {
    let brake = "Vehicle.Chassis.Brake.PedalPosition".to_string();
    let hand: [(Vec<(f64, &str, f64)>, Vec<(f64, String, f64)>); 3] = [
        (
            vec![(0.0, DISTANCE, 50.0), (1.0, DISTANCE, 8.0), (2.0, DISTANCE, 7.0)],
            vec![(1.0, brake.clone(), 100.0)],
        ),
        (
            vec![(1.0, DISTANCE, 8.0), (2.0, DISTANCE, 15.0), (3.0, DISTANCE, 6.0)],
            vec![(1.0, brake.clone(), 100.0), (3.0, brake.clone(), 100.0)],
        ),
        (vec![], vec![]),
    ];
    for (evs, want) in &hand {
        let got = trace_of(RULES, &events(evs))?;
        if &got != want {
            return Err(format!("events {evs:?}: trace {got:?}, expected {want:?}"));
        }
    }
    let fixture = trace_of(RULES, &parse_events(EVENTS).map_err(|e| e.to_string())?)?;
    if fixture != vec![(1.0, brake.clone(), 100.0), (4.0, brake.clone(), 100.0)] {
        return Err(format!("events fixture: trace {fixture:?}"));
    }

    let rules_text = format!(
        "R1: when {DISTANCE} < 10 then {brake} = 100\nR2: when {SPEED} >= 20 then Vehicle.ADAS.AEB.IsEnabled = true\n"
    );
    let oracle_rules: [(String, fn(f64) -> bool); 2] =
        [(DISTANCE.to_string(), |v| v < 10.0), (SPEED.to_string(), |v| v >= 20.0)];
    let names = ["R1", "R2"];
    let parsed = parse_rules(&rules_text).map_err(|e| e.to_string())?;
    let mut r = rng(seed);
    let mut fired = 0;
    for _ in 0..random_traces {
        let evs: Vec<(f64, String, f64)> = (0..r.gen_range(0..40))
            .map(|i| {
                let path = if r.gen_bool(0.6) { DISTANCE } else { SPEED };
                (i as f64 * 0.25, path.to_string(), r.gen_range(0..30) as f64)
            })
            .collect();
        let as_events: Vec<Event> =
            evs.iter().map(|(t, p, v)| Event { time: *t, path: p.clone(), value: *v }).collect();
        let trace = simulate_bridge(&parsed, &as_events).map_err(|e| e.to_string())?;
        let want = bridge_oracle(&oracle_rules, &evs);
        let got: Vec<(f64, &str)> = trace.commands.iter().map(|c| (c.time, c.rule.as_str())).collect();
        let expected: Vec<(f64, &str)> = want.iter().map(|f| (evs[f.event].0, names[f.rule])).collect();
        if got != expected {
            return Err(format!("events {evs:?}: trace {got:?}, oracle {expected:?}"));
        }
        // between two firings of one rule its condition was observed false
        for (j, name) in names.iter().enumerate() {
            let times: Vec<f64> = trace.commands.iter().filter(|c| c.rule == *name).map(|c| c.time).collect();
            for pair in times.windows(2) {
                let rearmed = evs.iter().any(|(t, p, v)| {
                    *t > pair[0] && *t < pair[1] && *p == oracle_rules[j].0 && !(oracle_rules[j].1)(*v)
                });
                if !rearmed {
                    return Err(format!("{name} fired at {} and {} without a false observation", pair[0], pair[1]));
                }
            }
        }
        fired += trace.commands.len();
    }
    Ok(format!("hand traces exact, {random_traces} random traces ({fired} commands) obey the edge-trigger law"))
}

// ------------------------------------------------------------------ 7

fn candidates(spec: &[Option<&str>]) -> Vec<Candidate> {
    spec.iter()
        .enumerate()
        .map(|(i, c)| {
            let mut cand = Candidate::new(i, c.unwrap_or("garbage"));
            cand.valid = c.is_some();
            cand.canonical = c.map(str::to_string);
            if c.is_none() {
                cand.diagnostic = Some("rejected".into());
            }
            cand
        })
        .collect()
}

pub fn consensus(random_sets: usize, seed: u64) -> Check {
    let policy = ConsensusPolicy::default();
    let examples: [(&[Option<&str>], Option<usize>); 3] = [
        (&[None, Some("A"), None, Some("B"), Some("A")], Some(1)),
        (&[Some("A"), Some("B"), Some("A"), Some("B")], Some(0)),
        (&[None, None, None], None),
    ];
    for (spec, want) in examples {
        match (select(&candidates(spec), policy), want) {
            (Ok(c), Some(w)) if c.index == w => {}
            (Err(ConsensusError::GenerationFailed { diagnostics, .. }), None) if diagnostics.len() == spec.len() => {}
            (got, _) => return Err(format!("{spec:?}: got {got:?}, expected {want:?}")),
        }
    }
    let mut r = rng(seed);
    let mut failed = 0;
    for _ in 0..random_sets {
        let spec: Vec<Option<&str>> = (0..r.gen_range(1..9))
            .map(|_| if r.gen_bool(0.3) { None } else { Some(*["A", "B", "C", "D"].choose(&mut r).unwrap()) })
            .collect();
        let oracle_input: Vec<(usize, Option<String>)> =
            spec.iter().enumerate().map(|(i, c)| (i, c.map(str::to_string))).collect();
        let want = consensus_oracle(&oracle_input);
        match (select(&candidates(&spec), policy), want) {
            (Ok(c), Some(w)) if c.index == w => {}
            (Err(ConsensusError::GenerationFailed { .. }), None) => failed += 1,
            (got, _) => return Err(format!("{spec:?}: got {got:?}, oracle {want:?}")),
        }
    }
    Ok(format!("3 examples + {random_sets} random sets agree ({failed} all-invalid)"))
}

// ------------------------------------------------------------------ 8

fn run_pipeline(workspace: &std::path::Path) -> Result<std::time::Duration, String> {
    let start = std::time::Instant::now();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_sdvgen"))
        .args(["pipeline", "run", "--config"])
        .arg(fixture_dir().join("pipeline.toml"))
        .arg("--workspace")
        .arg(workspace)
        .env_remove(sdvgen::pipeline::MOCK_DIR_ENV)
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if out.status.code() != Some(0) {
        return Err(format!(
            "exit {:?}\n{}{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let ok = stdout.lines().filter(|l| l.split_whitespace().nth(2) == Some("ok")).count();
    if ok != 11 {
        return Err(format!("expected 11 completed stages:\n{stdout}"));
    }
    Ok(elapsed)
}

fn artifacts(dir: &std::path::Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        out.insert(name, std::fs::read(entry.path()).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

pub fn end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let t1 = run_pipeline(&a)?;
    let t2 = run_pipeline(&b)?;
    let (first, second) = (artifacts(&a)?, artifacts(&b)?);
    let expected: BTreeSet<String> = sdvgen::pipeline::ARTIFACTS.iter().map(|s| s.to_string()).collect();
    let names: BTreeSet<String> = first.keys().cloned().collect();
    if names != expected {
        return Err(format!("artifacts {names:?}, expected {expected:?}"));
    }
    if first != second {
        let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
        return Err(format!("runs differ in {differing:?}"));
    }
    let slowest = t1.max(t2);
    if slowest.as_secs_f64() >= 5.0 {
        return Err(format!("slowest run took {slowest:?}"));
    }
    Ok(format!("11 stages, 11 artifacts byte-identical across two runs, slowest {slowest:?}"))
}
