//! Seeded generators and brute-force oracles shared by the integration and
//! acceptance tests. Nothing here calls into the code paths it checks.
#![allow(dead_code)]

pub mod checks;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use sdvgen::mmcore::{
    AttrType, AttrValue, Attribute, MetaClass, MetaModel, ModelInstance, Multiplicity, Object,
    Reference, Upper,
};
use sdvgen::scenario::{
    Agent, Assertion, Comparator, Outcome, PostConditions, PreConditions, Sensor, SensorKind,
    TestScenario, VehicleDefinition, Window,
};

pub type Rng8 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng8 {
    rand::SeedableRng::seed_from_u64(seed)
}

pub const F1: &str = include_str!("../../fixtures/minireg.txt");
pub const P1: &str = include_str!("../../fixtures/p1.puml");
pub const I1: &str = include_str!("../../fixtures/i1.xmi");
pub const S1: &str = include_str!("../../fixtures/s1.scn");
pub const V1: &str = include_str!("../../fixtures/v1.vss");
pub const RULES: &str = include_str!("../../fixtures/rules.txt");
pub const EVENTS: &str = include_str!("../../fixtures/events.txt");

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

// ---------------------------------------------------------------- metamodels

const ATTR_TYPES: [AttrType; 4] = [AttrType::String, AttrType::Int, AttrType::Real, AttrType::Bool];

fn random_multiplicity(r: &mut Rng8, containment: bool) -> Multiplicity {
    let choices: &[(u32, Upper)] = if containment {
        &[(0, Upper::Bounded(1)), (0, Upper::Unbounded), (0, Upper::Bounded(3))]
    } else {
        &[
            (0, Upper::Bounded(1)),
            (1, Upper::Bounded(1)),
            (0, Upper::Unbounded),
            (1, Upper::Unbounded),
            (0, Upper::Bounded(3)),
        ]
    };
    let (lower, upper) = *choices.choose(r).unwrap();
    Multiplicity { lower, upper }
}

/// Up to four classes named `C0..`, features `a<n>` / `r<n>` numbered across
/// the whole model so inherited names never clash.
pub fn random_metamodel(r: &mut Rng8) -> MetaModel {
    let n = r.gen_range(1..=4);
    let names: Vec<String> = (0..n).map(|i| format!("C{i}")).collect();
    let mut counter = 0;
    let mut classes = Vec::new();
    for i in 0..n {
        let mut c = MetaClass::new(names[i].clone());
        if i > 0 && r.gen_bool(0.3) {
            c.supertype = Some(names[r.gen_range(0..i)].clone());
        }
        for _ in 0..r.gen_range(0..=3) {
            c.attributes.push(Attribute {
                name: format!("a{counter}"),
                ty: *ATTR_TYPES.choose(r).unwrap(),
                required: r.gen_bool(0.4),
            });
            counter += 1;
        }
        for _ in 0..r.gen_range(0..=2) {
            let containment = r.gen_bool(0.3);
            c.references.push(Reference {
                name: format!("r{counter}"),
                target: names[r.gen_range(0..n)].clone(),
                containment,
                multiplicity: random_multiplicity(r, containment),
            });
            counter += 1;
        }
        classes.push(c);
    }
    MetaModel::new(classes).expect("generated metamodel is well formed")
}

/// Classes with features sorted by name, for order-insensitive comparison.
pub fn normalized(mm: &MetaModel) -> Vec<MetaClass> {
    let mut out: Vec<MetaClass> = mm.classes().cloned().collect();
    out.sort_by(|a, b| a.name.cmp(&b.name));
    for c in &mut out {
        c.attributes.sort_by(|a, b| a.name.cmp(&b.name));
        c.references.sort_by(|a, b| a.name.cmp(&b.name));
    }
    out
}

fn lineage(mm: &MetaModel, class: &str) -> Vec<MetaClass> {
    let mut out = Vec::new();
    let mut cur = mm.class(class).cloned();
    while let Some(c) = cur {
        cur = c.supertype.as_deref().and_then(|s| mm.class(s)).cloned();
        out.push(c);
    }
    out
}

fn is_kind_of(mm: &MetaModel, class: &str, ancestor: &str) -> bool {
    lineage(mm, class).iter().any(|c| c.name == ancestor)
}

fn random_value(r: &mut Rng8, ty: AttrType) -> AttrValue {
    match ty {
        AttrType::String => AttrValue::Str(["x", "y", "radar", "cam"].choose(r).unwrap().to_string()),
        AttrType::Int => AttrValue::Int(r.gen_range(-3..=5)),
        AttrType::Real => AttrValue::Real(r.gen_range(-8..=20) as f64 / 4.0),
        AttrType::Bool => AttrValue::Bool(r.gen()),
    }
}

fn pick_count(r: &mut Rng8, m: Multiplicity, available: usize) -> Option<usize> {
    let hi = match m.upper {
        Upper::Bounded(u) => (u as usize).min(available),
        Upper::Unbounded => available.min(m.lower as usize + 3),
    };
    let lo = m.lower as usize;
    (lo <= hi).then(|| r.gen_range(lo..=hi))
}

fn try_instance(r: &mut Rng8, mm: &MetaModel) -> Option<ModelInstance> {
    let classes: Vec<String> = mm.classes().map(|c| c.name.clone()).collect();
    let count = r.gen_range(1..=15);
    let ids: Vec<String> = (0..count).map(|i| format!("o{i}")).collect();
    let kinds: Vec<String> = ids.iter().map(|_| classes.choose(r).unwrap().clone()).collect();
    let mut contained = vec![false; count];
    let mut inst = ModelInstance::default();
    for i in 0..count {
        let mut obj = Object::new(kinds[i].clone());
        for c in lineage(mm, &kinds[i]) {
            for a in &c.attributes {
                if a.required || r.gen_bool(0.7) {
                    obj.attributes.insert(a.name.clone(), random_value(r, a.ty));
                }
            }
            for rf in &c.references {
                // containment only points forward, so the forest property holds
                let pool: Vec<usize> = (0..count)
                    .filter(|&j| is_kind_of(mm, &kinds[j], &rf.target))
                    .filter(|&j| !rf.containment || (j > i && !contained[j]))
                    .collect();
                let k = pick_count(r, rf.multiplicity, pool.len())?;
                if k == 0 && r.gen_bool(0.5) {
                    continue;
                }
                let mut chosen: Vec<usize> = pool.choose_multiple(r, k).copied().collect();
                chosen.sort_unstable();
                if rf.containment {
                    for &j in &chosen {
                        contained[j] = true;
                    }
                }
                obj.links
                    .insert(rf.name.clone(), chosen.iter().map(|&j| ids[j].clone()).collect());
            }
        }
        inst.objects.insert(ids[i].clone(), obj);
    }
    Some(inst)
}

/// A conforming instance of at most 15 objects; `None` when the metamodel's
/// lower bounds could not be met within a few attempts.
pub fn random_instance(r: &mut Rng8, mm: &MetaModel) -> Option<ModelInstance> {
    (0..40).find_map(|_| try_instance(r, mm))
}

// ------------------------------------------------------ reference OCL model

#[derive(Debug, Clone)]
pub enum RExpr {
    SelfRef,
    Var(String),
    Int(i64),
    Real(f64),
    Str(String),
    Bool(bool),
    Not(Box<RExpr>),
    Neg(Box<RExpr>),
    Bin(&'static str, Box<RExpr>, Box<RExpr>),
    Nav(Box<RExpr>, String),
    Size(Box<RExpr>),
    IsEmpty(Box<RExpr>),
    NotEmpty(Box<RExpr>),
    Sum(Box<RExpr>),
    Includes(Box<RExpr>, Box<RExpr>),
    Iter(&'static str, Box<RExpr>, String, Box<RExpr>),
}

fn b(e: RExpr) -> Box<RExpr> {
    Box::new(e)
}

/// Concrete syntax, parenthesized everywhere it could matter.
pub fn print(e: &RExpr) -> String {
    match e {
        RExpr::SelfRef => "self".into(),
        RExpr::Var(v) => v.clone(),
        RExpr::Int(i) => i.to_string(),
        RExpr::Real(x) => format!("{x:?}"),
        RExpr::Str(s) => format!("'{s}'"),
        RExpr::Bool(v) => v.to_string(),
        RExpr::Not(x) => format!("(not {})", print(x)),
        RExpr::Neg(x) => format!("(-({}))", print(x)),
        RExpr::Bin(op, l, r) => format!("({} {op} {})", print(l), print(r)),
        RExpr::Nav(x, f) => format!("({}).{f}", print(x)),
        RExpr::Size(x) => format!("({})->size()", print(x)),
        RExpr::IsEmpty(x) => format!("({})->isEmpty()", print(x)),
        RExpr::NotEmpty(x) => format!("({})->notEmpty()", print(x)),
        RExpr::Sum(x) => format!("({})->sum()", print(x)),
        RExpr::Includes(x, y) => format!("({})->includes({})", print(x), print(y)),
        RExpr::Iter(k, x, v, body) => format!("({})->{k}({v} | {})", print(x), print(body)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RVal {
    I(i64),
    R(f64),
    S(String),
    B(bool),
    O(String),
    L(Vec<RVal>),
    U,
}

/// Any type error. The verdict only needs to know that one happened.
#[derive(Debug)]
pub struct Bad;

type R = Result<RVal, Bad>;

fn num(v: &RVal) -> Option<f64> {
    match v {
        RVal::I(i) => Some(*i as f64),
        RVal::R(x) => Some(*x),
        _ => None,
    }
}

fn fin(x: f64) -> RVal {
    if x.is_finite() {
        RVal::R(x)
    } else {
        RVal::U
    }
}

fn eq(a: &RVal, c: &RVal) -> Result<bool, Bad> {
    use RVal::*;
    Ok(match (a, c) {
        (I(x), I(y)) => x == y,
        (I(_) | R(_), I(_) | R(_)) => num(a) == num(c),
        (S(x), S(y)) => x == y,
        (B(x), B(y)) => x == y,
        (O(x), O(y)) => x == y,
        _ => return Err(Bad),
    })
}

fn member_eq(a: &RVal, c: &RVal) -> bool {
    match (a, c) {
        (RVal::L(x), RVal::L(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| member_eq(p, q)),
        (RVal::U, _) | (_, RVal::U) => false,
        _ => eq(a, c).unwrap_or(false),
    }
}

fn tv(v: &RVal) -> Result<Option<bool>, Bad> {
    match v {
        RVal::B(x) => Ok(Some(*x)),
        RVal::U => Ok(None),
        _ => Err(Bad),
    }
}

fn kleene_and(x: Option<bool>, y: Option<bool>) -> Option<bool> {
    if x == Some(false) || y == Some(false) {
        Some(false)
    } else if x == Some(true) && y == Some(true) {
        Some(true)
    } else {
        None
    }
}

fn kleene_or(x: Option<bool>, y: Option<bool>) -> Option<bool> {
    kleene_and(x.map(|v| !v), y.map(|v| !v)).map(|v| !v)
}

fn from_tv(x: Option<bool>) -> RVal {
    x.map_or(RVal::U, RVal::B)
}

pub struct RefInterp<'a> {
    pub mm: &'a MetaModel,
    pub inst: &'a ModelInstance,
    pub this: String,
}

impl RefInterp<'_> {
    fn attr_type(&self, class: &str, name: &str) -> Option<AttrType> {
        lineage(self.mm, class)
            .iter()
            .flat_map(|c| c.attributes.clone())
            .find(|a| a.name == name)
            .map(|a| a.ty)
    }

    fn reference(&self, class: &str, name: &str) -> Option<Reference> {
        lineage(self.mm, class)
            .iter()
            .flat_map(|c| c.references.clone())
            .find(|r| r.name == name)
    }

    fn nav_one(&self, id: &str, feature: &str) -> R {
        let Some(obj) = self.inst.objects.get(id) else { return Ok(RVal::U) };
        if self.mm.class(&obj.class).is_none() {
            return Ok(RVal::U);
        }
        if let Some(ty) = self.attr_type(&obj.class, feature) {
            return Ok(match (obj.attributes.get(feature), ty) {
                (Some(AttrValue::Int(i)), AttrType::Int) => RVal::I(*i),
                (Some(AttrValue::Real(x)), AttrType::Real) => RVal::R(*x),
                (Some(AttrValue::Str(s)), AttrType::String) => RVal::S(s.clone()),
                (Some(AttrValue::Bool(v)), AttrType::Bool) => RVal::B(*v),
                _ => RVal::U,
            });
        }
        let Some(rf) = self.reference(&obj.class, feature) else { return Err(Bad) };
        let targets = obj.links.get(feature).cloned().unwrap_or_default();
        if rf.multiplicity.upper == Upper::Bounded(1) {
            Ok(if targets.len() == 1 { RVal::O(targets[0].clone()) } else { RVal::U })
        } else {
            Ok(RVal::L(targets.into_iter().map(RVal::O).collect()))
        }
    }

    pub fn eval(&self, e: &RExpr, env: &mut Vec<(String, RVal)>) -> R {
        use RVal::*;
        match e {
            RExpr::SelfRef => Ok(O(self.this.clone())),
            RExpr::Var(v) => env.iter().rev().find(|(n, _)| n == v).map(|p| p.1.clone()).ok_or(Bad),
            RExpr::Int(i) => Ok(I(*i)),
            RExpr::Real(x) => Ok(R(*x)),
            RExpr::Str(s) => Ok(S(s.clone())),
            RExpr::Bool(v) => Ok(B(*v)),
            RExpr::Not(x) => Ok(from_tv(tv(&self.eval(x, env)?)?.map(|v| !v))),
            RExpr::Neg(x) => match self.eval(x, env)? {
                I(i) => Ok(i.checked_neg().map_or(U, I)),
                R(x) => Ok(R(-x)),
                U => Ok(U),
                _ => Err(Bad),
            },
            RExpr::Bin(op, l, r) => {
                let a = self.eval(l, env)?;
                let c = self.eval(r, env)?;
                self.bin(op, a, c)
            }
            RExpr::Nav(x, f) => match self.eval(x, env)? {
                U => Ok(U),
                O(id) => self.nav_one(&id, f),
                L(items) => {
                    let mut out = Vec::new();
                    for it in items {
                        match it {
                            O(id) => out.push(self.nav_one(&id, f)?),
                            U => out.push(U),
                            _ => return Err(Bad),
                        }
                    }
                    Ok(if out.contains(&U) { U } else { L(out) })
                }
                _ => Err(Bad),
            },
            RExpr::Size(x) | RExpr::IsEmpty(x) | RExpr::NotEmpty(x) | RExpr::Sum(x) => {
                let Some(items) = self.items(x, env)? else { return Ok(U) };
                match e {
                    RExpr::Size(_) => Ok(I(items.len() as i64)),
                    RExpr::IsEmpty(_) => Ok(B(items.is_empty())),
                    RExpr::NotEmpty(_) => Ok(B(!items.is_empty())),
                    _ => {
                        if items.iter().any(|v| !matches!(v, I(_) | R(_) | U)) {
                            return Err(Bad);
                        }
                        if items.contains(&U) {
                            return Ok(U);
                        }
                        if items.iter().all(|v| matches!(v, I(_))) {
                            let mut acc = 0i64;
                            for v in &items {
                                let I(i) = v else { unreachable!() };
                                match acc.checked_add(*i) {
                                    Some(s) => acc = s,
                                    None => return Ok(U),
                                }
                            }
                            return Ok(I(acc));
                        }
                        let mut acc = 0.0;
                        for v in &items {
                            acc += num(v).unwrap();
                        }
                        Ok(fin(acc))
                    }
                }
            }
            RExpr::Includes(x, y) => {
                let items = self.items(x, env)?;
                let needle = self.eval(y, env)?;
                match items {
                    None => Ok(U),
                    Some(_) if needle == U => Ok(U),
                    Some(items) => Ok(B(items.iter().any(|it| member_eq(it, &needle)))),
                }
            }
            RExpr::Iter(kind, x, var, body) => {
                let Some(items) = self.items(x, env)? else { return Ok(U) };
                let mut results = Vec::new();
                for it in &items {
                    env.push((var.clone(), it.clone()));
                    let res = self.eval(body, env);
                    env.pop();
                    results.push(res?);
                }
                let any_u = results.contains(&U);
                if *kind == "collect" {
                    return Ok(if any_u { U } else { L(results) });
                }
                let truths: Vec<Option<bool>> = results.iter().map(tv).collect::<Result<_, _>>()?;
                Ok(match *kind {
                    "forAll" => from_tv(truths.iter().fold(Some(true), |acc, t| kleene_and(acc, *t))),
                    "exists" => from_tv(truths.iter().fold(Some(false), |acc, t| kleene_or(acc, *t))),
                    _ if any_u => U,
                    _ => L(items
                        .into_iter()
                        .zip(truths)
                        .filter(|(_, t)| *t == Some(true))
                        .map(|(v, _)| v)
                        .collect()),
                })
            }
        }
    }

    /// Source of a `->` operation: `None` for undefined, scalars as singletons.
    fn items(&self, x: &RExpr, env: &mut Vec<(String, RVal)>) -> Result<Option<Vec<RVal>>, Bad> {
        Ok(match self.eval(x, env)? {
            RVal::U => None,
            RVal::L(items) => Some(items),
            scalar => Some(vec![scalar]),
        })
    }

    fn bin(&self, op: &str, a: RVal, c: RVal) -> R {
        use RVal::*;
        match op {
            "and" => return Ok(from_tv(kleene_and(tv(&a)?, tv(&c)?))),
            "or" => return Ok(from_tv(kleene_or(tv(&a)?, tv(&c)?))),
            "implies" => return Ok(from_tv(kleene_or(tv(&a)?.map(|v| !v), tv(&c)?))),
            _ => {}
        }
        if a == U || c == U {
            return Ok(U);
        }
        match op {
            "=" => Ok(B(eq(&a, &c)?)),
            "<>" => Ok(B(!eq(&a, &c)?)),
            "<" | "<=" | ">" | ">=" => {
                let (x, y) = (num(&a).ok_or(Bad)?, num(&c).ok_or(Bad)?);
                let ord = match (&a, &c) {
                    (I(p), I(q)) => p.cmp(q),
                    _ => x.partial_cmp(&y).ok_or(Bad)?,
                };
                Ok(B(match op {
                    "<" => ord == Ordering::Less,
                    "<=" => ord != Ordering::Greater,
                    ">" => ord == Ordering::Greater,
                    _ => ord != Ordering::Less,
                }))
            }
            _ => {
                if let (I(p), I(q)) = (&a, &c) {
                    return Ok(match op {
                        "+" => p.checked_add(*q).map_or(U, I),
                        "-" => p.checked_sub(*q).map_or(U, I),
                        "*" => p.checked_mul(*q).map_or(U, I),
                        _ if *q == 0 => U,
                        _ => fin(*p as f64 / *q as f64),
                    });
                }
                let (x, y) = (num(&a).ok_or(Bad)?, num(&c).ok_or(Bad)?);
                Ok(match op {
                    "+" => fin(x + y),
                    "-" => fin(x - y),
                    "*" => fin(x * y),
                    _ if y == 0.0 => U,
                    _ => fin(x / y),
                })
            }
        }
    }

    /// "Pass", "Fail" or "Invalid".
    pub fn verdict(&self, body: &RExpr) -> &'static str {
        match self.eval(body, &mut Vec::new()) {
            Ok(RVal::B(true)) => "Pass",
            Ok(RVal::B(false)) => "Fail",
            _ => "Invalid",
        }
    }
}

// --------------------------------------------------- random OCL generation

#[derive(Clone, Copy, PartialEq)]
enum Ty {
    Bool,
    Num,
    Str,
}

/// Random constraint bodies over one metamodel. Mostly well typed, with a
/// sprinkling of deliberate type errors and unknown features.
pub struct OclGen<'a> {
    pub mm: &'a MetaModel,
    vars: Vec<(String, String)>,
    next_var: usize,
}

impl<'a> OclGen<'a> {
    pub fn new(mm: &'a MetaModel) -> Self {
        OclGen { mm, vars: Vec::new(), next_var: 0 }
    }

    fn attrs(&self, class: &str, want: Ty) -> Vec<String> {
        lineage(self.mm, class)
            .iter()
            .flat_map(|c| c.attributes.clone())
            .filter(|a| match want {
                Ty::Bool => a.ty == AttrType::Bool,
                Ty::Num => matches!(a.ty, AttrType::Int | AttrType::Real),
                Ty::Str => a.ty == AttrType::String,
            })
            .map(|a| a.name)
            .collect()
    }

    fn refs(&self, class: &str, many: bool) -> Vec<Reference> {
        lineage(self.mm, class)
            .iter()
            .flat_map(|c| c.references.clone())
            .filter(|r| (r.multiplicity.upper != Upper::Bounded(1)) == many)
            .collect()
    }

    /// An object-valued expression together with its static class.
    fn object(&mut self, r: &mut Rng8, ctx: &str, depth: u32) -> (RExpr, String) {
        let mut options: Vec<(RExpr, String)> = vec![(RExpr::SelfRef, ctx.to_string())];
        for (v, c) in &self.vars {
            options.push((RExpr::Var(v.clone()), c.clone()));
        }
        let (base, class) = options.choose(r).unwrap().clone();
        if depth > 0 && r.gen_bool(0.3) {
            let single = self.refs(&class, false);
            if let Some(rf) = single.choose(r) {
                return (RExpr::Nav(b(base), rf.name.clone()), rf.target.clone());
            }
        }
        (base, class)
    }

    /// A collection of objects with its element class.
    fn objects(&mut self, r: &mut Rng8, ctx: &str, depth: u32) -> Option<(RExpr, String)> {
        let (src, class) = self.object(r, ctx, depth.saturating_sub(1));
        let many = self.refs(&class, true);
        let rf = many.choose(r)?.clone();
        let coll = RExpr::Nav(b(src), rf.name.clone());
        if depth > 1 && r.gen_bool(0.25) {
            let var = self.fresh(&rf.target);
            let body = self.gen(r, Ty::Bool, ctx, depth - 1);
            self.vars.pop();
            return Some((RExpr::Iter("select", b(coll), var, b(body)), rf.target));
        }
        Some((coll, rf.target))
    }

    fn fresh(&mut self, class: &str) -> String {
        let v = format!("x{}", self.next_var);
        self.next_var += 1;
        self.vars.push((v.clone(), class.to_string()));
        v
    }

    fn attr_nav(&mut self, r: &mut Rng8, ctx: &str, ty: Ty, depth: u32) -> Option<RExpr> {
        let (src, class) = self.object(r, ctx, depth);
        let names = self.attrs(&class, ty);
        names.choose(r).map(|n| RExpr::Nav(b(src), n.clone()))
    }

    fn literal(r: &mut Rng8, ty: Ty) -> RExpr {
        match ty {
            Ty::Bool => RExpr::Bool(r.gen()),
            Ty::Num if r.gen_bool(0.5) => RExpr::Int(r.gen_range(0..=4)),
            Ty::Num => RExpr::Real(r.gen_range(0..=12) as f64 / 4.0),
            Ty::Str => RExpr::Str(["x", "y", "radar", ""].choose(r).unwrap().to_string()),
        }
    }

    pub fn constraint(&mut self, r: &mut Rng8, ctx: &str) -> RExpr {
        self.vars.clear();
        self.gen(r, Ty::Bool, ctx, 4)
    }

    fn gen(&mut self, r: &mut Rng8, ty: Ty, ctx: &str, depth: u32) -> RExpr {
        // occasional deliberate mismatch
        let ty = if r.gen_bool(0.04) { *[Ty::Bool, Ty::Num, Ty::Str].choose(r).unwrap() } else { ty };
        if depth == 0 || r.gen_bool(0.15) {
            if r.gen_bool(0.6) {
                if let Some(e) = self.attr_nav(r, ctx, ty, depth) {
                    return e;
                }
            }
            if r.gen_bool(0.02) {
                let (src, _) = self.object(r, ctx, 0);
                return RExpr::Nav(b(src), "zz".into());
            }
            return Self::literal(r, ty);
        }
        let d = depth - 1;
        match ty {
            Ty::Bool => match r.gen_range(0..10) {
                0 => RExpr::Not(b(self.gen(r, Ty::Bool, ctx, d))),
                1 | 2 => {
                    let op = *["and", "or", "implies"].choose(r).unwrap();
                    RExpr::Bin(op, b(self.gen(r, Ty::Bool, ctx, d)), b(self.gen(r, Ty::Bool, ctx, d)))
                }
                3 | 4 => {
                    let op = *["=", "<>", "<", "<=", ">", ">="].choose(r).unwrap();
                    RExpr::Bin(op, b(self.gen(r, Ty::Num, ctx, d)), b(self.gen(r, Ty::Num, ctx, d)))
                }
                5 => {
                    let op = *["=", "<>"].choose(r).unwrap();
                    RExpr::Bin(op, b(self.gen(r, Ty::Str, ctx, d)), b(self.gen(r, Ty::Str, ctx, d)))
                }
                6 | 7 => match self.objects(r, ctx, d) {
                    Some((coll, class)) => {
                        let kind = *["forAll", "exists"].choose(r).unwrap();
                        let var = self.fresh(&class);
                        let body = self.gen(r, Ty::Bool, ctx, d);
                        self.vars.pop();
                        RExpr::Iter(kind, b(coll), var, b(body))
                    }
                    None => Self::literal(r, ty),
                },
                8 => match self.objects(r, ctx, d) {
                    Some((coll, _)) if r.gen_bool(0.5) => {
                        if r.gen_bool(0.5) {
                            RExpr::IsEmpty(b(coll))
                        } else {
                            RExpr::NotEmpty(b(coll))
                        }
                    }
                    Some((coll, class)) => {
                        let names = self.attrs(&class, Ty::Num);
                        match names.choose(r) {
                            Some(n) => RExpr::Includes(
                                b(RExpr::Nav(b(coll), n.clone())),
                                b(self.gen(r, Ty::Num, ctx, d)),
                            ),
                            None => RExpr::NotEmpty(b(coll)),
                        }
                    }
                    None => Self::literal(r, ty),
                },
                _ => self.attr_nav(r, ctx, Ty::Bool, d).unwrap_or_else(|| Self::literal(r, ty)),
            },
            Ty::Num => match r.gen_range(0..8) {
                0..=2 => {
                    let op = *["+", "-", "*", "/"].choose(r).unwrap();
                    RExpr::Bin(op, b(self.gen(r, Ty::Num, ctx, d)), b(self.gen(r, Ty::Num, ctx, d)))
                }
                3 => RExpr::Neg(b(self.gen(r, Ty::Num, ctx, d))),
                4 => match self.objects(r, ctx, d) {
                    Some((coll, _)) => RExpr::Size(b(coll)),
                    None => Self::literal(r, ty),
                },
                5 => match self.objects(r, ctx, d) {
                    Some((coll, class)) => {
                        let var = self.fresh(&class);
                        let body = self.gen(r, Ty::Num, ctx, d);
                        self.vars.pop();
                        RExpr::Sum(b(RExpr::Iter("collect", b(coll), var, b(body))))
                    }
                    None => Self::literal(r, ty),
                },
                _ => self.attr_nav(r, ctx, Ty::Num, d).unwrap_or_else(|| Self::literal(r, ty)),
            },
            Ty::Str => self.attr_nav(r, ctx, Ty::Str, d).unwrap_or_else(|| Self::literal(r, ty)),
        }
    }
}

// ----------------------------------------------------------------- BM25

pub fn numeric_path(id: &str) -> Vec<u32> {
    id.split('.').map(|p| p.parse().unwrap()).collect()
}

/// Exhaustive BM25 (k1 1.2, b 0.75) over whitespace-separated lowercase
/// documents, ranked by score then numeric id path.
pub fn brute_force_bm25(docs: &[(String, String)], query: &str, k: usize) -> Vec<(String, f64)> {
    let n = docs.len() as f64;
    let tokenized: Vec<Vec<&str>> = docs.iter().map(|(_, t)| t.split_whitespace().collect()).collect();
    let avg = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut terms: Vec<&str> = Vec::new();
    for t in query.split_whitespace() {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .zip(&tokenized)
        .map(|((id, _), toks)| {
            let mut score = 0.0;
            for t in &terms {
                let df = tokenized.iter().filter(|d| d.contains(t)).count() as f64;
                let tf = toks.iter().filter(|x| *x == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                let len = toks.len() as f64;
                score += idf * tf * 2.2 / (tf + 1.2 * (1.0 - 0.75 + 0.75 * len / avg));
            }
            (id.clone(), score)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| numeric_path(&a.0).cmp(&numeric_path(&b.0)))
    });
    scored.truncate(k);
    scored
}

pub const VOCAB: [&str; 24] = [
    "brake", "warning", "collision", "target", "speed", "vehicle", "test", "radar", "camera",
    "signal", "driver", "lane", "distance", "track", "dry", "wet", "pedal", "system", "shall",
    "20", "40", "6.4", "5.2", "km",
];

pub fn random_corpus(r: &mut Rng8, size: usize) -> Vec<(String, String)> {
    (0..size)
        .map(|i| {
            let id = if r.gen_bool(0.3) { format!("{}.{}", i + 1, r.gen_range(1..4)) } else { (i + 1).to_string() };
            let len = r.gen_range(1..25);
            // a skewed draw so term frequencies vary
            let words: Vec<&str> = (0..len)
                .map(|_| VOCAB[r.gen_range(0..VOCAB.len()).min(r.gen_range(0..VOCAB.len()))])
                .collect();
            (id, words.join(" "))
        })
        .collect()
}

pub fn random_query(r: &mut Rng8) -> String {
    let extra = ["unknown", "nothing"];
    let words: Vec<&str> = (0..r.gen_range(1..6))
        .map(|_| if r.gen_bool(0.1) { extra.choose(r).unwrap() } else { VOCAB.choose(r).unwrap() }).copied()
        .collect();
    words.join(" ")
}

// ------------------------------------------------------ random documents

/// A random main-body regulation: its text plus the edges the oracle
/// should see (resolved references and parent links).
pub struct RandomDoc {
    pub text: String,
    pub edges: Edges,
}

/// Adjacency by clause id string.
pub type Edges = BTreeMap<String, BTreeSet<String>>;

const FILLER: [&str; 8] = ["the", "system", "shall", "brake", "when", "a", "target", "appears"];

pub fn random_document(r: &mut Rng8) -> RandomDoc {
    let limit = r.gen_range(1..=100);
    let mut clauses: Vec<Vec<u32>> = Vec::new();
    let mut stack: Vec<Vec<u32>> = Vec::new();
    let mut top = 0;
    while clauses.len() < limit {
        // descend, continue a sibling, or climb
        let choice = r.gen_range(0..3);
        let path = match (choice, stack.last()) {
            (0, Some(last)) if last.len() < 4 => {
                let mut p = last.clone();
                p.push(1);
                p
            }
            (1, Some(last)) if last.len() > 1 => {
                let mut p = last.clone();
                *p.last_mut().unwrap() += 1;
                p
            }
            _ => {
                top += 1;
                vec![top]
            }
        };
        stack.retain(|s| s.len() < path.len());
        stack.push(path.clone());
        clauses.push(path);
    }
    let fmt = |p: &[u32]| p.iter().map(u32::to_string).collect::<Vec<_>>().join(".");
    let mut edges = Edges::new();
    let mut text = String::new();
    for p in &clauses {
        let entry = edges.entry(fmt(p)).or_default();
        if p.len() > 1 {
            entry.insert(fmt(&p[..p.len() - 1]));
        }
        let mut line = format!("{}. ", fmt(p));
        for _ in 0..r.gen_range(1..6) {
            line.push_str(FILLER.choose(r).unwrap());
            line.push(' ');
        }
        for _ in 0..r.gen_range(0..3) {
            if r.gen_bool(0.15) {
                line.push_str("see paragraph 99.9. the ");
            } else {
                let t = clauses.choose(r).unwrap();
                entry.insert(fmt(t));
                line.push_str(&format!("see paragraph {}. the ", fmt(t)));
            }
        }
        text.push_str(line.trim_end());
        text.push('\n');
    }
    RandomDoc { text, edges }
}

/// Everything within `depth` hops of `seeds`.
pub fn reachable(edges: &Edges, seeds: &[String], depth: usize) -> BTreeSet<String> {
    let mut seen: BTreeSet<String> = seeds.iter().cloned().collect();
    let mut queue: VecDeque<(String, usize)> = seeds.iter().map(|s| (s.clone(), 0)).collect();
    while let Some((node, d)) = queue.pop_front() {
        if d == depth {
            continue;
        }
        for next in edges.get(&node).into_iter().flatten() {
            if seen.insert(next.clone()) {
                queue.push_back((next.clone(), d + 1));
            }
        }
    }
    seen
}

// ------------------------------------------------------ random scenarios

fn coord(r: &mut Rng8) -> f64 {
    r.gen_range(-400..=400) as f64 / 4.0
}

pub fn random_scenario(r: &mut Rng8) -> TestScenario {
    let kinds = [SensorKind::Radar, SensorKind::Camera, SensorKind::Lidar];
    let sensors = (0..r.gen_range(1..=3))
        .map(|_| {
            let mut params = BTreeMap::new();
            if r.gen_bool(0.5) {
                params.insert("range".to_string(), r.gen_range(10..300).to_string());
            }
            if r.gen_bool(0.3) {
                params.insert("fov".to_string(), "90".to_string());
            }
            Sensor { kind: *kinds.choose(r).unwrap(), pos: [coord(r), coord(r), coord(r)], params }
        })
        .collect();
    let agents = (0..r.gen_range(0..=3))
        .map(|i| Agent {
            id: format!("a{i}"),
            kind: ["car", "pedestrian", "bicycle"].choose(r).unwrap().to_string(),
            pos: [coord(r), coord(r), 0.0],
            speed: r.gen_range(0..=120) as f64 / 2.0,
            heading: r.gen_range(0..720) as f64 / 2.0,
        })
        .collect();
    let mut weather = BTreeMap::new();
    for key in ["cloudiness", "precipitation", "wetness", "fog_density"] {
        if r.gen_bool(0.4) {
            weather.insert(key.to_string(), r.gen_range(0..=100) as f64);
        }
    }
    if r.gen_bool(0.3) {
        weather.insert("sun_altitude_angle".to_string(), r.gen_range(-90..=90) as f64);
    }
    let comparators = [Comparator::Lt, Comparator::Le, Comparator::Gt, Comparator::Ge, Comparator::Eq];
    let windows = [Window::Always, Window::Eventually, Window::AtEnd];
    let assertions: Vec<Assertion> = (0..r.gen_range(0..=2))
        .map(|_| Assertion {
            signal: ["ego.speed", "ego.distance", "ego.brake"].choose(r).unwrap().to_string(),
            comparator: *comparators.choose(r).unwrap(),
            threshold: r.gen_range(0..200) as f64 / 4.0,
            window: *windows.choose(r).unwrap(),
        })
        .collect();
    let mut outcomes = BTreeSet::new();
    for o in [Outcome::CollisionAvoided, Outcome::WarningIssued, Outcome::Stopped] {
        if r.gen_bool(0.4) {
            outcomes.insert(o);
        }
    }
    if assertions.is_empty() && outcomes.is_empty() {
        outcomes.insert(Outcome::Stopped);
    }
    let sources = ["5.2", "6.4", "A3/1", "5.1"];
    TestScenario {
        id: format!("scn_{}", r.gen_range(0..1000)),
        source_clauses: sources
            .iter()
            .filter(|_| r.gen_bool(0.4))
            .map(|s| s.parse().unwrap())
            .collect(),
        vehicle: VehicleDefinition {
            model: ["sedan", "suv", "truck"].choose(r).unwrap().to_string(),
            sensors,
        },
        pre: PreConditions {
            map_name: ["straight_road", "Town04"].choose(r).unwrap().to_string(),
            ego_pos: [coord(r), coord(r), 0.0],
            ego_speed: r.gen_range(0..=160) as f64 / 2.0,
            agents,
            weather,
        },
        post: PostConditions { assertions, outcomes },
    }
}

// ------------------------------------------------------------ bridge

#[derive(Debug, Clone, PartialEq)]
pub struct Fired {
    pub event: usize,
    pub rule: usize,
}

/// Reference edge-triggered simulation: every rule starts armed, fires on a
/// true observation while armed and re-arms on a false one.
pub fn bridge_oracle(
    rules: &[(String, fn(f64) -> bool)],
    events: &[(f64, String, f64)],
) -> Vec<Fired> {
    let mut armed = vec![true; rules.len()];
    let mut out = Vec::new();
    for (i, (_, path, value)) in events.iter().enumerate() {
        for (j, (when, cond)) in rules.iter().enumerate() {
            if when != path {
                continue;
            }
            if cond(*value) {
                if armed[j] {
                    armed[j] = false;
                    out.push(Fired { event: i, rule: j });
                }
            } else {
                armed[j] = true;
            }
        }
    }
    out
}

// ------------------------------------------------------------ consensus

/// Index of the winner: the largest canonical group, ties to the group whose
/// first member comes earliest. `None` when nothing is valid.
pub fn consensus_oracle(cands: &[(usize, Option<String>)]) -> Option<usize> {
    let valid: Vec<&(usize, Option<String>)> = cands.iter().filter(|c| c.1.is_some()).collect();
    let mut best: Option<(usize, usize)> = None;
    for c in &valid {
        let count = valid.iter().filter(|d| d.1 == c.1).count();
        let first = valid.iter().filter(|d| d.1 == c.1).map(|d| d.0).min().unwrap();
        best = match best {
            Some((bc, bf)) if bc > count || (bc == count && bf <= first) => Some((bc, bf)),
            _ => Some((count, first)),
        };
    }
    best.map(|(_, first)| first)
}
