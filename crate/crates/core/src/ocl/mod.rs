//! OCL invariants over model instances.

pub mod ast;
mod eval;
mod parser;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::mmcore::{MetaModel, ModelInstance};

pub use ast::{BinaryOp, CollOp, Expr, IterKind, UnaryOp};
pub use eval::{Evaluator, TypeError, Value};
pub use parser::{parse_expr, parse_ocl};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OclError {
    #[error("{line}:{col}: expected {}, found {found}", expected.join(" | "))]
    SyntaxError {
        line: usize,
        col: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("constraint name '{0}' is declared more than once")]
    DuplicateConstraintName(String),
    #[error("constraint context class '{0}' is not in the metamodel")]
    UnknownContextClass(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Constraint {
    pub context_class: String,
    pub name: Option<String>,
    pub body: Expr,
}

impl Constraint {
    /// Name used in reports: the declared name, or `#<position>` (1-based).
    pub fn label(&self, position: usize) -> String {
        self.name.clone().unwrap_or_else(|| format!("#{}", position + 1))
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "context {} inv", self.context_class)?;
        if let Some(name) = &self.name {
            write!(f, " {name}")?;
        }
        write!(f, ": {}", self.body)
    }
}

/// One constraint per line, fully parenthesized.
pub fn to_canonical(constraints: &[Constraint]) -> String {
    constraints.iter().map(|c| format!("{c}\n")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Outcome {
    Pass,
    Fail,
    Invalid,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub constraint: String,
    pub object: String,
    pub outcome: Outcome,
    pub diagnostic: Option<String>,
}

/// Evaluates `constraint` with `self` bound to `object_id`.
pub fn evaluate(
    constraint: &Constraint,
    object_id: &str,
    inst: &ModelInstance,
    mm: &MetaModel,
) -> (Outcome, Option<String>) {
    let conforms = inst
        .object(object_id)
        .is_some_and(|o| mm.conforms_to(&o.class, &constraint.context_class));
    if !conforms {
        return (
            Outcome::Invalid,
            Some(format!(
                "object '{object_id}' is not an instance of {}",
                constraint.context_class
            )),
        );
    }
    match Evaluator::new(inst, mm, object_id).eval(&constraint.body) {
        Ok(Value::Bool(true)) => (Outcome::Pass, None),
        Ok(Value::Bool(false)) => (Outcome::Fail, None),
        Ok(Value::Undefined) => (Outcome::Invalid, Some("constraint evaluated to undefined".into())),
        Ok(other) => (
            Outcome::Invalid,
            Some(format!("constraint is not boolean: {other:?}")),
        ),
        Err(TypeError(msg)) => (Outcome::Invalid, Some(format!("type error: {msg}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CheckReport {
    pub verdicts: Vec<Verdict>,
    pub summary: BTreeMap<Outcome, usize>,
}

impl CheckReport {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.outcome == Outcome::Pass)
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.summary.get(&outcome).copied().unwrap_or(0)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.verdicts {
            out.push_str(&format!("{}\t{}\t{}", v.constraint, v.object, v.outcome));
            if let Some(d) = &v.diagnostic {
                out.push('\t');
                out.push_str(d);
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "summary: Pass={} Fail={} Invalid={}\n",
            self.count(Outcome::Pass),
            self.count(Outcome::Fail),
            self.count(Outcome::Invalid)
        ));
        out
    }
}

/// Every constraint against every object of its context class (subclasses
/// included), in constraint order and then object id order.
pub fn check_all(
    constraints: &[Constraint],
    inst: &ModelInstance,
    mm: &MetaModel,
) -> Result<CheckReport, OclError> {
    if let Some(c) = constraints.iter().find(|c| mm.class(&c.context_class).is_none()) {
        return Err(OclError::UnknownContextClass(c.context_class.clone()));
    }
    let mut report = CheckReport::default();
    for (i, constraint) in constraints.iter().enumerate() {
        for (id, object) in &inst.objects {
            if !mm.conforms_to(&object.class, &constraint.context_class) {
                continue;
            }
            let (outcome, diagnostic) = evaluate(constraint, id, inst, mm);
            *report.summary.entry(outcome).or_default() += 1;
            report.verdicts.push(Verdict {
                constraint: constraint.label(i),
                object: id.clone(),
                outcome,
                diagnostic,
            });
        }
    }
    Ok(report)
}
