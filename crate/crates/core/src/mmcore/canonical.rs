//! Canonical metamodel text.
//!
//! ```text
//! class Sensor
//!   attr range : Real required
//! class Vehicle extends Base
//!   contains sensors : Sensor [1..*]
//!   ref owner : Fleet [0..1]
//! ```

use std::fmt::Write as _;

use super::{AttrType, Attribute, MetaClass, MetaModel, MetaModelError, Multiplicity, Reference};

pub(super) fn render(mm: &MetaModel) -> String {
    let mut out = String::new();
    for class in mm.classes() {
        match &class.supertype {
            Some(sup) => {
                let _ = writeln!(out, "class {} extends {sup}", class.name);
            }
            None => {
                let _ = writeln!(out, "class {}", class.name);
            }
        }
        for a in &class.attributes {
            let req = if a.required { "required" } else { "optional" };
            let _ = writeln!(out, "  attr {} : {} {req}", a.name, a.ty.name());
        }
        for r in &class.references {
            let kw = if r.containment { "contains" } else { "ref" };
            let _ = writeln!(out, "  {kw} {} : {} [{}]", r.name, r.target, r.multiplicity);
        }
    }
    out
}

fn syntax(line: usize, reason: impl Into<String>) -> MetaModelError {
    MetaModelError::SyntaxError {
        line,
        reason: reason.into(),
    }
}

fn ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn parse_metamodel(text: &str) -> Result<MetaModel, MetaModelError> {
    let mut classes: Vec<MetaClass> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["class", name] if ident(name) => classes.push(MetaClass::new(*name)),
            ["class", name, "extends", sup] if ident(name) && ident(sup) => {
                let mut class = MetaClass::new(*name);
                class.supertype = Some(sup.to_string());
                classes.push(class);
            }
            ["attr", name, ":", ty, req] if ident(name) => {
                let ty = AttrType::parse(ty).ok_or_else(|| MetaModelError::UnknownType {
                    line: n,
                    name: ty.to_string(),
                })?;
                let required = match *req {
                    "required" => true,
                    "optional" => false,
                    other => return Err(syntax(n, format!("expected required|optional, found '{other}'"))),
                };
                let class = classes
                    .last_mut()
                    .ok_or_else(|| syntax(n, "feature outside of a class"))?;
                class.attributes.push(Attribute {
                    name: name.to_string(),
                    ty,
                    required,
                });
            }
            [kw @ ("ref" | "contains"), name, ":", target, mult] if ident(name) && ident(target) => {
                let multiplicity = mult
                    .strip_prefix('[')
                    .and_then(|m| m.strip_suffix(']'))
                    .and_then(Multiplicity::parse)
                    .ok_or_else(|| syntax(n, format!("bad multiplicity '{mult}'")))?;
                let class = classes
                    .last_mut()
                    .ok_or_else(|| syntax(n, "feature outside of a class"))?;
                class.references.push(Reference {
                    name: name.to_string(),
                    target: target.to_string(),
                    containment: *kw == "contains",
                    multiplicity,
                });
            }
            _ => return Err(syntax(n, format!("unrecognized line '{line}'"))),
        }
    }
    MetaModel::new(classes)
}
