use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{Feature, MetaModel, ModelInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ViolationKind {
    UnknownClass,
    UnknownFeature,
    TypeMismatch,
    MultiplicityViolation,
    DanglingReference,
    ContainmentCycle,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Violation {
    pub object: String,
    /// Feature the finding is about; `None` for object-level findings.
    pub feature: Option<String>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}",
            self.object,
            self.kind,
            self.feature.as_deref().unwrap_or("-"),
            self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ConformanceReport {
    pub violations: Vec<Violation>,
}

impl ConformanceReport {
    pub fn conforms(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn names(&self, object: &str) -> bool {
        self.violations.iter().any(|v| v.object == object)
    }

    pub fn to_text(&self) -> String {
        self.violations.iter().map(|v| format!("{v}\n")).collect()
    }
}

struct Findings(Vec<Violation>);

impl Findings {
    fn push(&mut self, object: &str, feature: Option<&str>, kind: ViolationKind, message: String) {
        self.0.push(Violation {
            object: object.to_string(),
            feature: feature.map(str::to_string),
            kind,
            message,
        });
    }
}

/// Structural check of an instance against a metamodel.
///
/// Containment links are treated as giving their target an implicit
/// container of multiplicity `0..1`: an object held by two containment
/// slots (or twice by one) is a multiplicity violation on that object.
pub fn check_conformance(inst: &ModelInstance, mm: &MetaModel) -> ConformanceReport {
    use ViolationKind::*;
    let mut out = Findings(Vec::new());
    let mut containers: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();

    for (id, object) in &inst.objects {
        if mm.class(&object.class).is_none() {
            out.push(id, None, UnknownClass, format!("class '{}' is not in the metamodel", object.class));
            continue;
        }
        for (name, value) in &object.attributes {
            match mm.feature(&object.class, name) {
                Some(Feature::Attribute(a)) => {
                    if !value.matches(a.ty) {
                        out.push(
                            id,
                            Some(name),
                            TypeMismatch,
                            format!("value '{}' is not a {}", value.to_text(), a.ty.name()),
                        );
                    }
                }
                Some(Feature::Reference(_)) => out.push(
                    id,
                    Some(name),
                    UnknownFeature,
                    format!("'{name}' is a reference of {}, not an attribute", object.class),
                ),
                None => out.push(
                    id,
                    Some(name),
                    UnknownFeature,
                    format!("class {} has no attribute '{name}'", object.class),
                ),
            }
        }
        for a in mm.all_attributes(&object.class) {
            if a.required && !object.attributes.contains_key(&a.name) {
                out.push(
                    id,
                    Some(&a.name),
                    MultiplicityViolation,
                    "required attribute is missing".to_string(),
                );
            }
        }
        for (name, targets) in &object.links {
            let reference = match mm.feature(&object.class, name) {
                Some(Feature::Reference(r)) => r,
                Some(Feature::Attribute(_)) => {
                    out.push(
                        id,
                        Some(name),
                        UnknownFeature,
                        format!("'{name}' is an attribute of {}, not a reference", object.class),
                    );
                    continue;
                }
                None => {
                    out.push(
                        id,
                        Some(name),
                        UnknownFeature,
                        format!("class {} has no reference '{name}'", object.class),
                    );
                    continue;
                }
            };
            let m = reference.multiplicity;
            if targets.len() < m.lower as usize || !m.upper.admits(targets.len()) {
                out.push(
                    id,
                    Some(name),
                    MultiplicityViolation,
                    format!("{} link(s), expected {m}", targets.len()),
                );
            }
            for target in targets {
                match inst.objects.get(target) {
                    None => out.push(
                        id,
                        Some(name),
                        DanglingReference,
                        format!("link to missing object '{target}'"),
                    ),
                    Some(t) => {
                        if mm.class(&t.class).is_some() && !mm.conforms_to(&t.class, &reference.target) {
                            out.push(
                                id,
                                Some(name),
                                TypeMismatch,
                                format!("'{target}' is a {}, expected {}", t.class, reference.target),
                            );
                        }
                        if reference.containment {
                            containers.entry(target).or_default().push((id, name));
                        }
                    }
                }
            }
        }
        for r in mm.all_references(&object.class) {
            if r.multiplicity.lower > 0 && !object.links.contains_key(&r.name) {
                out.push(
                    id,
                    Some(&r.name),
                    MultiplicityViolation,
                    format!("0 link(s), expected {}", r.multiplicity),
                );
            }
        }
    }

    for (child, slots) in &containers {
        if slots.len() > 1 {
            let holders: Vec<String> = slots.iter().map(|(o, r)| format!("{o}.{r}")).collect();
            out.push(
                child,
                None,
                MultiplicityViolation,
                format!("contained {} times ({}), at most one container allowed", slots.len(), holders.join(", ")),
            );
        }
    }

    // every object that can reach itself through containment edges
    let mut children: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (child, slots) in &containers {
        for (parent, _) in slots {
            children.entry(parent).or_default().insert(child);
        }
    }
    for start in children.keys() {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = children[start].iter().copied().collect();
        while let Some(node) = stack.pop() {
            if node == *start {
                out.push(start, None, ContainmentCycle, "object transitively contains itself".to_string());
                break;
            }
            if seen.insert(node) {
                if let Some(next) = children.get(node) {
                    stack.extend(next.iter().copied());
                }
            }
        }
    }

    let mut violations = out.0;
    violations.sort();
    violations.dedup();
    ConformanceReport { violations }
}
