//! Metamodels, model instances and structural conformance.
//!
//! Metamodels come from a PlantUML class-diagram subset ([`parse_plantuml`])
//! or from their canonical text form ([`parse_metamodel`] /
//! [`MetaModel::to_canonical`]). Instances are read from an XMI subset
//! ([`parse_instance`]) and checked with [`check_conformance`].

mod canonical;
mod conformance;
mod instance;
mod plantuml;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use canonical::parse_metamodel;
pub use conformance::{check_conformance, ConformanceReport, Violation, ViolationKind};
pub use instance::{
    coerce, parse_instance, serialize_instance, AttrValue, InstanceError, ModelInstance, Object,
};
pub use plantuml::{parse_plantuml, to_plantuml};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetaModelError {
    #[error("line {line}: {reason}")]
    SyntaxError { line: usize, reason: String },
    #[error("line {line}: unknown attribute type '{name}'")]
    UnknownType { line: usize, name: String },
    #[error("relation on line {line} names undefined class '{name}'")]
    UndefinedClassInRelation { line: usize, name: String },
    #[error("class '{0}' is referenced but not defined")]
    UndefinedClass(String),
    #[error("inheritance cycle through class '{0}'")]
    InheritanceCycle(String),
    #[error("class '{class}' declares feature '{feature}' more than once (including inherited features)")]
    DuplicateFeature { class: String, feature: String },
    #[error("reference '{class}.{reference}' has invalid multiplicity {lower}..{upper}")]
    BadMultiplicity {
        class: String,
        reference: String,
        lower: u32,
        upper: Upper,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AttrType {
    String,
    Int,
    Real,
    Bool,
}

impl AttrType {
    pub fn parse(name: &str) -> Option<AttrType> {
        match name {
            "String" => Some(AttrType::String),
            "Int" => Some(AttrType::Int),
            "Real" => Some(AttrType::Real),
            "Bool" => Some(AttrType::Bool),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttrType::String => "String",
            AttrType::Int => "Int",
            AttrType::Real => "Real",
            AttrType::Bool => "Bool",
        }
    }
}

/// Upper bound of a multiplicity; `*` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Upper {
    Bounded(u32),
    Unbounded,
}

impl Upper {
    pub fn admits(self, count: usize) -> bool {
        match self {
            Upper::Bounded(u) => count <= u as usize,
            Upper::Unbounded => true,
        }
    }

    pub fn is_single(self) -> bool {
        self == Upper::Bounded(1)
    }
}

impl fmt::Display for Upper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Upper::Bounded(u) => write!(f, "{u}"),
            Upper::Unbounded => f.write_str("*"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Multiplicity {
    pub lower: u32,
    pub upper: Upper,
}

impl Multiplicity {
    pub const OPTIONAL: Multiplicity = Multiplicity {
        lower: 0,
        upper: Upper::Bounded(1),
    };

    /// `l..u`, `n` (meaning `n..n`) or `*` (meaning `0..*`).
    pub fn parse(text: &str) -> Option<Multiplicity> {
        let bound = |s: &str| -> Option<Upper> {
            if s == "*" {
                Some(Upper::Unbounded)
            } else if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) {
                s.parse().ok().map(Upper::Bounded)
            } else {
                None
            }
        };
        let text = text.trim();
        match text.split_once("..") {
            Some((l, u)) => {
                let Upper::Bounded(lower) = bound(l.trim())? else {
                    return None;
                };
                Some(Multiplicity {
                    lower,
                    upper: bound(u.trim())?,
                })
            }
            None => match bound(text)? {
                Upper::Unbounded => Some(Multiplicity {
                    lower: 0,
                    upper: Upper::Unbounded,
                }),
                Upper::Bounded(n) => Some(Multiplicity {
                    lower: n,
                    upper: Upper::Bounded(n),
                }),
            },
        }
    }

    pub fn is_valid(&self) -> bool {
        match self.upper {
            Upper::Bounded(u) => u >= 1 && self.lower <= u,
            Upper::Unbounded => true,
        }
    }
}

impl fmt::Display for Multiplicity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Attribute {
    pub name: String,
    pub ty: AttrType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reference {
    pub name: String,
    pub target: String,
    pub containment: bool,
    pub multiplicity: Multiplicity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetaClass {
    pub name: String,
    pub supertype: Option<String>,
    pub attributes: Vec<Attribute>,
    pub references: Vec<Reference>,
}

impl MetaClass {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            supertype: None,
            attributes: Vec::new(),
            references: Vec::new(),
        }
    }
}

/// A feature resolved through the supertype chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature<'a> {
    Attribute(&'a Attribute),
    Reference(&'a Reference),
}

/// A validated metamodel. Structural equality ignores declaration order:
/// classes are keyed by name and features are kept sorted by name.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct MetaModel {
    classes: BTreeMap<String, MetaClass>,
}

impl MetaModel {
    /// Validates class and feature invariants and normalizes feature order.
    pub fn new(classes: Vec<MetaClass>) -> Result<MetaModel, MetaModelError> {
        let mut map = BTreeMap::new();
        for mut class in classes {
            class.attributes.sort_by(|a, b| a.name.cmp(&b.name));
            class.references.sort_by(|a, b| a.name.cmp(&b.name));
            let name = class.name.clone();
            if map.insert(name.clone(), class).is_some() {
                return Err(MetaModelError::SyntaxError {
                    line: 0,
                    reason: format!("class '{name}' declared twice"),
                });
            }
        }
        let mm = MetaModel { classes: map };
        mm.validate()?;
        Ok(mm)
    }

    fn validate(&self) -> Result<(), MetaModelError> {
        for class in self.classes.values() {
            if let Some(sup) = &class.supertype {
                if !self.classes.contains_key(sup) {
                    return Err(MetaModelError::UndefinedClass(sup.clone()));
                }
            }
            for r in &class.references {
                if !self.classes.contains_key(&r.target) {
                    return Err(MetaModelError::UndefinedClass(r.target.clone()));
                }
                if !r.multiplicity.is_valid() {
                    return Err(MetaModelError::BadMultiplicity {
                        class: class.name.clone(),
                        reference: r.name.clone(),
                        lower: r.multiplicity.lower,
                        upper: r.multiplicity.upper,
                    });
                }
            }
        }
        for name in self.classes.keys() {
            let mut seen = BTreeSet::new();
            let mut cursor = Some(name.as_str());
            while let Some(c) = cursor {
                if !seen.insert(c) {
                    return Err(MetaModelError::InheritanceCycle(name.clone()));
                }
                cursor = self.classes[c].supertype.as_deref();
            }
        }
        for class in self.classes.values() {
            let mut names = BTreeSet::new();
            for c in self.lineage(&class.name) {
                let features = c
                    .attributes
                    .iter()
                    .map(|a| &a.name)
                    .chain(c.references.iter().map(|r| &r.name));
                for f in features {
                    if !names.insert(f) {
                        return Err(MetaModelError::DuplicateFeature {
                            class: class.name.clone(),
                            feature: f.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> impl Iterator<Item = &MetaClass> {
        self.classes.values()
    }

    pub fn class(&self, name: &str) -> Option<&MetaClass> {
        self.classes.get(name)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// The class followed by its supertypes, nearest first.
    pub fn lineage<'a>(&'a self, name: &str) -> Vec<&'a MetaClass> {
        let mut chain = Vec::new();
        let mut cursor = self.classes.get(name);
        while let Some(c) = cursor {
            chain.push(c);
            cursor = c.supertype.as_ref().and_then(|s| self.classes.get(s));
        }
        chain
    }

    /// True if `class` is `ancestor` or inherits from it.
    pub fn conforms_to(&self, class: &str, ancestor: &str) -> bool {
        self.lineage(class).iter().any(|c| c.name == ancestor)
    }

    pub fn feature<'a>(&'a self, class: &str, name: &str) -> Option<Feature<'a>> {
        self.lineage(class).into_iter().find_map(|c| {
            c.attributes
                .iter()
                .find(|a| a.name == name)
                .map(Feature::Attribute)
                .or_else(|| {
                    c.references
                        .iter()
                        .find(|r| r.name == name)
                        .map(Feature::Reference)
                })
        })
    }

    pub fn all_attributes<'a>(&'a self, class: &str) -> Vec<&'a Attribute> {
        let mut out: Vec<&Attribute> = self
            .lineage(class)
            .into_iter()
            .flat_map(|c| c.attributes.iter())
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    pub fn all_references<'a>(&'a self, class: &str) -> Vec<&'a Reference> {
        let mut out: Vec<&Reference> = self
            .lineage(class)
            .into_iter()
            .flat_map(|c| c.references.iter())
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    /// Canonical text: classes and features sorted by name.
    pub fn to_canonical(&self) -> String {
        canonical::render(self)
    }
}
