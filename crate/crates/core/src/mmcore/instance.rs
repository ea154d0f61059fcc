//! XMI-subset model instances.
//!
//! ```xml
//! <objects>
//!   <obj class="Vehicle" id="v1" name="ego" ref-fleet="f1">
//!     <obj class="Sensor" id="s1" owner="sensors" range="150.0"/>
//!   </obj>
//! </objects>
//! ```
//!
//! A nested `obj` is a containment link from its parent under the reference
//! named by `owner`; `ref-<name>="id1 id2"` adds cross links. Every other
//! attribute is a feature value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use super::{AttrType, Feature, MetaModel};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstanceError {
    #[error("syntax error: {0}")]
    SyntaxError(String),
    #[error("duplicate object id '{0}'")]
    DuplicateObjectId(String),
}

/// An attribute value. `Raw` holds text that could not be coerced to the
/// declared type (or whose feature is unknown); conformance reports it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AttrValue {
    Int(i64),
    Real(f64),
    Bool(bool),
    Str(String),
    Raw(String),
}

impl AttrValue {
    pub fn to_text(&self) -> String {
        match self {
            AttrValue::Int(i) => i.to_string(),
            AttrValue::Real(r) => format!("{r:?}"),
            AttrValue::Bool(b) => b.to_string(),
            AttrValue::Str(s) | AttrValue::Raw(s) => s.clone(),
        }
    }

    pub fn matches(&self, ty: AttrType) -> bool {
        matches!(
            (self, ty),
            (AttrValue::Int(_), AttrType::Int)
                | (AttrValue::Real(_), AttrType::Real)
                | (AttrValue::Bool(_), AttrType::Bool)
                | (AttrValue::Str(_), AttrType::String)
        )
    }
}

fn is_int_literal(s: &str) -> bool {
    let digits = s.strip_prefix(['+', '-']).unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn is_real_literal(s: &str) -> bool {
    let s = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], Some(&s[i + 1..])),
        None => (s, None),
    };
    let (int, frac) = match mantissa.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (mantissa, None),
    };
    let digits = |x: &str| x.bytes().all(|b| b.is_ascii_digit());
    let mantissa_ok = digits(int)
        && frac.is_none_or(digits)
        && (!int.is_empty() || frac.is_some_and(|f| !f.is_empty()));
    let exponent_ok = exponent.is_none_or(|e| {
        let e = e.strip_prefix(['+', '-']).unwrap_or(e);
        !e.is_empty() && digits(e)
    });
    mantissa_ok && exponent_ok
}

/// Locale-free coercion: Int is an optional sign plus digits, Real a decimal
/// (optionally with exponent), Bool is `true`/`false`.
pub fn coerce(raw: &str, ty: AttrType) -> Option<AttrValue> {
    match ty {
        AttrType::String => Some(AttrValue::Str(raw.to_string())),
        AttrType::Int => is_int_literal(raw)
            .then(|| raw.parse().ok())
            .flatten()
            .map(AttrValue::Int),
        AttrType::Real => is_real_literal(raw)
            .then(|| raw.parse::<f64>().ok())
            .flatten()
            .filter(|r| r.is_finite())
            .map(AttrValue::Real),
        AttrType::Bool => match raw {
            "true" => Some(AttrValue::Bool(true)),
            "false" => Some(AttrValue::Bool(false)),
            _ => None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Object {
    pub class: String,
    pub attributes: BTreeMap<String, AttrValue>,
    pub links: BTreeMap<String, Vec<String>>,
}

impl Object {
    pub fn new(class: impl Into<String>) -> Self {
        Self {
            class: class.into(),
            attributes: BTreeMap::new(),
            links: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ModelInstance {
    pub objects: BTreeMap<String, Object>,
}

impl ModelInstance {
    pub fn object(&self, id: &str) -> Option<&Object> {
        self.objects.get(id)
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

fn syntax(reason: impl Into<String>) -> InstanceError {
    InstanceError::SyntaxError(reason.into())
}

struct Reader<'m> {
    mm: &'m MetaModel,
    instance: ModelInstance,
}

impl Reader<'_> {
    fn element(
        &mut self,
        node: roxmltree::Node,
        parent: Option<&str>,
    ) -> Result<String, InstanceError> {
        let pos = node.document().text_pos_at(node.range().start);
        let at = |what: String| syntax(format!("{what} at {}:{}", pos.row, pos.col));
        if node.tag_name().name() != "obj" || node.tag_name().namespace().is_some() {
            return Err(at(format!("unexpected element <{}>", node.tag_name().name())));
        }
        let id = node
            .attribute("id")
            .ok_or_else(|| at("obj without id".into()))?
            .to_string();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(at(format!("invalid object id '{id}'")));
        }
        let class = node
            .attribute("class")
            .filter(|c| !c.is_empty())
            .ok_or_else(|| at(format!("object '{id}' without class")))?;
        match (parent, node.attribute("owner")) {
            (Some(_), None) => return Err(at(format!("nested object '{id}' without owner"))),
            (None, Some(_)) => return Err(at(format!("top-level object '{id}' has an owner"))),
            _ => {}
        }
        if self.instance.objects.contains_key(&id) {
            return Err(InstanceError::DuplicateObjectId(id));
        }
        let mut object = super::Object::new(class);
        let mut cross: Vec<(String, Vec<String>)> = Vec::new();
        for attr in node.attributes() {
            if attr.namespace().is_some() {
                return Err(at(format!("namespaced attribute '{}'", attr.name())));
            }
            let (name, value) = (attr.name(), attr.value());
            match name {
                "id" | "class" | "owner" => {}
                _ => match name.strip_prefix("ref-") {
                    Some(reference) if !reference.is_empty() => {
                        let ids = value.split_whitespace().map(str::to_string).collect();
                        cross.push((reference.to_string(), ids));
                    }
                    Some(_) => return Err(at("empty reference name".into())),
                    None => {
                        let typed = match self.mm.feature(class, name) {
                            Some(Feature::Attribute(a)) => coerce(value, a.ty),
                            _ => None,
                        };
                        let v = typed.unwrap_or_else(|| AttrValue::Raw(value.to_string()));
                        object.attributes.insert(name.to_string(), v);
                    }
                },
            }
        }
        self.instance.objects.insert(id.clone(), object);

        for child in node.children() {
            if child.is_text() {
                if child.text().is_some_and(|t| !t.trim().is_empty()) {
                    return Err(at("unexpected text content".into()));
                }
                continue;
            }
            if !child.is_element() {
                continue;
            }
            let owner = child.attribute("owner").unwrap_or_default().to_string();
            let child_id = self.element(child, Some(&id))?;
            self.instance
                .objects
                .get_mut(&id)
                .unwrap()
                .links
                .entry(owner)
                .or_default()
                .push(child_id);
        }
        let object = self.instance.objects.get_mut(&id).unwrap();
        for (reference, ids) in cross {
            object.links.entry(reference).or_default().extend(ids);
        }
        Ok(id)
    }
}

/// Parses an XMI-subset document. Attribute text is coerced to the declared
/// type where the metamodel knows the feature; failures are kept raw and
/// surface later as conformance findings.
pub fn parse_instance(text: &str, mm: &MetaModel) -> Result<ModelInstance, InstanceError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| syntax(e.to_string()))?;
    let root = doc.root_element();
    if root.tag_name().name() != "objects" || root.attributes().len() != 0 {
        return Err(syntax("root element must be a bare <objects>"));
    }
    let mut reader = Reader {
        mm,
        instance: ModelInstance::default(),
    };
    for child in root.children() {
        if child.is_text() {
            if child.text().is_some_and(|t| !t.trim().is_empty()) {
                return Err(syntax("unexpected text content in <objects>"));
            }
            continue;
        }
        if child.is_element() {
            reader.element(child, None)?;
        }
    }
    Ok(reader.instance)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out
}

type LinkKey = (String, String);

/// Link lists that can be written as nested elements: containment links whose
/// children all exist, appear once, and are claimed by no earlier container.
fn nestable_lists(inst: &ModelInstance, mm: &MetaModel) -> BTreeSet<LinkKey> {
    let mut claimed: BTreeMap<&str, LinkKey> = BTreeMap::new();
    let mut candidates = BTreeSet::new();
    for (id, object) in &inst.objects {
        for (name, children) in &object.links {
            let containment = matches!(
                mm.feature(&object.class, name),
                Some(Feature::Reference(r)) if r.containment
            );
            if !containment || children.is_empty() {
                continue;
            }
            let key = (id.clone(), name.clone());
            let distinct: BTreeSet<&String> = children.iter().collect();
            let ok = distinct.len() == children.len()
                && children.iter().all(|c| {
                    inst.objects.contains_key(c) && !claimed.contains_key(c.as_str())
                });
            if ok {
                for c in children {
                    claimed.insert(c, key.clone());
                }
                candidates.insert(key);
            }
        }
    }

    // break containment cycles: nothing in a cycle is reachable from a root
    loop {
        let nested: BTreeMap<&str, &LinkKey> = candidates
            .iter()
            .flat_map(|key| {
                inst.objects[&key.0].links[&key.1]
                    .iter()
                    .map(move |c| (c.as_str(), key))
            })
            .collect();
        let mut reached: BTreeSet<&str> = BTreeSet::new();
        let mut stack: Vec<&str> = inst
            .objects
            .keys()
            .map(String::as_str)
            .filter(|id| !nested.contains_key(id))
            .collect();
        while let Some(id) = stack.pop() {
            if !reached.insert(id) {
                continue;
            }
            for (name, children) in &inst.objects[id].links {
                if candidates.contains(&(id.to_string(), name.clone())) {
                    stack.extend(children.iter().map(String::as_str));
                }
            }
        }
        match inst.objects.keys().find(|id| !reached.contains(id.as_str())) {
            Some(stranded) => {
                let key = nested[stranded.as_str()].clone();
                candidates.remove(&key);
            }
            None => return candidates,
        }
    }
}

/// Writes an instance in the XMI subset; parsing the result against the same
/// metamodel yields an equal instance.
pub fn serialize_instance(inst: &ModelInstance, mm: &MetaModel) -> String {
    let nestable = nestable_lists(inst, mm);
    let nested: BTreeSet<&String> = nestable
        .iter()
        .flat_map(|(id, name)| inst.objects[id].links[name].iter())
        .collect();

    fn write_obj(
        out: &mut String,
        inst: &ModelInstance,
        nestable: &BTreeSet<LinkKey>,
        id: &str,
        owner: Option<&str>,
        indent: usize,
    ) {
        let object = &inst.objects[id];
        let pad = " ".repeat(indent);
        let _ = write!(
            out,
            "{pad}<obj class=\"{}\" id=\"{}\"",
            escape(&object.class),
            escape(id)
        );
        if let Some(owner) = owner {
            let _ = write!(out, " owner=\"{}\"", escape(owner));
        }
        for (name, value) in &object.attributes {
            let _ = write!(out, " {name}=\"{}\"", escape(&value.to_text()));
        }
        let mut children: Vec<(&str, &Vec<String>)> = Vec::new();
        for (name, targets) in &object.links {
            if nestable.contains(&(id.to_string(), name.clone())) {
                children.push((name, targets));
            } else {
                let _ = write!(out, " ref-{name}=\"{}\"", escape(&targets.join(" ")));
            }
        }
        if children.is_empty() {
            out.push_str("/>\n");
            return;
        }
        out.push_str(">\n");
        for (name, targets) in children {
            for child in targets {
                write_obj(out, inst, nestable, child, Some(name), indent + 1);
            }
        }
        let _ = writeln!(out, "{pad}</obj>");
    }

    let mut out = String::from("<objects>\n");
    for id in inst.objects.keys().filter(|id| !nested.contains(id)) {
        write_obj(&mut out, inst, &nestable, id, None, 1);
    }
    out.push_str("</objects>\n");
    out
}
