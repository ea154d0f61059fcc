use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;

use super::{
    AttrType, Attribute, MetaClass, MetaModel, MetaModelError, Multiplicity, Reference,
};

fn class_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^class\s+([A-Za-z_]\w*)\s*(\{(.*))?$").unwrap())
}

fn attribute_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^([A-Za-z_]\w*)\s*:\s*([A-Za-z_]\w*)\s*(\[\s*(0\.\.1|1)\s*\])?$").unwrap()
    })
}

fn inherit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^([A-Za-z_]\w*)\s*<\|--\s*([A-Za-z_]\w*)$").unwrap())
}

fn relation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"^([A-Za-z_]\w*)\s*(?:"([^"]*)"\s*)?(-->|\*--)\s*(?:"([^"]*)"\s*)?([A-Za-z_]\w*)\s*:\s*([A-Za-z_]\w*)$"#,
        )
        .unwrap()
    })
}

struct Builder {
    classes: BTreeMap<String, (usize, MetaClass)>,
    order: Vec<String>,
}

impl Builder {
    fn attribute(&mut self, class: &str, line: usize, text: &str) -> Result<(), MetaModelError> {
        for part in text.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let caps = attribute_re()
                .captures(part)
                .ok_or_else(|| syntax(line, format!("expected 'name : Type', found '{part}'")))?;
            let ty = AttrType::parse(&caps[2]).ok_or_else(|| MetaModelError::UnknownType {
                line,
                name: caps[2].to_string(),
            })?;
            let required = caps.get(4).is_none_or(|m| m.as_str() == "1");
            self.classes.get_mut(class).unwrap().1.attributes.push(Attribute {
                name: caps[1].to_string(),
                ty,
                required,
            });
        }
        Ok(())
    }
}

fn syntax(line: usize, reason: impl Into<String>) -> MetaModelError {
    MetaModelError::SyntaxError {
        line,
        reason: reason.into(),
    }
}

/// Parses the supported PlantUML subset:
///
/// * `class N`, `class N { a : T ... }` (blocks may span lines; attributes
///   are required unless suffixed with `[0..1]`),
/// * `A <|-- B` (B specializes A),
/// * `A "l" --> "l..u" B : r` and `A *-- "l..u" B : r` (plain and containment
///   references on A; the source multiplicity is accepted and ignored, the
///   target multiplicity defaults to `0..1`),
/// * blank lines and `'` comments.
///
/// Anything else is a syntax error.
pub fn parse_plantuml(text: &str) -> Result<MetaModel, MetaModelError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('\''))
        .collect();
    let last_line = text.lines().count().max(1);
    match lines.first() {
        Some((_, "@startuml")) => {}
        Some((n, other)) => return Err(syntax(*n, format!("expected @startuml, found '{other}'"))),
        None => return Err(syntax(1, "missing @startuml")),
    }
    match lines.last() {
        Some((_, "@enduml")) if lines.len() >= 2 => {}
        _ => return Err(syntax(last_line, "missing @enduml")),
    }
    let body = &lines[1..lines.len() - 1];

    let mut builder = Builder {
        classes: BTreeMap::new(),
        order: Vec::new(),
    };
    let mut relations: Vec<(usize, &str)> = Vec::new();
    let mut open: Option<String> = None;

    for &(n, line) in body {
        if let Some(class) = open.clone() {
            match line.split_once('}') {
                Some((inner, rest)) => {
                    if !rest.trim().is_empty() {
                        return Err(syntax(n, "unexpected text after '}'"));
                    }
                    builder.attribute(&class, n, inner)?;
                    open = None;
                }
                None => builder.attribute(&class, n, line)?,
            }
            continue;
        }
        if line.starts_with("@startuml") || line.starts_with("@enduml") {
            return Err(syntax(n, "unexpected diagram marker"));
        }
        if let Some(caps) = class_re().captures(line) {
            let name = caps[1].to_string();
            if builder.classes.contains_key(&name) {
                return Err(syntax(n, format!("class '{name}' declared twice")));
            }
            builder
                .classes
                .insert(name.clone(), (n, MetaClass::new(name.clone())));
            builder.order.push(name.clone());
            if let Some(rest) = caps.get(3) {
                match rest.as_str().split_once('}') {
                    Some((inner, tail)) => {
                        if !tail.trim().is_empty() {
                            return Err(syntax(n, "unexpected text after '}'"));
                        }
                        builder.attribute(&name, n, inner)?;
                    }
                    None => {
                        builder.attribute(&name, n, rest.as_str())?;
                        open = Some(name);
                    }
                }
            }
            continue;
        }
        if inherit_re().is_match(line) || relation_re().is_match(line) {
            relations.push((n, line));
            continue;
        }
        return Err(syntax(n, format!("unsupported construct '{line}'")));
    }
    if open.is_some() {
        return Err(syntax(last_line, "unterminated class block"));
    }

    let undefined = |line: usize, name: &str| MetaModelError::UndefinedClassInRelation {
        line,
        name: name.to_string(),
    };
    for (n, line) in relations {
        if let Some(caps) = inherit_re().captures(line) {
            let (parent, child) = (&caps[1], &caps[2]);
            for name in [parent, child] {
                if !builder.classes.contains_key(name) {
                    return Err(undefined(n, name));
                }
            }
            let class = &mut builder.classes.get_mut(child).unwrap().1;
            if class.supertype.is_some() {
                return Err(syntax(n, format!("class '{child}' already has a supertype")));
            }
            class.supertype = Some(parent.to_string());
            continue;
        }
        let caps = relation_re().captures(line).expect("matched above");
        let (source, target) = (&caps[1], &caps[5]);
        for name in [source, target] {
            if !builder.classes.contains_key(name) {
                return Err(undefined(n, name));
            }
        }
        if let Some(m) = caps.get(2) {
            Multiplicity::parse(m.as_str())
                .ok_or_else(|| syntax(n, format!("bad multiplicity '{}'", m.as_str())))?;
        }
        let multiplicity = match caps.get(4) {
            Some(m) => Multiplicity::parse(m.as_str())
                .filter(Multiplicity::is_valid)
                .ok_or_else(|| syntax(n, format!("bad multiplicity '{}'", m.as_str())))?,
            None => Multiplicity::OPTIONAL,
        };
        builder.classes.get_mut(source).unwrap().1.references.push(Reference {
            name: caps[6].to_string(),
            target: target.to_string(),
            containment: &caps[3] == "*--",
            multiplicity,
        });
    }

    // cycles are reported before the generic validation so they carry their own kind
    for name in &builder.order {
        let mut seen = std::collections::BTreeSet::new();
        let mut cursor = Some(name.clone());
        while let Some(c) = cursor {
            if !seen.insert(c.clone()) {
                return Err(MetaModelError::InheritanceCycle(name.clone()));
            }
            cursor = builder.classes[&c].1.supertype.clone();
        }
    }

    let classes = builder
        .order
        .iter()
        .map(|n| builder.classes[n].1.clone())
        .collect();
    MetaModel::new(classes)
}

/// Renders a metamodel back into the supported PlantUML subset.
pub fn to_plantuml(mm: &MetaModel) -> String {
    let mut out = String::from("@startuml\n");
    for class in mm.classes() {
        if class.attributes.is_empty() {
            let _ = writeln!(out, "class {}", class.name);
            continue;
        }
        let _ = writeln!(out, "class {} {{", class.name);
        for a in &class.attributes {
            let suffix = if a.required { "" } else { " [0..1]" };
            let _ = writeln!(out, "  {} : {}{suffix}", a.name, a.ty.name());
        }
        out.push_str("}\n");
    }
    for class in mm.classes() {
        if let Some(sup) = &class.supertype {
            let _ = writeln!(out, "{sup} <|-- {}", class.name);
        }
        for r in &class.references {
            let arrow = if r.containment { "*--" } else { "-->" };
            let _ = writeln!(
                out,
                "{} {arrow} \"{}\" {} : {}",
                class.name, r.multiplicity, r.target, r.name
            );
        }
    }
    out.push_str("@enduml\n");
    out
}
