//! Three-valued evaluator.
//!
//! `Undefined` is an ordinary value. Strict operators return it whenever an
//! operand is undefined; `and`/`or`/`implies` follow Kleene logic. Type errors
//! are not values: they abort evaluation and turn the verdict into `Invalid`.
//! Both operands of every binary operator, and the body of an iterator for
//! every element, are always evaluated, so the outcome never depends on
//! evaluation order.

use serde::Serialize;

use super::ast::{BinaryOp, CollOp, Expr, IterKind, UnaryOp};
use crate::mmcore::{AttrValue, Feature, MetaModel, ModelInstance};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
    Bool(bool),
    Obj(String),
    Coll(Vec<Value>),
    Undefined,
}

impl Value {
    fn kind(&self) -> &'static str {
        match self {
            Value::Int(_) => "Int",
            Value::Real(_) => "Real",
            Value::Str(_) => "String",
            Value::Bool(_) => "Bool",
            Value::Obj(_) => "object",
            Value::Coll(_) => "collection",
            Value::Undefined => "undefined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeError(pub String);

type Eval = Result<Value, TypeError>;

fn type_error(msg: impl Into<String>) -> TypeError {
    TypeError(msg.into())
}

pub struct Evaluator<'a> {
    inst: &'a ModelInstance,
    mm: &'a MetaModel,
    this: Value,
    vars: Vec<(String, Value)>,
}

fn truth(v: &Value, op: &str) -> Result<Option<bool>, TypeError> {
    match v {
        Value::Bool(b) => Ok(Some(*b)),
        Value::Undefined => Ok(None),
        other => Err(type_error(format!("'{op}' expects Bool, got {}", other.kind()))),
    }
}

fn tri(v: Option<bool>) -> Value {
    v.map_or(Value::Undefined, Value::Bool)
}

fn as_real(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Real(r) => Some(*r),
        _ => None,
    }
}

fn finite(r: f64) -> Value {
    if r.is_finite() {
        Value::Real(r)
    } else {
        Value::Undefined
    }
}

/// Equality used by `=` and `<>`; mismatched kinds are a type error.
fn equals(a: &Value, b: &Value) -> Result<bool, TypeError> {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => Ok(x == y),
        (Value::Int(_) | Value::Real(_), Value::Int(_) | Value::Real(_)) => {
            Ok(as_real(a) == as_real(b))
        }
        (Value::Str(x), Value::Str(y)) => Ok(x == y),
        (Value::Bool(x), Value::Bool(y)) => Ok(x == y),
        (Value::Obj(x), Value::Obj(y)) => Ok(x == y),
        _ => Err(type_error(format!("cannot compare {} with {}", a.kind(), b.kind()))),
    }
}

/// Membership test used by `includes`: mismatched kinds are simply unequal.
fn same(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Coll(x), Value::Coll(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| same(p, q))
        }
        (Value::Undefined, _) | (_, Value::Undefined) => false,
        _ => equals(a, b).unwrap_or(false),
    }
}

fn logic(op: BinaryOp, l: Option<bool>, r: Option<bool>) -> Option<bool> {
    match op {
        BinaryOp::And => match (l, r) {
            (Some(false), _) | (_, Some(false)) => Some(false),
            (Some(true), Some(true)) => Some(true),
            _ => None,
        },
        BinaryOp::Or => match (l, r) {
            (Some(true), _) | (_, Some(true)) => Some(true),
            (Some(false), Some(false)) => Some(false),
            _ => None,
        },
        BinaryOp::Implies => logic(BinaryOp::Or, l.map(|b| !b), r),
        _ => unreachable!("not a logical operator"),
    }
}

fn arithmetic(op: BinaryOp, a: &Value, b: &Value) -> Eval {
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        let r = match op {
            BinaryOp::Add => x.checked_add(*y),
            BinaryOp::Sub => x.checked_sub(*y),
            BinaryOp::Mul => x.checked_mul(*y),
            BinaryOp::Div => {
                return Ok(if *y == 0 {
                    Value::Undefined
                } else {
                    finite(*x as f64 / *y as f64)
                })
            }
            _ => unreachable!(),
        };
        return Ok(r.map_or(Value::Undefined, Value::Int));
    }
    let (Some(x), Some(y)) = (as_real(a), as_real(b)) else {
        return Err(type_error(format!(
            "'{}' is not defined on {} and {}",
            op.symbol(),
            a.kind(),
            b.kind()
        )));
    };
    Ok(match op {
        BinaryOp::Add => finite(x + y),
        BinaryOp::Sub => finite(x - y),
        BinaryOp::Mul => finite(x * y),
        BinaryOp::Div if y == 0.0 => Value::Undefined,
        BinaryOp::Div => finite(x / y),
        _ => unreachable!(),
    })
}

fn ordering(op: BinaryOp, a: &Value, b: &Value) -> Eval {
    let (Some(x), Some(y)) = (as_real(a), as_real(b)) else {
        return Err(type_error(format!(
            "'{}' is not defined on {} and {}",
            op.symbol(),
            a.kind(),
            b.kind()
        )));
    };
    // Int against Int compares exactly; anything else is promoted to Real
    let result = match (a, b) {
        (Value::Int(p), Value::Int(q)) => match op {
            BinaryOp::Lt => p < q,
            BinaryOp::Le => p <= q,
            BinaryOp::Gt => p > q,
            _ => p >= q,
        },
        _ => match op {
            BinaryOp::Lt => x < y,
            BinaryOp::Le => x <= y,
            BinaryOp::Gt => x > y,
            _ => x >= y,
        },
    };
    Ok(Value::Bool(result))
}

impl<'a> Evaluator<'a> {
    pub fn new(inst: &'a ModelInstance, mm: &'a MetaModel, self_id: &str) -> Self {
        Self {
            inst,
            mm,
            this: Value::Obj(self_id.to_string()),
            vars: Vec::new(),
        }
    }

    pub fn eval(&mut self, expr: &Expr) -> Eval {
        match expr {
            Expr::SelfRef => Ok(self.this.clone()),
            Expr::Var(name) => self
                .vars
                .iter()
                .rev()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| type_error(format!("unbound variable '{name}'"))),
            Expr::Int(i) => Ok(Value::Int(*i)),
            Expr::Real(r) => Ok(Value::Real(*r)),
            Expr::Str(s) => Ok(Value::Str(s.clone())),
            Expr::Bool(b) => Ok(Value::Bool(*b)),
            Expr::Unary(UnaryOp::Not, e) => {
                let v = self.eval(e)?;
                Ok(tri(truth(&v, "not")?.map(|b| !b)))
            }
            Expr::Unary(UnaryOp::Neg, e) => match self.eval(e)? {
                Value::Int(i) => Ok(i.checked_neg().map_or(Value::Undefined, Value::Int)),
                Value::Real(r) => Ok(Value::Real(-r)),
                Value::Undefined => Ok(Value::Undefined),
                other => Err(type_error(format!("unary '-' on {}", other.kind()))),
            },
            Expr::Binary(op, l, r) => {
                let a = self.eval(l)?;
                let b = self.eval(r)?;
                self.binary(*op, &a, &b)
            }
            Expr::Nav(source, feature) => {
                let v = self.eval(source)?;
                self.navigate(&v, feature)
            }
            Expr::Coll(source, op) => {
                let v = self.eval(source)?;
                let items = match v {
                    Value::Undefined => {
                        // the argument still has to type-check
                        if let CollOp::Includes(x) = op {
                            self.eval(x)?;
                        }
                        return Ok(Value::Undefined);
                    }
                    Value::Coll(items) => items,
                    scalar => vec![scalar],
                };
                self.collection(items, op)
            }
        }
    }

    fn binary(&self, op: BinaryOp, a: &Value, b: &Value) -> Eval {
        match op {
            BinaryOp::And | BinaryOp::Or | BinaryOp::Implies => {
                let l = truth(a, op.symbol())?;
                let r = truth(b, op.symbol())?;
                Ok(tri(logic(op, l, r)))
            }
            _ if matches!(a, Value::Undefined) || matches!(b, Value::Undefined) => {
                Ok(Value::Undefined)
            }
            BinaryOp::Eq => equals(a, b).map(Value::Bool),
            BinaryOp::Ne => equals(a, b).map(|e| Value::Bool(!e)),
            BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => ordering(op, a, b),
            BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => arithmetic(op, a, b),
        }
    }

    fn navigate(&self, v: &Value, feature: &str) -> Eval {
        match v {
            Value::Undefined => Ok(Value::Undefined),
            Value::Obj(id) => self.navigate_object(id, feature),
            Value::Coll(items) => {
                let mut out = Vec::with_capacity(items.len());
                let mut undefined = false;
                for item in items {
                    match item {
                        Value::Obj(id) => {
                            let r = self.navigate_object(id, feature)?;
                            undefined |= r == Value::Undefined;
                            out.push(r);
                        }
                        Value::Undefined => undefined = true,
                        other => {
                            return Err(type_error(format!(
                                "cannot navigate '{feature}' on {}",
                                other.kind()
                            )))
                        }
                    }
                }
                Ok(if undefined {
                    Value::Undefined
                } else {
                    Value::Coll(out)
                })
            }
            other => Err(type_error(format!(
                "cannot navigate '{feature}' on {}",
                other.kind()
            ))),
        }
    }

    fn navigate_object(&self, id: &str, feature: &str) -> Eval {
        let Some(object) = self.inst.object(id) else {
            return Ok(Value::Undefined);
        };
        if self.mm.class(&object.class).is_none() {
            return Ok(Value::Undefined);
        }
        match self.mm.feature(&object.class, feature) {
            None => Err(type_error(format!(
                "class {} has no feature '{feature}'",
                object.class
            ))),
            Some(Feature::Attribute(a)) => Ok(match object.attributes.get(feature) {
                Some(v) if v.matches(a.ty) => match v {
                    AttrValue::Int(i) => Value::Int(*i),
                    AttrValue::Real(r) => Value::Real(*r),
                    AttrValue::Bool(b) => Value::Bool(*b),
                    AttrValue::Str(s) => Value::Str(s.clone()),
                    AttrValue::Raw(_) => Value::Undefined,
                },
                _ => Value::Undefined,
            }),
            Some(Feature::Reference(r)) => {
                let targets = object.links.get(feature).map(Vec::as_slice).unwrap_or(&[]);
                if r.multiplicity.upper.is_single() {
                    Ok(match targets {
                        [one] => Value::Obj(one.clone()),
                        _ => Value::Undefined,
                    })
                } else {
                    Ok(Value::Coll(targets.iter().cloned().map(Value::Obj).collect()))
                }
            }
        }
    }

    fn collection(&mut self, items: Vec<Value>, op: &CollOp) -> Eval {
        match op {
            CollOp::Size => Ok(Value::Int(items.len() as i64)),
            CollOp::IsEmpty => Ok(Value::Bool(items.is_empty())),
            CollOp::NotEmpty => Ok(Value::Bool(!items.is_empty())),
            CollOp::Includes(x) => {
                let needle = self.eval(x)?;
                if needle == Value::Undefined {
                    return Ok(Value::Undefined);
                }
                Ok(Value::Bool(items.iter().any(|it| same(it, &needle))))
            }
            CollOp::Sum => {
                if let Some(bad) = items
                    .iter()
                    .find(|v| !matches!(v, Value::Int(_) | Value::Real(_) | Value::Undefined))
                {
                    return Err(type_error(format!("sum over {}", bad.kind())));
                }
                if items.contains(&Value::Undefined) {
                    return Ok(Value::Undefined);
                }
                if items.iter().all(|v| matches!(v, Value::Int(_))) {
                    let mut acc: i64 = 0;
                    for v in &items {
                        let Value::Int(i) = v else { unreachable!() };
                        match acc.checked_add(*i) {
                            Some(s) => acc = s,
                            None => return Ok(Value::Undefined),
                        }
                    }
                    return Ok(Value::Int(acc));
                }
                Ok(finite(items.iter().filter_map(as_real).sum()))
            }
            CollOp::Iterate { kind, var, body } => {
                let mut results = Vec::with_capacity(items.len());
                for item in &items {
                    self.vars.push((var.clone(), item.clone()));
                    let r = self.eval(body);
                    self.vars.pop();
                    results.push(r?);
                }
                let undefined = results.contains(&Value::Undefined);
                match kind {
                    IterKind::Collect => Ok(if undefined {
                        Value::Undefined
                    } else {
                        Value::Coll(results)
                    }),
                    IterKind::ForAll | IterKind::Exists | IterKind::Select => {
                        let truths = results
                            .iter()
                            .map(|v| truth(v, kind.name()))
                            .collect::<Result<Vec<_>, _>>()?;
                        Ok(match kind {
                            IterKind::ForAll => {
                                tri(truths.into_iter().fold(Some(true), |acc, t| logic(BinaryOp::And, acc, t)))
                            }
                            IterKind::Exists => {
                                tri(truths.into_iter().fold(Some(false), |acc, t| logic(BinaryOp::Or, acc, t)))
                            }
                            _ if undefined => Value::Undefined,
                            _ => Value::Coll(
                                items
                                    .into_iter()
                                    .zip(truths)
                                    .filter(|(_, t)| *t == Some(true))
                                    .map(|(v, _)| v)
                                    .collect(),
                            ),
                        })
                    }
                }
            }
        }
    }
}
