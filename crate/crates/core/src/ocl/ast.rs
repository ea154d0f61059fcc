use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BinaryOp {
    Implies,
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Implies => "implies",
            BinaryOp::Or => "or",
            BinaryOp::And => "and",
            BinaryOp::Eq => "=",
            BinaryOp::Ne => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IterKind {
    ForAll,
    Exists,
    Select,
    Collect,
}

impl IterKind {
    pub fn name(self) -> &'static str {
        match self {
            IterKind::ForAll => "forAll",
            IterKind::Exists => "exists",
            IterKind::Select => "select",
            IterKind::Collect => "collect",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CollOp {
    Size,
    IsEmpty,
    NotEmpty,
    Sum,
    Includes(Box<Expr>),
    Iterate {
        kind: IterKind,
        var: String,
        body: Box<Expr>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Expr {
    SelfRef,
    Var(String),
    Int(i64),
    Real(f64),
    Str(String),
    Bool(bool),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// `source.feature`
    Nav(Box<Expr>, String),
    /// `source->op(...)`
    Coll(Box<Expr>, CollOp),
}

impl Expr {
    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn nav(source: Expr, feature: impl Into<String>) -> Expr {
        Expr::Nav(Box::new(source), feature.into())
    }
}

fn write_str_literal(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("'")?;
    for c in s.chars() {
        match c {
            '\'' => f.write_str("\\'")?,
            '\\' => f.write_str("\\\\")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("'")
}

/// Fully parenthesized rendering that parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::SelfRef => f.write_str("self"),
            Expr::Var(v) => f.write_str(v),
            Expr::Int(i) => write!(f, "{i}"),
            Expr::Real(r) => write!(f, "{r:?}"),
            Expr::Str(s) => write_str_literal(f, s),
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Unary(UnaryOp::Not, e) => write!(f, "(not {e})"),
            Expr::Unary(UnaryOp::Neg, e) => write!(f, "(-({e}))"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Nav(e, name) => write!(f, "{e}.{name}"),
            Expr::Coll(e, op) => {
                write!(f, "{e}->")?;
                match op {
                    CollOp::Size => f.write_str("size()"),
                    CollOp::IsEmpty => f.write_str("isEmpty()"),
                    CollOp::NotEmpty => f.write_str("notEmpty()"),
                    CollOp::Sum => f.write_str("sum()"),
                    CollOp::Includes(x) => write!(f, "includes({x})"),
                    CollOp::Iterate { kind, var, body } => {
                        write!(f, "{}({var} | {body})", kind.name())
                    }
                }
            }
        }
    }
}
