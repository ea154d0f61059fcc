//! Recursive-descent parser for the supported OCL subset.
//!
//! Precedence, loosest first: `implies`, `or`, `and`, `not`, comparisons,
//! `+ -`, `* /`, unary minus, then postfix `.feature` and `->op(...)`.
//! All binary operators are left-associative.

use std::collections::BTreeSet;

use super::ast::{BinaryOp, CollOp, Expr, IterKind, UnaryOp};
use super::{Constraint, OclError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(String),
    Str(String),
    Sym(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Sym(s) => format!("'{s}'"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

const SYMBOLS: [&str; 18] = [
    "->", "<>", "<=", ">=", "(", ")", ".", ",", "|", ":", "=", "<", ">", "+", "-", "*", "/", ";",
];

const KEYWORDS: [&str; 9] = [
    "context", "inv", "self", "and", "or", "not", "implies", "true", "false",
];

struct Cursor {
    chars: Vec<char>,
    i: usize,
    pos: Pos,
}

impl Cursor {
    fn peek(&self, offset: usize) -> Option<char> {
        self.chars.get(self.i + offset).copied()
    }

    fn advance(&mut self) {
        if let Some(c) = self.peek(0) {
            self.i += 1;
            if c == '\n' {
                self.pos.line += 1;
                self.pos.col = 1;
            } else {
                self.pos.col += 1;
            }
        }
    }

    fn digits(&mut self) {
        while self.peek(0).is_some_and(|d| d.is_ascii_digit()) {
            self.advance();
        }
    }

    fn slice(&self, start: usize) -> String {
        self.chars[start..self.i].iter().collect()
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, OclError> {
    let mut cur = Cursor {
        chars: text.chars().collect(),
        i: 0,
        pos: Pos { line: 1, col: 1 },
    };
    let mut out = Vec::new();
    while let Some(c) = cur.peek(0) {
        let pos = cur.pos;
        if c.is_whitespace() {
            cur.advance();
            continue;
        }
        if c == '-' && cur.peek(1) == Some('-') {
            while cur.peek(0).is_some_and(|ch| ch != '\n') {
                cur.advance();
            }
            continue;
        }
        let start = cur.i;
        if c.is_ascii_alphabetic() || c == '_' {
            while cur.peek(0).is_some_and(|ch| ch.is_ascii_alphanumeric() || ch == '_') {
                cur.advance();
            }
            out.push((Tok::Ident(cur.slice(start)), pos));
            continue;
        }
        if c.is_ascii_digit() {
            cur.digits();
            if cur.peek(0) == Some('.') && cur.peek(1).is_some_and(|d| d.is_ascii_digit()) {
                cur.advance();
                cur.digits();
            }
            if matches!(cur.peek(0), Some('e' | 'E')) {
                let sign = usize::from(matches!(cur.peek(1), Some('+' | '-')));
                if cur.peek(1 + sign).is_some_and(|d| d.is_ascii_digit()) {
                    for _ in 0..=sign {
                        cur.advance();
                    }
                    cur.digits();
                }
            }
            out.push((Tok::Number(cur.slice(start)), pos));
            continue;
        }
        if c == '\'' {
            cur.advance();
            let mut s = String::new();
            loop {
                match cur.peek(0) {
                    None => {
                        return Err(OclError::SyntaxError {
                            line: pos.line,
                            col: pos.col,
                            expected: vec!["closing quote".into()],
                            found: "end of input".into(),
                        })
                    }
                    Some('\'') => {
                        cur.advance();
                        break;
                    }
                    Some('\\') if matches!(cur.peek(1), Some('\'' | '\\')) => {
                        s.push(cur.peek(1).unwrap());
                        cur.advance();
                        cur.advance();
                    }
                    Some(ch) => {
                        s.push(ch);
                        cur.advance();
                    }
                }
            }
            out.push((Tok::Str(s), pos));
            continue;
        }
        let two: String = [Some(c), cur.peek(1)].into_iter().flatten().collect();
        match SYMBOLS.iter().find(|s| two.starts_with(**s)) {
            Some(sym) => {
                for _ in 0..sym.len() {
                    cur.advance();
                }
                out.push((Tok::Sym(sym), pos));
            }
            None => {
                return Err(OclError::SyntaxError {
                    line: pos.line,
                    col: pos.col,
                    expected: vec!["a token".into()],
                    found: format!("'{c}'"),
                })
            }
        }
    }
    out.push((Tok::Eof, cur.pos));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    scope: Vec<String>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        let i = (self.at + offset).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> OclError {
        let (tok, pos) = &self.toks[self.at];
        OclError::SyntaxError {
            line: pos.line,
            col: pos.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: tok.describe(),
        }
    }

    fn is_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Tok::Sym(s) if *s == sym)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_sym(&mut self, sym: &'static str) -> Result<(), OclError> {
        if self.is_sym(sym) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[sym]))
        }
    }

    fn expect_kw(&mut self, kw: &'static str) -> Result<(), OclError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn name(&mut self, what: &'static str) -> Result<String, OclError> {
        match self.peek() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(&[what])),
        }
    }

    fn constraint(&mut self) -> Result<Constraint, OclError> {
        self.expect_kw("context")?;
        let context_class = self.name("class name")?;
        self.expect_kw("inv")?;
        let name = match self.peek() {
            Tok::Sym(":") => None,
            _ => Some(self.name("invariant name or ':'")?),
        };
        self.expect_sym(":")?;
        let body = self.expr()?;
        Ok(Constraint {
            context_class,
            name,
            body,
        })
    }

    fn expr(&mut self) -> Result<Expr, OclError> {
        self.implies()
    }

    fn implies(&mut self) -> Result<Expr, OclError> {
        let mut lhs = self.or()?;
        while self.is_kw("implies") {
            self.bump();
            lhs = Expr::binary(BinaryOp::Implies, lhs, self.or()?);
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, OclError> {
        let mut lhs = self.and()?;
        while self.is_kw("or") {
            self.bump();
            lhs = Expr::binary(BinaryOp::Or, lhs, self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, OclError> {
        let mut lhs = self.not()?;
        while self.is_kw("and") {
            self.bump();
            lhs = Expr::binary(BinaryOp::And, lhs, self.not()?);
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, OclError> {
        if self.is_kw("not") {
            self.bump();
            let inner = self.not()?;
            return Ok(Expr::Unary(UnaryOp::Not, Box::new(inner)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, OclError> {
        let mut lhs = self.additive()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("=") => BinaryOp::Eq,
                Tok::Sym("<>") => BinaryOp::Ne,
                Tok::Sym("<") => BinaryOp::Lt,
                Tok::Sym("<=") => BinaryOp::Le,
                Tok::Sym(">") => BinaryOp::Gt,
                Tok::Sym(">=") => BinaryOp::Ge,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::binary(op, lhs, self.additive()?);
        }
    }

    fn additive(&mut self) -> Result<Expr, OclError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("+") => BinaryOp::Add,
                Tok::Sym("-") => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::binary(op, lhs, self.multiplicative()?);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, OclError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("*") => BinaryOp::Mul,
                Tok::Sym("/") => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::binary(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, OclError> {
        if self.is_sym("-") {
            // a minus directly before a number is part of the literal
            if let Tok::Number(n) = self.peek_at(1).clone() {
                self.bump();
                self.bump();
                let literal = self.number(&format!("-{n}"))?;
                return self.postfix(literal);
            }
            self.bump();
            let inner = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        let primary = self.primary()?;
        self.postfix(primary)
    }

    fn number(&self, text: &str) -> Result<Expr, OclError> {
        let real = text.contains(['.', 'e', 'E']);
        let parsed = if real {
            text.parse::<f64>().ok().filter(|r| r.is_finite()).map(Expr::Real)
        } else {
            text.parse::<i64>().ok().map(Expr::Int)
        };
        parsed.ok_or_else(|| {
            let pos = self.toks[self.at.saturating_sub(1)].1;
            OclError::SyntaxError {
                line: pos.line,
                col: pos.col,
                expected: vec!["representable number".into()],
                found: text.to_string(),
            }
        })
    }

    fn primary(&mut self) -> Result<Expr, OclError> {
        const EXPECTED: [&str; 6] = ["self", "variable", "number", "string", "boolean", "'('"];
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                self.number(&n)
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::Sym("(") => {
                self.bump();
                let inner = self.expr()?;
                self.expect_sym(")")?;
                Ok(inner)
            }
            Tok::Ident(id) => match id.as_str() {
                "self" => {
                    self.bump();
                    Ok(Expr::SelfRef)
                }
                "true" | "false" => {
                    self.bump();
                    Ok(Expr::Bool(id == "true"))
                }
                _ if KEYWORDS.contains(&id.as_str()) => Err(self.error(&EXPECTED)),
                _ if self.scope.contains(&id) => {
                    self.bump();
                    Ok(Expr::Var(id))
                }
                _ => Err(self.error(&["self", "bound variable"])),
            },
            _ => Err(self.error(&EXPECTED)),
        }
    }

    fn postfix(&mut self, mut expr: Expr) -> Result<Expr, OclError> {
        loop {
            if self.is_sym(".") {
                self.bump();
                let feature = self.name("feature name")?;
                expr = Expr::Nav(Box::new(expr), feature);
            } else if self.is_sym("->") {
                self.bump();
                let op = self.coll_op()?;
                expr = Expr::Coll(Box::new(expr), op);
            } else {
                return Ok(expr);
            }
        }
    }

    fn coll_op(&mut self) -> Result<CollOp, OclError> {
        const OPS: [&str; 9] = [
            "size", "isEmpty", "notEmpty", "includes", "sum", "forAll", "exists", "select", "collect",
        ];
        let Tok::Ident(name) = self.peek().clone() else {
            return Err(self.error(&OPS));
        };
        let iter = match name.as_str() {
            "forAll" => Some(IterKind::ForAll),
            "exists" => Some(IterKind::Exists),
            "select" => Some(IterKind::Select),
            "collect" => Some(IterKind::Collect),
            _ => None,
        };
        if !OPS.contains(&name.as_str()) {
            return Err(self.error(&OPS));
        }
        self.bump();
        self.expect_sym("(")?;
        let op = if let Some(kind) = iter {
            let var = self.name("iterator variable")?;
            self.expect_sym("|")?;
            self.scope.push(var.clone());
            let body = self.expr();
            self.scope.pop();
            CollOp::Iterate {
                kind,
                var,
                body: Box::new(body?),
            }
        } else {
            match name.as_str() {
                "size" => CollOp::Size,
                "isEmpty" => CollOp::IsEmpty,
                "notEmpty" => CollOp::NotEmpty,
                "sum" => CollOp::Sum,
                _ => CollOp::Includes(Box::new(self.expr()?)),
            }
        };
        self.expect_sym(")")?;
        Ok(op)
    }
}

/// Parses a file of `context C inv [Name]: <expr>` declarations. `--`
/// starts a line comment.
pub fn parse_ocl(text: &str) -> Result<Vec<Constraint>, OclError> {
    let mut parser = Parser {
        toks: lex(text)?,
        at: 0,
        scope: Vec::new(),
    };
    let mut out = Vec::new();
    let mut names = BTreeSet::new();
    while parser.peek() != &Tok::Eof {
        let constraint = parser.constraint()?;
        if let Some(name) = &constraint.name {
            if !names.insert(name.clone()) {
                return Err(OclError::DuplicateConstraintName(name.clone()));
            }
        }
        out.push(constraint);
        if parser.peek() != &Tok::Eof && !parser.is_kw("context") {
            return Err(parser.error(&["context", "end of input"]));
        }
    }
    Ok(out)
}

/// Parses a single expression; `vars` are treated as bound.
pub fn parse_expr(text: &str, vars: &[&str]) -> Result<Expr, OclError> {
    let mut parser = Parser {
        toks: lex(text)?,
        at: 0,
        scope: vars.iter().map(|v| v.to_string()).collect(),
    };
    let expr = parser.expr()?;
    if parser.peek() != &Tok::Eof {
        return Err(parser.error(&["end of input"]));
    }
    Ok(expr)
}
