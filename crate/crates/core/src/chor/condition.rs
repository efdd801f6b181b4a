//! Gateway condition language.
//!
//! ```text
//! expr    := or
//! or      := and ("or" and)*
//! and     := unary ("and" unary)*
//! unary   := "not" unary | "(" expr ")" | compare
//! compare := operand op operand
//! operand := task.field | number | "string" | true | false
//! op      := = | == | != | ≠ | < | <= | ≤ | > | >= | ≥
//! ```
//!
//! Variables live in a flat `taskId.fieldName` namespace populated from
//! public message payloads.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ChorError;
use crate::codec::{DecodeError, Decoder, Encoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Num(f64),
    Str(String),
}

impl Value {
    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Bool(_) => "boolean",
            Value::Num(_) => "number",
            Value::Str(_) => "string",
        }
    }

    pub fn encode(&self, enc: &mut Encoder) {
        match self {
            Value::Str(s) => enc.u8(0).str(s),
            Value::Num(n) => enc.u8(1).u64(if *n == 0.0 { 0 } else { n.to_bits() }),
            Value::Bool(b) => enc.u8(2).bool(*b),
        };
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        match dec.u8()? {
            0 => Ok(Value::Str(dec.str()?)),
            1 => Ok(Value::Num(f64::from_bits(dec.u64()?))),
            2 => Ok(Value::Bool(dec.bool()?)),
            tag => Err(DecodeError::InvalidTag { what: "value", tag }),
        }
    }

    pub fn from_json(v: &serde_json::Value) -> Option<Self> {
        match v {
            serde_json::Value::Bool(b) => Some(Value::Bool(*b)),
            serde_json::Value::Number(n) => n.as_f64().map(Value::Num),
            serde_json::Value::String(s) => Some(Value::Str(s.clone())),
            _ => None,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Num(n) => serde_json::Number::from_f64(*n)
                .map_or(serde_json::Value::Null, serde_json::Value::Number),
            Value::Str(s) => serde_json::Value::String(s.clone()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Bool(b) => write!(f, "{b}"),
            Value::Num(n) => write!(f, "{n}"),
            Value::Str(s) => write!(f, "{s:?}"),
        }
    }
}

pub type Vars = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Var(String),
    Lit(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Cmp(Operand, CmpOp, Operand),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

/// A parsed gateway condition, keeping its source text for display.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub source: String,
    pub expr: Expr,
}

impl Condition {
    pub fn parse(source: &str) -> Result<Self, ChorError> {
        let tokens = lex(source)?;
        let mut p = Parser { tokens, pos: 0, src: source };
        let expr = p.or()?;
        if let Some((tok, at)) = p.tokens.get(p.pos) {
            return Err(p.error(*at, format!("unexpected {tok:?}")));
        }
        Ok(Self {
            source: source.to_owned(),
            expr,
        })
    }

    /// Every `task.field` variable the condition reads.
    pub fn variables(&self) -> Vec<&str> {
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a str>) {
            match e {
                Expr::Cmp(a, _, b) => {
                    for o in [a, b] {
                        if let Operand::Var(v) = o {
                            out.push(v);
                        }
                    }
                }
                Expr::Not(inner) => walk(inner, out),
                Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| walk(x, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.expr, &mut out);
        out
    }

    /// Comparisons as `(left, right)` operand pairs, for static type checks.
    pub fn comparisons(&self) -> Vec<(&Operand, CmpOp, &Operand)> {
        fn walk<'a>(e: &'a Expr, out: &mut Vec<(&'a Operand, CmpOp, &'a Operand)>) {
            match e {
                Expr::Cmp(a, op, b) => out.push((a, *op, b)),
                Expr::Not(inner) => walk(inner, out),
                Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| walk(x, out)),
            }
        }
        let mut out = Vec::new();
        walk(&self.expr, &mut out);
        out
    }

    pub fn eval(&self, vars: &Vars) -> Result<bool, ChorError> {
        eval(&self.expr, vars)
    }
}

fn eval(e: &Expr, vars: &Vars) -> Result<bool, ChorError> {
    match e {
        Expr::Not(inner) => Ok(!eval(inner, vars)?),
        // Both connectives evaluate every operand so that unbound variables
        // are reported regardless of short-circuit order.
        Expr::And(xs) => xs
            .iter()
            .map(|x| eval(x, vars))
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.into_iter().all(|b| b)),
        Expr::Or(xs) => xs
            .iter()
            .map(|x| eval(x, vars))
            .collect::<Result<Vec<_>, _>>()
            .map(|v| v.into_iter().any(|b| b)),
        Expr::Cmp(a, op, b) => {
            let a = resolve(a, vars)?;
            let b = resolve(b, vars)?;
            compare(a, *op, b)
        }
    }
}

fn resolve<'a>(o: &'a Operand, vars: &'a Vars) -> Result<&'a Value, ChorError> {
    match o {
        Operand::Lit(v) => Ok(v),
        Operand::Var(name) => vars
            .get(name)
            .ok_or_else(|| ChorError::UnboundVariable(name.clone())),
    }
}

fn compare(a: &Value, op: CmpOp, b: &Value) -> Result<bool, ChorError> {
    let ord = match (a, b) {
        (Value::Num(x), Value::Num(y)) => x.partial_cmp(y),
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => {
            if !matches!(op, CmpOp::Eq | CmpOp::Ne) {
                return Err(ChorError::TypeMismatch("booleans only support = and !=".into()));
            }
            Some(x.cmp(y))
        }
        _ => {
            return Err(ChorError::TypeMismatch(format!(
                "cannot compare {} with {}",
                a.type_name(),
                b.type_name()
            )))
        }
    };
    // NaN compares false under every operator except !=.
    let Some(ord) = ord else {
        return Ok(op == CmpOp::Ne);
    };
    Ok(match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    And,
    Or,
    Not,
    Op(CmpOp),
    Var(String),
    Lit(Value),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ChorError> {
    let err = |at: usize, msg: &str| ChorError::Syntax {
        line: 1,
        column: src[..at].chars().count() + 1,
        message: format!("condition `{src}`: {msg}"),
    };
    let mut out = Vec::new();
    let mut it = src.char_indices().peekable();
    while let Some(&(at, c)) = it.peek() {
        match c {
            c if c.is_whitespace() => {
                it.next();
            }
            '(' => {
                it.next();
                out.push((Tok::LParen, at));
            }
            ')' => {
                it.next();
                out.push((Tok::RParen, at));
            }
            '=' => {
                it.next();
                if it.peek().map(|p| p.1) == Some('=') {
                    it.next();
                }
                out.push((Tok::Op(CmpOp::Eq), at));
            }
            '!' => {
                it.next();
                if it.next().map(|p| p.1) != Some('=') {
                    return Err(err(at, "expected `!=`"));
                }
                out.push((Tok::Op(CmpOp::Ne), at));
            }
            '<' | '>' => {
                it.next();
                let eq = it.peek().map(|p| p.1) == Some('=');
                if eq {
                    it.next();
                }
                let op = match (c, eq) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    ('>', false) => CmpOp::Gt,
                    _ => CmpOp::Ge,
                };
                out.push((Tok::Op(op), at));
            }
            '≠' | '≤' | '≥' => {
                it.next();
                let op = match c {
                    '≠' => CmpOp::Ne,
                    '≤' => CmpOp::Le,
                    _ => CmpOp::Ge,
                };
                out.push((Tok::Op(op), at));
            }
            '"' => {
                it.next();
                let mut s = String::new();
                loop {
                    match it.next() {
                        Some((_, '"')) => break,
                        Some((_, '\\')) => match it.next() {
                            Some((_, e)) => s.push(e),
                            None => return Err(err(at, "unterminated string")),
                        },
                        Some((_, ch)) => s.push(ch),
                        None => return Err(err(at, "unterminated string")),
                    }
                }
                out.push((Tok::Lit(Value::Str(s)), at));
            }
            c if c.is_ascii_digit() || c == '-' => {
                let mut s = String::new();
                while let Some(&(_, d)) = it.peek() {
                    if d.is_ascii_digit() || d == '.' || d == '-' || d == 'e' || d == 'E' || d == '+' {
                        s.push(d);
                        it.next();
                    } else {
                        break;
                    }
                }
                let n: f64 = s.parse().map_err(|_| err(at, "bad number"))?;
                out.push((Tok::Lit(Value::Num(n)), at));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&(_, d)) = it.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' || d == '.' || d == '-' {
                        s.push(d);
                        it.next();
                    } else {
                        break;
                    }
                }
                let tok = match s.as_str() {
                    "and" | "AND" => Tok::And,
                    "or" | "OR" => Tok::Or,
                    "not" | "NOT" => Tok::Not,
                    "true" => Tok::Lit(Value::Bool(true)),
                    "false" => Tok::Lit(Value::Bool(false)),
                    _ => {
                        let parts: Vec<_> = s.split('.').collect();
                        if parts.len() != 2 || parts.iter().any(|p| p.is_empty()) {
                            return Err(err(at, &format!("`{s}` is not a `task.field` variable")));
                        }
                        Tok::Var(s)
                    }
                };
                out.push((tok, at));
            }
            other => return Err(err(at, &format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

struct Parser<'s> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    src: &'s str,
}

impl Parser<'_> {
    fn error(&self, at: usize, message: String) -> ChorError {
        ChorError::Syntax {
            line: 1,
            column: self.src[..at].chars().count() + 1,
            message: format!("condition `{}`: {message}", self.src),
        }
    }

    fn end(&self) -> usize {
        self.src.len()
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.0)
    }

    fn at(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end(), |t| t.1)
    }

    fn or(&mut self) -> Result<Expr, ChorError> {
        let mut xs = vec![self.and()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            xs.push(self.and()?);
        }
        Ok(if xs.len() == 1 { xs.pop().unwrap() } else { Expr::Or(xs) })
    }

    fn and(&mut self) -> Result<Expr, ChorError> {
        let mut xs = vec![self.unary()?];
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            xs.push(self.unary()?);
        }
        Ok(if xs.len() == 1 { xs.pop().unwrap() } else { Expr::And(xs) })
    }

    fn unary(&mut self) -> Result<Expr, ChorError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(Expr::Not(Box::new(self.unary()?)))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.or()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err(self.error(self.at(), "expected `)`".into()));
                }
                self.pos += 1;
                Ok(inner)
            }
            _ => {
                let a = self.operand()?;
                let op = match self.peek() {
                    Some(Tok::Op(op)) => *op,
                    _ => return Err(self.error(self.at(), "expected comparison operator".into())),
                };
                self.pos += 1;
                let b = self.operand()?;
                Ok(Expr::Cmp(a, op, b))
            }
        }
    }

    fn operand(&mut self) -> Result<Operand, ChorError> {
        let at = self.at();
        let op = match self.peek() {
            Some(Tok::Var(v)) => Operand::Var(v.clone()),
            Some(Tok::Lit(l)) => Operand::Lit(l.clone()),
            _ => return Err(self.error(at, "expected variable or literal".into())),
        };
        self.pos += 1;
        Ok(op)
    }
}
