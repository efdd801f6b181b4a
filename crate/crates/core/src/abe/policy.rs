//! Monotone access policies over authority-qualified attributes.
//!
//! ```text
//! policy := or
//! or     := and ("or" and)*
//! and    := prim ("and" prim)*
//! prim   := ATTR | "(" or ")"
//! ATTR   := name "@" authority
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `name@authority`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Attribute {
    pub name: String,
    pub authority: String,
}

impl Attribute {
    /// Panics on malformed parts; use `parse` for untrusted input.
    pub fn new(name: &str, authority: &str) -> Self {
        assert!(is_ident(name) && is_ident(authority), "malformed attribute {name}@{authority}");
        Self {
            name: name.to_owned(),
            authority: authority.to_owned(),
        }
    }

    pub fn try_new(name: &str, authority: &str) -> Result<Self, PolicySyntaxError> {
        if !is_ident(name) {
            return Err(PolicySyntaxError::new(0, format!("`{name}` is not a valid attribute name")));
        }
        if !is_ident(authority) {
            return Err(PolicySyntaxError::new(
                name.len() + 1,
                format!("`{authority}` is not a valid authority id"),
            ));
        }
        Ok(Self {
            name: name.to_owned(),
            authority: authority.to_owned(),
        })
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.name, self.authority)
    }
}

impl FromStr for Attribute {
    type Err = PolicySyntaxError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, authority) = s
            .split_once('@')
            .ok_or_else(|| PolicySyntaxError::new(0, format!("`{s}` lacks `@authority`")))?;
        Self::try_new(name, authority)
    }
}

impl Serialize for Attribute {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Attribute {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("policy syntax error at offset {offset}: {message}")]
pub struct PolicySyntaxError {
    pub offset: usize,
    pub message: String,
}

impl PolicySyntaxError {
    fn new(offset: usize, message: impl Into<String>) -> Self {
        Self {
            offset,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PolicyTree {
    Attr(Attribute),
    And(Vec<PolicyTree>),
    Or(Vec<PolicyTree>),
}

pub fn parse_policy(text: &str) -> Result<PolicyTree, PolicySyntaxError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens: &tokens,
        pos: 0,
        end: text.len(),
    };
    let tree = p.or()?;
    if let Some(t) = tokens.get(p.pos) {
        return Err(PolicySyntaxError::new(t.at, format!("unexpected {}", t.kind.describe())));
    }
    Ok(tree)
}

impl PolicyTree {
    pub fn attr(s: &str) -> Self {
        PolicyTree::Attr(s.parse().expect("valid attribute literal"))
    }

    /// Standard monotone evaluation.
    pub fn satisfies(&self, attrs: &BTreeSet<Attribute>) -> bool {
        match self {
            PolicyTree::Attr(a) => attrs.contains(a),
            PolicyTree::And(xs) => xs.iter().all(|x| x.satisfies(attrs)),
            PolicyTree::Or(xs) => xs.iter().any(|x| x.satisfies(attrs)),
        }
    }

    /// Leaves in left-to-right order, repeats included.
    pub fn leaves(&self) -> Vec<&Attribute> {
        let mut out = Vec::new();
        self.walk_leaves(&mut out);
        out
    }

    fn walk_leaves<'a>(&'a self, out: &mut Vec<&'a Attribute>) {
        match self {
            PolicyTree::Attr(a) => out.push(a),
            PolicyTree::And(xs) | PolicyTree::Or(xs) => xs.iter().for_each(|x| x.walk_leaves(out)),
        }
    }

    pub fn attributes(&self) -> BTreeSet<Attribute> {
        self.leaves().into_iter().cloned().collect()
    }

    pub fn authorities(&self) -> BTreeSet<String> {
        self.leaves().into_iter().map(|a| a.authority.clone()).collect()
    }

    /// Canonical text. Reparses to an equal tree.
    pub fn render(&self) -> String {
        self.to_string()
    }

    fn fmt_child(&self, parent_is_and: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Nested same-kind nodes are parenthesized too, otherwise the parser
        // would flatten them and the round trip would change the tree shape.
        let wrap = match self {
            PolicyTree::Attr(_) => false,
            PolicyTree::Or(_) => true,
            PolicyTree::And(_) => parent_is_and,
        };
        if wrap {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for PolicyTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (xs, sep, is_and) = match self {
            PolicyTree::Attr(a) => return write!(f, "{a}"),
            PolicyTree::And(xs) => (xs, " and ", true),
            PolicyTree::Or(xs) => (xs, " or ", false),
        };
        for (i, x) in xs.iter().enumerate() {
            if i > 0 {
                f.write_str(sep)?;
            }
            x.fmt_child(is_and, f)?;
        }
        Ok(())
    }
}

impl FromStr for PolicyTree {
    type Err = PolicySyntaxError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_policy(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    LParen,
    RParen,
    And,
    Or,
    Attr(Attribute),
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
            TokKind::And => "`and`".into(),
            TokKind::Or => "`or`".into(),
            TokKind::Attr(a) => format!("attribute `{a}`"),
        }
    }
}

struct Tok {
    kind: TokKind,
    at: usize,
}

fn lex(text: &str) -> Result<Vec<Tok>, PolicySyntaxError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let at = i;
        let kind = match c {
            b'(' => {
                i += 1;
                TokKind::LParen
            }
            b')' => {
                i += 1;
                TokKind::RParen
            }
            c if c.is_ascii_alphanumeric() || c == b'_' || c == b'@' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'@') {
                    i += 1;
                }
                let word = &text[at..i];
                match word {
                    "and" | "AND" => TokKind::And,
                    "or" | "OR" => TokKind::Or,
                    _ => {
                        let mut parts = word.split('@');
                        let (name, authority) = match (parts.next(), parts.next(), parts.next()) {
                            (Some(n), Some(a), None) => (n, a),
                            _ => {
                                return Err(PolicySyntaxError::new(
                                    at,
                                    format!("`{word}` is not of the form name@authority"),
                                ))
                            }
                        };
                        let attr = Attribute::try_new(name, authority)
                            .map_err(|e| PolicySyntaxError::new(at + e.offset, e.message))?;
                        TokKind::Attr(attr)
                    }
                }
            }
            _ => {
                let ch = text[at..].chars().next().unwrap_or('?');
                return Err(PolicySyntaxError::new(at, format!("unexpected character `{ch}`")));
            }
        };
        out.push(Tok { kind, at });
    }
    Ok(out)
}

struct Parser<'t> {
    tokens: &'t [Tok],
    pos: usize,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&TokKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn here(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |t| t.at)
    }

    fn or(&mut self) -> Result<PolicyTree, PolicySyntaxError> {
        let mut xs = vec![self.and()?];
        while self.peek() == Some(&TokKind::Or) {
            self.pos += 1;
            xs.push(self.and()?);
        }
        Ok(if xs.len() == 1 { xs.pop().unwrap() } else { PolicyTree::Or(xs) })
    }

    fn and(&mut self) -> Result<PolicyTree, PolicySyntaxError> {
        let mut xs = vec![self.prim()?];
        while self.peek() == Some(&TokKind::And) {
            self.pos += 1;
            xs.push(self.prim()?);
        }
        Ok(if xs.len() == 1 { xs.pop().unwrap() } else { PolicyTree::And(xs) })
    }

    fn prim(&mut self) -> Result<PolicyTree, PolicySyntaxError> {
        let at = self.here();
        match self.peek().cloned() {
            Some(TokKind::Attr(a)) => {
                self.pos += 1;
                Ok(PolicyTree::Attr(a))
            }
            Some(TokKind::LParen) => {
                self.pos += 1;
                let inner = self.or()?;
                if self.peek() != Some(&TokKind::RParen) {
                    return Err(PolicySyntaxError::new(self.here(), "expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(other) => Err(PolicySyntaxError::new(
                at,
                format!("expected attribute or `(`, found {}", other.describe()),
            )),
            None => Err(PolicySyntaxError::new(at, "unexpected end of policy")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[&str]) -> BTreeSet<Attribute> {
        xs.iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn two_leaf_disjunction() {
        let p = parse_policy("Patient@A1 or Insurance@A1").unwrap();
        assert_eq!(
            p,
            PolicyTree::Or(vec![PolicyTree::attr("Patient@A1"), PolicyTree::attr("Insurance@A1")])
        );
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let p = parse_policy("a@A and b@B or c@A").unwrap();
        let expected = parse_policy("(a@A and b@B) or c@A").unwrap();
        assert_eq!(p, expected);
        assert!(matches!(p, PolicyTree::Or(ref xs) if matches!(xs[0], PolicyTree::And(_))));
    }

    #[test]
    fn double_at_is_a_syntax_error() {
        let e = parse_policy("a@@A").unwrap_err();
        assert_eq!(e.offset, 0);
        assert!(parse_policy("a@A and").is_err());
        assert!(parse_policy("(a@A").is_err());
        assert!(parse_policy("a@A b@B").is_err());
        assert!(parse_policy("").is_err());
        assert!(parse_policy("1a@A").is_err());
    }

    #[test]
    fn error_offsets_point_at_the_problem() {
        let e = parse_policy("a@A and (b@B or )").unwrap_err();
        assert_eq!(e.offset, 16);
        let e = parse_policy("a@A or b@B!").unwrap_err();
        assert_eq!(e.offset, 10);
    }

    #[test]
    fn satisfaction() {
        let or = parse_policy("Patient@A1 or Insurance@A1").unwrap();
        assert!(or.satisfies(&set(&["Patient@A1"])));
        let and = parse_policy("a@A and b@A").unwrap();
        assert!(!and.satisfies(&set(&["a@A"])));
        assert!(and.satisfies(&set(&["a@A", "b@A"])));
    }

    #[test]
    fn render_parenthesizes_or_under_and() {
        let p = parse_policy("(Patient@A1 or Ministry@A2) and inst_ab12cd34@A1").unwrap();
        assert_eq!(p.render(), "(Patient@A1 or Ministry@A2) and inst_ab12cd34@A1");
        let nested = PolicyTree::And(vec![
            PolicyTree::And(vec![PolicyTree::attr("a@A"), PolicyTree::attr("b@A")]),
            PolicyTree::attr("c@A"),
        ]);
        assert_eq!(parse_policy(&nested.render()).unwrap(), nested);
    }

    #[test]
    fn attribute_parsing() {
        let a: Attribute = "Ministry@A2".parse().unwrap();
        assert_eq!((a.name.as_str(), a.authority.as_str()), ("Ministry", "A2"));
        assert!("Ministry".parse::<Attribute>().is_err());
        assert!("9x@A".parse::<Attribute>().is_err());
        assert!("x@".parse::<Attribute>().is_err());
    }
}
