//! Model formulas of the form `Surv(time, status) ~ bili + log(protime) + trt`.
//!
//! Grammar (whitespace insensitive):
//!
//! ```text
//! formula := "Surv" "(" ident "," ident ")" "~" term ("+" term)*
//! term    := ident | "log" "(" ident ")"
//! ident   := [A-Za-z_][A-Za-z0-9_.]*
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("syntax error at position {position}: expected {expected}")]
    SyntaxError { position: usize, expected: String },
    #[error("formula must start with a Surv(time, status) response")]
    MissingSurv,
    #[error("formula has no covariate terms after '~'")]
    EmptyRhs,
    #[error("unknown transform '{0}' (only log is supported)")]
    UnknownTransform(String),
    #[error("term '{0}' appears more than once")]
    DuplicateTerm(String),
    #[error("unknown covariate '{0}'")]
    UnknownCovariate(String),
    #[error("covariate index {0} out of range")]
    IndexOutOfRange(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Identity,
    Log,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term {
    pub source: String,
    pub transform: Transform,
}

impl Term {
    pub fn identity(source: impl Into<String>) -> Self {
        Term { source: source.into(), transform: Transform::Identity }
    }

    pub fn log(source: impl Into<String>) -> Self {
        Term { source: source.into(), transform: Transform::Log }
    }

    /// Name used for the derived covariate column, e.g. `log_bili`.
    pub fn column_name(&self) -> String {
        match self.transform {
            Transform::Identity => self.source.clone(),
            Transform::Log => format!("log_{}", self.source),
        }
    }

    fn matches(&self, key: &str) -> bool {
        let key = key.trim();
        match self.transform {
            Transform::Identity => key == self.source,
            Transform::Log => key == self.column_name() || strip_ws(key) == self.to_string(),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.transform {
            Transform::Identity => write!(f, "{}", self.source),
            Transform::Log => write!(f, "log({})", self.source),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub time_col: String,
    pub status_col: String,
    pub terms: Vec<Term>,
}

impl ModelSpec {
    pub fn p(&self) -> usize {
        self.terms.len()
    }

    /// Column names of the derived design, in term order.
    pub fn column_names(&self) -> Vec<String> {
        self.terms.iter().map(Term::column_name).collect()
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Surv({}, {}) ~ ", self.time_col, self.status_col)?;
        for (k, t) in self.terms.iter().enumerate() {
            if k > 0 {
                f.write_str(" + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// A covariate selector: a 1-based position in the formula or a name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateKey {
    Index(i64),
    Name(String),
}

impl Default for CovariateKey {
    fn default() -> Self {
        CovariateKey::Index(1)
    }
}

impl From<&str> for CovariateKey {
    /// Integers are read as positions, anything else as a name.
    fn from(s: &str) -> Self {
        match s.trim().parse::<i64>() {
            Ok(k) => CovariateKey::Index(k),
            Err(_) => CovariateKey::Name(s.trim().to_string()),
        }
    }
}

impl fmt::Display for CovariateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovariateKey::Index(k) => write!(f, "{k}"),
            CovariateKey::Name(s) => f.write_str(s),
        }
    }
}

/// Resolves a covariate selector to its 1-based term index.
pub fn resolve_covariate(spec: &ModelSpec, key: &CovariateKey) -> Result<usize, FormulaError> {
    match key {
        CovariateKey::Index(k) => {
            if *k >= 1 && (*k as usize) <= spec.p() {
                Ok(*k as usize)
            } else {
                Err(FormulaError::IndexOutOfRange(*k))
            }
        }
        CovariateKey::Name(name) => spec
            .terms
            .iter()
            .position(|t| t.matches(name))
            .map(|k| k + 1)
            .ok_or_else(|| FormulaError::UnknownCovariate(name.clone())),
    }
}

fn strip_ws(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    LParen,
    RParen,
    Comma,
    Tilde,
    Plus,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Tilde => "'~'".into(),
            Tok::Plus => "'+'".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, FormulaError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        let tok = match c {
            c if c.is_whitespace() => {
                chars.next();
                continue;
            }
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            '~' => Tok::Tilde,
            '+' => Tok::Plus,
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut ident = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' || c == '.' {
                        ident.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push((pos, Tok::Ident(ident)));
                continue;
            }
            _ => {
                return Err(FormulaError::SyntaxError {
                    position: pos,
                    expected: "identifier, '(', ')', ',', '~' or '+'".into(),
                })
            }
        };
        chars.next();
        out.push((pos, tok));
    }
    out.push((text.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn pos(&self) -> usize {
        self.toks[self.at].0
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.at].1.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok) -> Result<(), FormulaError> {
        if *self.peek() == want {
            self.next();
            Ok(())
        } else {
            Err(FormulaError::SyntaxError { position: self.pos(), expected: want.describe() })
        }
    }

    fn ident(&mut self) -> Result<String, FormulaError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => Err(FormulaError::SyntaxError { position: self.pos(), expected: "identifier".into() }),
        }
    }

    fn term(&mut self) -> Result<Term, FormulaError> {
        let name = self.ident()?;
        if *self.peek() != Tok::LParen {
            return Ok(Term::identity(name));
        }
        if name != "log" {
            return Err(FormulaError::UnknownTransform(name));
        }
        self.next();
        let inner = self.ident()?;
        self.expect(Tok::RParen)?;
        Ok(Term::log(inner))
    }
}

/// Parses a model formula. Never panics; malformed input yields a positioned error.
pub fn parse_formula(text: &str) -> Result<ModelSpec, FormulaError> {
    let mut ps = Parser { toks: tokenize(text)?, at: 0 };
    match ps.peek() {
        Tok::Ident(s) if s == "Surv" => {
            ps.next();
        }
        _ => return Err(FormulaError::MissingSurv),
    }
    ps.expect(Tok::LParen)?;
    let time_col = ps.ident()?;
    ps.expect(Tok::Comma)?;
    let status_col = ps.ident()?;
    ps.expect(Tok::RParen)?;
    ps.expect(Tok::Tilde)?;
    if *ps.peek() == Tok::End {
        return Err(FormulaError::EmptyRhs);
    }

    let mut terms: Vec<Term> = vec![ps.term()?];
    loop {
        match ps.peek() {
            Tok::End => break,
            Tok::Plus => {
                ps.next();
                terms.push(ps.term()?);
            }
            _ => {
                return Err(FormulaError::SyntaxError { position: ps.pos(), expected: "'+' or end of input".into() })
            }
        }
    }
    for (k, t) in terms.iter().enumerate() {
        if terms[..k].contains(t) {
            return Err(FormulaError::DuplicateTerm(t.to_string()));
        }
    }
    Ok(ModelSpec { time_col, status_col, terms })
}
