// SPDX-License-Identifier: Apache-2.0

//! A single-pattern SPARQL subset:
//!
//! ```text
//! SELECT ?x WHERE { <subject> <predicate> ?x . FILTER(?x > 10) }
//! SELECT ?x WHERE { ?x <predicate> <object> . }
//! ```
//!
//! IRIs carry raw entity and relation strings. Inside `<...>`, `\>` and `\\`
//! escape a literal `>` and backslash. Keywords are case-insensitive and
//! whitespace between tokens is free.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{KbError, KnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl Comparator {
    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            Comparator::Lt | Comparator::Gt | Comparator::Le | Comparator::Ge
        )
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Gt => ">",
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub comparator: Comparator,
    pub literal: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriplePattern {
    ObjectUnknown { subject: String, predicate: String },
    SubjectUnknown { predicate: String, object: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparqlQuery {
    pub variable: String,
    pub pattern: TriplePattern,
    pub filter: Option<Filter>,
}

/// Decimal literal: optional sign, digits with an optional fraction, optional
/// exponent. Rejects `inf`, `nan` and friends that `f64::from_str` accepts.
pub(crate) fn parse_decimal(s: &str) -> Option<f64> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let starts_ok = body.starts_with(|c: char| c.is_ascii_digit() || c == '.');
    if !starts_ok || body.contains(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E') {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn escape_iri(raw: &str) -> String {
    raw.replace('\\', "\\\\").replace('>', "\\>")
}

fn quote_literal(raw: &str) -> String {
    if parse_decimal(raw).is_some() {
        raw.to_string()
    } else {
        format!("\"{}\"", raw.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

impl fmt::Display for SparqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let var = &self.variable;
        write!(f, "SELECT ?{var} WHERE {{ ")?;
        match &self.pattern {
            TriplePattern::ObjectUnknown { subject, predicate } => write!(
                f,
                "<{}> <{}> ?{var} . ",
                escape_iri(subject),
                escape_iri(predicate)
            )?,
            TriplePattern::SubjectUnknown { predicate, object } => write!(
                f,
                "?{var} <{}> <{}> . ",
                escape_iri(predicate),
                escape_iri(object)
            )?,
        }
        if let Some(filter) = &self.filter {
            write!(
                f,
                "FILTER(?{var} {} {}) ",
                filter.comparator.symbol(),
                quote_literal(&filter.literal)
            )?;
        }
        f.write_str("}")
    }
}

/// `SELECT ?x WHERE { <subject> <predicate> ?x . }`
pub fn generate_sparql(subject: &str, predicate: &str) -> Result<String, KbError> {
    if subject.is_empty() || predicate.is_empty() {
        return Err(KbError::EmptyComponent);
    }
    Ok(SparqlQuery {
        variable: "x".into(),
        pattern: TriplePattern::ObjectUnknown {
            subject: subject.into(),
            predicate: predicate.into(),
        },
        filter: None,
    }
    .to_string())
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Word(String),
    Var(String),
    Iri(String),
    Str(String),
    Number(String),
    Punct(&'static str),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

fn syntax(position: usize, expected: impl Into<String>) -> KbError {
    KbError::SyntaxError {
        position,
        expected: expected.into(),
    }
}

impl<'a> Lexer<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let rest = self.rest();
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &'a str {
        let rest = self.rest();
        let end = rest.find(|c| !pred(c)).unwrap_or(rest.len());
        self.pos += end;
        &rest[..end]
    }

    /// Consume a delimited body up to `close`, honouring backslash escapes.
    fn delimited(&mut self, close: char, what: &str) -> Result<String, KbError> {
        let start = self.pos;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '\\' => match chars.next() {
                    Some((_, e)) => out.push(e),
                    None => break,
                },
                c if c == close => {
                    self.pos += i + c.len_utf8();
                    return Ok(out);
                }
                '\n' => break,
                c => out.push(c),
            }
        }
        Err(syntax(start, format!("closing `{close}` for {what}")))
    }

    fn next(&mut self) -> Result<Option<(usize, Token)>, KbError> {
        self.skip_ws();
        let start = self.pos;
        let Some(c) = self.rest().chars().next() else {
            return Ok(None);
        };
        let token = match c {
            '<' => {
                self.pos += 1;
                Token::Iri(self.delimited('>', "IRI")?)
            }
            '{' | '}' | '(' | ')' | '.' => {
                self.pos += 1;
                Token::Punct(match c {
                    '{' => "{",
                    '}' => "}",
                    '(' => "(",
                    ')' => ")",
                    _ => ".",
                })
            }
            '?' => {
                self.pos += 1;
                let name = self.take_while(|c| c.is_alphanumeric() || c == '_');
                if name.is_empty() {
                    return Err(syntax(start + 1, "variable name"));
                }
                Token::Var(name.to_string())
            }
            '"' => {
                self.pos += 1;
                Token::Str(self.delimited('"', "string literal")?)
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' => {
                let text = self
                    .take_while(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
                if parse_decimal(text).is_none() {
                    return Err(syntax(start, "number"));
                }
                Token::Number(text.to_string())
            }
            c if c.is_alphabetic() => {
                Token::Word(self.take_while(|c| c.is_alphanumeric()).to_uppercase())
            }
            _ => return Err(syntax(start, "SPARQL token")),
        };
        Ok(Some((start, token)))
    }
}

impl Lexer<'_> {
    /// Comparators only occur right after the filter variable, where `<`
    /// cannot open an IRI.
    fn comparator(&mut self) -> Result<Comparator, KbError> {
        self.skip_ws();
        let start = self.pos;
        for (text, cmp) in [
            ("<=", Comparator::Le),
            (">=", Comparator::Ge),
            ("!=", Comparator::Ne),
            ("<", Comparator::Lt),
            (">", Comparator::Gt),
            ("=", Comparator::Eq),
        ] {
            if self.rest().starts_with(text) {
                self.pos += text.len();
                return Ok(cmp);
            }
        }
        Err(syntax(start, "comparator"))
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: Option<Option<(usize, Token)>>,
}

impl Parser<'_> {
    fn peek(&mut self) -> Result<Option<&Token>, KbError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next()?);
        }
        Ok(self.peeked.as_ref().unwrap().as_ref().map(|(_, t)| t))
    }

    fn bump(&mut self) -> Result<Option<(usize, Token)>, KbError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lexer.next(),
        }
    }

    fn position(&self) -> usize {
        match &self.peeked {
            Some(Some((p, _))) => *p,
            _ => self.lexer.pos,
        }
    }

    fn expect(&mut self, want: &Token, what: &str) -> Result<(), KbError> {
        let pos = self.position();
        match self.bump()? {
            Some((_, t)) if &t == want => Ok(()),
            _ => Err(syntax(pos, what)),
        }
    }

    fn var(&mut self) -> Result<String, KbError> {
        let pos = self.position();
        match self.bump()? {
            Some((_, Token::Var(v))) => Ok(v),
            _ => Err(syntax(pos, "variable")),
        }
    }

    fn term(&mut self) -> Result<(usize, Token), KbError> {
        let pos = self.position();
        match self.bump()? {
            Some((p, t @ (Token::Var(_) | Token::Iri(_)))) => Ok((p, t)),
            _ => Err(syntax(pos, "IRI or variable")),
        }
    }

    fn query(&mut self) -> Result<SparqlQuery, KbError> {
        self.expect(&Token::Word("SELECT".into()), "SELECT")?;
        let variable = self.var()?;
        self.expect(&Token::Word("WHERE".into()), "WHERE")?;
        self.expect(&Token::Punct("{"), "`{`")?;

        let (spos, subject) = self.term()?;
        let (ppos, predicate) = self.term()?;
        let (opos, object) = self.term()?;
        let Token::Iri(predicate) = predicate else {
            return Err(syntax(ppos, "predicate IRI"));
        };
        let pattern = match (subject, object) {
            (Token::Iri(subject), Token::Var(v)) if v == variable => {
                TriplePattern::ObjectUnknown { subject, predicate }
            }
            (Token::Var(v), Token::Iri(object)) if v == variable => {
                TriplePattern::SubjectUnknown { predicate, object }
            }
            (Token::Var(_), _) => return Err(syntax(spos, format!("?{variable} in one position"))),
            _ => return Err(syntax(opos, format!("?{variable} in one position"))),
        };
        if self.peek()? == Some(&Token::Punct(".")) {
            self.bump()?;
        }

        let mut filter = None;
        if self.peek()? == Some(&Token::Word("FILTER".into())) {
            self.bump()?;
            self.expect(&Token::Punct("("), "`(`")?;
            let vpos = self.position();
            if self.var()? != variable {
                return Err(syntax(vpos, format!("?{variable}")));
            }
            debug_assert!(self.peeked.is_none());
            let comparator = self.lexer.comparator()?;
            let lpos = self.position();
            let literal = match self.bump()? {
                Some((_, Token::Number(n))) => n,
                Some((_, Token::Str(s))) => s,
                Some((_, Token::Iri(s))) => s,
                _ => return Err(syntax(lpos, "literal")),
            };
            if comparator.is_numeric() && parse_decimal(&literal).is_none() {
                return Err(syntax(lpos, "numeric literal for ordering comparator"));
            }
            self.expect(&Token::Punct(")"), "`)`")?;
            filter = Some(Filter {
                comparator,
                literal,
            });
        }
        self.expect(&Token::Punct("}"), "`}`")?;
        let end = self.position();
        if self.bump()?.is_some() {
            return Err(syntax(end, "end of query"));
        }
        Ok(SparqlQuery {
            variable,
            pattern,
            filter,
        })
    }
}

pub fn parse_sparql(text: &str) -> Result<SparqlQuery, KbError> {
    Parser {
        lexer: Lexer { src: text, pos: 0 },
        peeked: None,
    }
    .query()
}

fn passes(filter: &Filter, value: &str) -> Result<bool, KbError> {
    let numeric = (parse_decimal(value), parse_decimal(&filter.literal));
    Ok(match filter.comparator {
        Comparator::Eq | Comparator::Ne => {
            let equal = match numeric {
                (Some(a), Some(b)) => a == b,
                _ => value == filter.literal,
            };
            equal == (filter.comparator == Comparator::Eq)
        }
        cmp => {
            let (Some(a), Some(b)) = numeric else {
                return Err(KbError::FilterTypeError(value.to_string()));
            };
            match cmp {
                Comparator::Lt => a < b,
                Comparator::Gt => a > b,
                Comparator::Le => a <= b,
                _ => a >= b,
            }
        }
    })
}

/// Bindings of the query variable, first-insertion order, filter applied.
pub fn execute_sparql(kb: &KnowledgeBase, q: &SparqlQuery) -> Result<Vec<String>, KbError> {
    let candidates = match &q.pattern {
        TriplePattern::ObjectUnknown { subject, predicate } => kb.objects(subject, predicate),
        TriplePattern::SubjectUnknown { predicate, object } => kb.subjects(predicate, object),
    };
    let mut out = Vec::with_capacity(candidates.len());
    for value in candidates {
        if let Some(filter) = &q.filter {
            if !passes(filter, value)? {
                continue;
            }
        }
        out.push(value.clone());
    }
    Ok(out)
}
