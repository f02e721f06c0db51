//! Canonical s-expression text format for core terms.
//!
//! ```text
//! M ::= c | x | fail
//!     | (lambda x M) | (M N)
//!     | (draw D V ...) | (prim g V ...)
//!     | (if V M N) | (score V)
//! ```
//!
//! Constants print with the shortest representation that parses back to the
//! same bits; non-finite constants print as `+inf`, `-inf` and `nan`.
//! Printing then parsing is the identity on terms whose constants are not
//! non-canonical NaNs.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::ast::{DistId, Name, PrimId, Term, Value};

/// Words that cannot be used as variable names in the core syntax.
pub const RESERVED: &[&str] = &["lambda", "draw", "prim", "if", "score", "fail", "+inf", "-inf", "nan"];

pub fn format_const(c: f64) -> String {
    if c.is_nan() {
        "nan".to_owned()
    } else if c == f64::INFINITY {
        "+inf".to_owned()
    } else if c == f64::NEG_INFINITY {
        "-inf".to_owned()
    } else {
        format!("{c:?}")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Const(c) => f.write_str(&format_const(*c)),
            Value::Var(x) => write!(f, "{x}"),
            Value::Lam(x, body) => write!(f, "(lambda {x} {body})"),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Val(v) => write!(f, "{v}"),
            Term::App(m, n) => write!(f, "({m} {n})"),
            Term::Draw(d, args) => {
                write!(f, "(draw {d}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str(")")
            }
            Term::Prim(g, args) => {
                write!(f, "(prim {g}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                f.write_str(")")
            }
            Term::If(v, m, n) => write!(f, "(if {v} {m} {n})"),
            Term::Score(v) => write!(f, "(score {v})"),
            Term::Fail => f.write_str("fail"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{line}:{column}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Open,
    Close,
    Atom(String),
}

#[derive(Debug, Clone)]
pub(crate) struct Spanned {
    pub tok: Token,
    pub line: usize,
    pub column: usize,
}

/// Splits source text into parentheses and atoms. `;` starts a line comment.
pub(crate) fn tokenize(src: &str) -> Vec<Spanned> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut column = 1;
    let mut chars = src.chars().peekable();
    while let Some(&ch) = chars.peek() {
        match ch {
            '\n' => {
                chars.next();
                line += 1;
                column = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                column += 1;
            }
            ';' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '(' | '[' => {
                chars.next();
                out.push(Spanned { tok: Token::Open, line, column });
                column += 1;
            }
            ')' | ']' => {
                chars.next();
                out.push(Spanned { tok: Token::Close, line, column });
                column += 1;
            }
            _ => {
                let (start_line, start_col) = (line, column);
                let mut s = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || matches!(c, '(' | ')' | '[' | ']' | ';') {
                        break;
                    }
                    s.push(c);
                    chars.next();
                    column += 1;
                }
                out.push(Spanned { tok: Token::Atom(s), line: start_line, column: start_col });
            }
        }
    }
    out
}

/// Reads a numeric literal. Only tokens that start like a number qualify, so
/// names such as `inf` or `e` stay identifiers.
pub(crate) fn parse_number(s: &str) -> Option<f64> {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    let starts_numeric = body.starts_with(|c: char| c.is_ascii_digit())
        || (body.starts_with('.') && body[1..].starts_with(|c: char| c.is_ascii_digit()));
    if starts_numeric {
        s.parse().ok()
    } else {
        None
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn err<T>(&self, at: Option<&Spanned>, message: impl Into<String>) -> Result<T, SyntaxError> {
        let (line, column) = at.map(|s| (s.line, s.column)).unwrap_or(self.end);
        Err(SyntaxError { line, column, message: message.into() })
    }

    fn next(&mut self) -> Result<Spanned, SyntaxError> {
        match self.toks.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.clone())
            }
            None => self.err(None, "unexpected end of input"),
        }
    }

    fn expect_close(&mut self) -> Result<(), SyntaxError> {
        let t = self.next()?;
        match t.tok {
            Token::Close => Ok(()),
            _ => self.err(Some(&t), "expected `)`"),
        }
    }

    fn atom(&mut self) -> Result<(String, Spanned), SyntaxError> {
        let t = self.next()?;
        match &t.tok {
            Token::Atom(s) => Ok((s.clone(), t)),
            _ => self.err(Some(&t), "expected an identifier"),
        }
    }

    fn name(&mut self) -> Result<Name, SyntaxError> {
        let (s, t) = self.atom()?;
        if RESERVED.contains(&s.as_str()) || parse_number(&s).is_some() {
            return self.err(Some(&t), format!("`{s}` cannot be used as a variable"));
        }
        Ok(Name::new(&s))
    }

    fn value(&mut self) -> Result<Value, SyntaxError> {
        let start = self.toks.get(self.pos).cloned();
        match self.term()? {
            Term::Val(v) => Ok(v),
            _ => self.err(start.as_ref(), "expected a value"),
        }
    }

    fn values_until_close(&mut self) -> Result<Vec<Value>, SyntaxError> {
        let mut out = Vec::new();
        while !matches!(self.toks.get(self.pos).map(|t| &t.tok), Some(Token::Close) | None) {
            out.push(self.value()?);
        }
        self.expect_close()?;
        Ok(out)
    }

    fn term(&mut self) -> Result<Term, SyntaxError> {
        let t = self.next()?;
        match &t.tok {
            Token::Close => self.err(Some(&t), "unexpected `)`"),
            Token::Atom(s) => Ok(match s.as_str() {
                "fail" => Term::Fail,
                "+inf" => Term::constant(f64::INFINITY),
                "-inf" => Term::constant(f64::NEG_INFINITY),
                "nan" => Term::constant(f64::NAN),
                kw if RESERVED.contains(&kw) => return self.err(Some(&t), format!("misplaced keyword `{kw}`")),
                other => match parse_number(other) {
                    Some(c) => Term::constant(c),
                    None => Term::Val(Value::Var(Name::new(other))),
                },
            }),
            Token::Open => {
                let head = self.toks.get(self.pos).cloned();
                let kw = match head.as_ref().map(|h| &h.tok) {
                    Some(Token::Atom(s)) => s.clone(),
                    _ => String::new(),
                };
                match kw.as_str() {
                    "lambda" => {
                        self.pos += 1;
                        let x = self.name()?;
                        let body = self.term()?;
                        self.expect_close()?;
                        Ok(Term::Val(Value::Lam(x, Arc::new(body))))
                    }
                    "draw" => {
                        self.pos += 1;
                        let (d, _) = self.atom()?;
                        let args = self.values_until_close()?;
                        Ok(Term::Draw(DistId::new(&d), args))
                    }
                    "prim" => {
                        self.pos += 1;
                        let (g, _) = self.atom()?;
                        let args = self.values_until_close()?;
                        Ok(Term::Prim(PrimId::new(&g), args))
                    }
                    "if" => {
                        self.pos += 1;
                        let v = self.value()?;
                        let m = self.term()?;
                        let n = self.term()?;
                        self.expect_close()?;
                        Ok(Term::ite(v, m, n))
                    }
                    "score" => {
                        self.pos += 1;
                        let v = self.value()?;
                        self.expect_close()?;
                        Ok(Term::Score(v))
                    }
                    _ => {
                        let m = self.term()?;
                        let n = self.term()?;
                        self.expect_close()?;
                        Ok(Term::app(m, n))
                    }
                }
            }
        }
    }
}

/// Parses one core term. Identifiers of distributions and primitives are not
/// checked here; see [`crate::builtins::Registry::validate`].
pub fn parse_term(src: &str) -> Result<Term, SyntaxError> {
    let toks = tokenize(src);
    let end = src.lines().enumerate().last().map(|(i, l)| (i + 1, l.chars().count() + 1)).unwrap_or((1, 1));
    let mut p = Parser { toks, pos: 0, end };
    let t = p.term()?;
    if let Some(extra) = p.toks.get(p.pos).cloned() {
        return p.err(Some(&extra), "trailing input after term");
    }
    Ok(t)
}
