//! Reader for Church queries.
//!
//! ```text
//! e ::= c | x | (g e ...) | (D e ...) | (if e e e) | (lambda (x ...) e)
//!     | (lambda x e) | (e e ...) | (score e) | (and e ...) | true | false
//! d ::= (define x e) | (define (f x ...) e)
//! q ::= (query d ... e e)
//! ```
//!
//! The head of a call is resolved by scope: a bound name is applied as a
//! function, otherwise a registered primitive or distribution name is called
//! directly. Anything else becomes an application of an unbound variable and
//! is reported by the translation.

use crate::ast::Name;
use crate::builtins::Registry;
use crate::syntax::{parse_number, tokenize, Spanned, Token};

use super::ChurchError;

/// Words with a fixed meaning in the surface syntax.
pub const KEYWORDS: &[&str] = &["query", "define", "lambda", "if", "and", "score", "true", "false"];

/// Prefix of generated names; surface identifiers may not start with it.
pub const RESERVED_PREFIX: char = '%';

#[derive(Clone, Debug, PartialEq)]
pub enum SurfaceExpr {
    Const(f64),
    Var(Name),
    PrimCall(Name, Vec<SurfaceExpr>),
    DistCall(Name, Vec<SurfaceExpr>),
    If(Box<SurfaceExpr>, Box<SurfaceExpr>, Box<SurfaceExpr>),
    /// An empty parameter list stands for a single unused parameter.
    Lambda(Vec<Name>, Box<SurfaceExpr>),
    /// `(e1 e2 ... en)`; zero-argument calls `(f)` carry the argument `0`.
    App(Box<SurfaceExpr>, Vec<SurfaceExpr>),
    Score(Box<SurfaceExpr>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub defines: Vec<(Name, SurfaceExpr)>,
    pub output: SurfaceExpr,
    pub condition: SurfaceExpr,
}

#[derive(Clone, Debug)]
enum Sexp {
    Atom(String, (usize, usize)),
    List(Vec<Sexp>, (usize, usize)),
}

impl Sexp {
    fn pos(&self) -> (usize, usize) {
        match self {
            Sexp::Atom(_, p) | Sexp::List(_, p) => *p,
        }
    }

    fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(s, _) => Some(s),
            Sexp::List(..) => None,
        }
    }
}

fn err<T>(pos: (usize, usize), message: impl Into<String>) -> Result<T, ChurchError> {
    Err(ChurchError::Parse { line: pos.0, column: pos.1, message: message.into() })
}

fn read_all(src: &str) -> Result<Vec<Sexp>, ChurchError> {
    let toks = tokenize(src);
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < toks.len() {
        out.push(read(&toks, &mut pos, src)?);
    }
    Ok(out)
}

fn end_pos(src: &str) -> (usize, usize) {
    src.lines().enumerate().last().map(|(i, l)| (i + 1, l.chars().count() + 1)).unwrap_or((1, 1))
}

fn read(toks: &[Spanned], pos: &mut usize, src: &str) -> Result<Sexp, ChurchError> {
    let Some(t) = toks.get(*pos) else {
        return err(end_pos(src), "unexpected end of input");
    };
    *pos += 1;
    let here = (t.line, t.column);
    match &t.tok {
        Token::Atom(s) => Ok(Sexp::Atom(s.clone(), here)),
        Token::Close => err(here, "unexpected `)`"),
        Token::Open => {
            let mut items = Vec::new();
            loop {
                match toks.get(*pos) {
                    None => return err(end_pos(src), "unbalanced `(`: missing `)`"),
                    Some(Spanned { tok: Token::Close, .. }) => {
                        *pos += 1;
                        return Ok(Sexp::List(items, here));
                    }
                    Some(_) => items.push(read(toks, pos, src)?),
                }
            }
        }
    }
}

struct Reader<'a> {
    registry: &'a Registry,
    scope: Vec<Name>,
}

impl Reader<'_> {
    fn bound(&self, x: &str) -> bool {
        self.scope.iter().any(|n| n.as_str() == x)
    }

    fn binder(&self, s: &Sexp) -> Result<Name, ChurchError> {
        let Some(x) = s.atom() else {
            return err(s.pos(), "expected an identifier");
        };
        if KEYWORDS.contains(&x) || x.starts_with(RESERVED_PREFIX) || parse_number(x).is_some() {
            return err(s.pos(), format!("`{x}` cannot be bound"));
        }
        Ok(Name::new(x))
    }

    fn with_bound<T>(&mut self, names: &[Name], f: impl FnOnce(&mut Self) -> T) -> T {
        let depth = self.scope.len();
        self.scope.extend(names.iter().cloned());
        let r = f(self);
        self.scope.truncate(depth);
        r
    }

    fn lambda(&mut self, params: &Sexp, body: &Sexp) -> Result<SurfaceExpr, ChurchError> {
        let names = match params {
            Sexp::Atom(..) => vec![self.binder(params)?],
            Sexp::List(items, _) => items.iter().map(|p| self.binder(p)).collect::<Result<Vec<_>, _>>()?,
        };
        let body = self.with_bound(&names, |r| r.expr(body))?;
        Ok(SurfaceExpr::Lambda(names, Box::new(body)))
    }

    fn exprs(&mut self, items: &[Sexp]) -> Result<Vec<SurfaceExpr>, ChurchError> {
        items.iter().map(|e| self.expr(e)).collect()
    }

    fn expr(&mut self, s: &Sexp) -> Result<SurfaceExpr, ChurchError> {
        let items = match s {
            Sexp::Atom(a, p) => {
                return match a.as_str() {
                    "true" => Ok(SurfaceExpr::Const(1.0)),
                    "false" => Ok(SurfaceExpr::Const(0.0)),
                    kw if KEYWORDS.contains(&kw) => err(*p, format!("misplaced keyword `{kw}`")),
                    x => match parse_number(x) {
                        Some(c) => Ok(SurfaceExpr::Const(c)),
                        None if x.starts_with(RESERVED_PREFIX) => err(*p, format!("`{x}` is not a valid identifier")),
                        None => Ok(SurfaceExpr::Var(Name::new(x))),
                    },
                };
            }
            Sexp::List(items, _) => items,
        };
        let Some((head, args)) = items.split_first() else {
            return err(s.pos(), "empty application `()`");
        };
        match head.atom() {
            Some("lambda") => match args {
                [params, body] => self.lambda(params, body),
                _ => err(s.pos(), "`lambda` expects a parameter list and a body"),
            },
            Some("if") => match args {
                [c, t, e] => {
                    Ok(SurfaceExpr::If(Box::new(self.expr(c)?), Box::new(self.expr(t)?), Box::new(self.expr(e)?)))
                }
                _ => err(s.pos(), "`if` expects three expressions"),
            },
            Some("score") => match args {
                [e] => Ok(SurfaceExpr::Score(Box::new(self.expr(e)?))),
                _ => err(s.pos(), "`score` expects one expression"),
            },
            Some("and") => {
                let mut conj = self.exprs(args)?;
                let Some(mut acc) = conj.pop() else {
                    return Ok(SurfaceExpr::Const(1.0));
                };
                while let Some(e) = conj.pop() {
                    acc = SurfaceExpr::If(Box::new(e), Box::new(acc), Box::new(SurfaceExpr::Const(0.0)));
                }
                Ok(acc)
            }
            Some(kw @ ("query" | "define")) => err(head.pos(), format!("misplaced `{kw}`")),
            Some(g) if !self.bound(g) && self.registry.prim_by_name(g).is_some() => {
                let mut args = self.exprs(args)?;
                if g == "-" && args.len() == 1 {
                    args.insert(0, SurfaceExpr::Const(0.0));
                }
                Ok(SurfaceExpr::PrimCall(Name::new(g), args))
            }
            Some(d) if !self.bound(d) && self.registry.dist_by_name(d).is_some() => {
                Ok(SurfaceExpr::DistCall(Name::new(d), self.exprs(args)?))
            }
            _ => {
                let f = self.expr(head)?;
                let args = if args.is_empty() { vec![SurfaceExpr::Const(0.0)] } else { self.exprs(args)? };
                Ok(SurfaceExpr::App(Box::new(f), args))
            }
        }
    }

    fn define(&mut self, items: &[Sexp], at: (usize, usize)) -> Result<(Name, SurfaceExpr), ChurchError> {
        match items {
            [Sexp::List(sig, p), body] => {
                let Some((f, params)) = sig.split_first() else {
                    return err(*p, "empty function signature");
                };
                let f = self.binder(f)?;
                self.scope.push(f.clone());
                let lam = self.lambda(&Sexp::List(params.to_vec(), *p), body)?;
                Ok((f, lam))
            }
            [x, body] => {
                let x = self.binder(x)?;
                self.scope.push(x.clone());
                let e = self.expr(body)?;
                Ok((x, e))
            }
            _ => err(at, "`define` expects a name and an expression"),
        }
    }
}

/// Parses a `(query ...)` form. Distribution and primitive names are taken
/// from `registry`.
pub fn parse(source: &str, registry: &Registry) -> Result<Query, ChurchError> {
    let forms = read_all(source)?;
    let q = match forms.as_slice() {
        [q] => q,
        [] => return err(end_pos(source), "expected a `(query ...)` form"),
        [_, extra, ..] => return err(extra.pos(), "trailing input after the query"),
    };
    let items = match q {
        Sexp::List(items, _) if items.first().and_then(Sexp::atom) == Some("query") => &items[1..],
        _ => return err(q.pos(), "expected a `(query ...)` form"),
    };
    let mut reader = Reader { registry, scope: Vec::new() };
    let mut defines: Vec<(Name, SurfaceExpr)> = Vec::new();
    let mut rest = items;
    while let Some((Sexp::List(d, at), tail)) = rest.split_first() {
        if d.first().and_then(Sexp::atom) != Some("define") {
            break;
        }
        let (name, e) = reader.define(&d[1..], *at)?;
        if defines.iter().any(|(n, _)| *n == name) {
            return err(*at, format!("`{name}` is defined twice"));
        }
        defines.push((name, e));
        rest = tail;
    }
    match rest {
        [out, cond] => Ok(Query { defines, output: reader.expr(out)?, condition: reader.expr(cond)? }),
        _ => err(q.pos(), "a query needs an output expression and a condition after its defines"),
    }
}
