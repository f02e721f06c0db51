//! Translation of Church expressions and queries to core terms.
//!
//! Arguments of primitive and distribution calls, and the scrutinee of `if`,
//! are let-bound to fresh variables so that the core term only places values
//! in those positions. Fresh names come from the reserved `%` namespace,
//! numbered in order of generation, so the translation is deterministic.

use crate::ast::{DistId, Name, PrimId, Term, Value};
use crate::builtins::Registry;

use super::parse::{Query, SurfaceExpr};
use super::ChurchError;

/// Binder names used by the fixpoint combinator.
const FIX_Y: &str = "%y";
const FIX_Z: &str = "%z";
const FIX_W: &str = "%w";

/// `N_fix = λz.λw.w (λy.((z z) w) y)`.
fn n_fix() -> Term {
    let zz = Term::app(Term::var(FIX_Z), Term::var(FIX_Z));
    let inner = Term::lam(FIX_Y, Term::app(Term::app(zz, Term::var(FIX_W)), Term::var(FIX_Y)));
    Term::lam(FIX_Z, Term::lam(FIX_W, Term::app(Term::var(FIX_W), inner)))
}

/// Call-by-value fixpoint `fix x.M = λy.N_fix N_fix (λx.M) y`.
pub fn fix(x: Name, m: Term) -> Term {
    let nn = Term::app(n_fix(), n_fix());
    let body = Term::app(Term::app(nn, Term::Val(Value::Lam(x, m.into()))), Term::var(FIX_Y));
    Term::lam(FIX_Y, body)
}

/// Stateful translator: holds the fresh-name counter and the current scope.
pub struct Translator<'a> {
    registry: &'a Registry,
    next: usize,
    scope: Vec<Name>,
}

impl<'a> Translator<'a> {
    pub fn new(registry: &'a Registry) -> Self {
        Translator { registry, next: 0, scope: Vec::new() }
    }

    fn fresh(&mut self) -> Name {
        let n = Name::new(&format!("%t{}", self.next));
        self.next += 1;
        n
    }

    fn scoped<T>(&mut self, names: &[Name], f: impl FnOnce(&mut Self) -> T) -> T {
        let depth = self.scope.len();
        self.scope.extend(names.iter().cloned());
        let r = f(self);
        self.scope.truncate(depth);
        r
    }

    /// `let x1 = e1 in ... let xn = en in k(x1, ..., xn)`.
    fn let_chain(&mut self, args: &[SurfaceExpr], k: impl FnOnce(Vec<Value>) -> Term) -> Result<Term, ChurchError> {
        let mut bound = Vec::with_capacity(args.len());
        for e in args {
            bound.push((self.fresh(), self.expr(e)?));
        }
        let vars = bound.iter().map(|(x, _)| Value::Var(x.clone())).collect();
        Ok(bound.into_iter().rev().fold(k(vars), |body, (x, m)| Term::let_in(x, m, body)))
    }

    fn check_arity(name: &Name, expected: usize, got: usize) -> Result<(), ChurchError> {
        if expected == got {
            Ok(())
        } else {
            Err(ChurchError::Arity { name: name.to_string(), expected, got })
        }
    }

    /// `⟨e⟩` for a single expression.
    pub fn expr(&mut self, e: &SurfaceExpr) -> Result<Term, ChurchError> {
        match e {
            SurfaceExpr::Const(c) => Ok(Term::constant(*c)),
            SurfaceExpr::Var(x) if self.scope.contains(x) => Ok(Term::Val(Value::Var(x.clone()))),
            SurfaceExpr::Var(x) if x.as_str() == "mem" => Err(ChurchError::Unsupported("mem".into())),
            SurfaceExpr::Var(x) => Err(ChurchError::UnboundIdentifier(x.to_string())),
            SurfaceExpr::PrimCall(g, args) => {
                let spec = self
                    .registry
                    .prim_by_name(g.as_str())
                    .ok_or_else(|| ChurchError::UnboundIdentifier(g.to_string()))?;
                Self::check_arity(g, spec.arity, args.len())?;
                let id = PrimId(g.clone());
                self.let_chain(args, |vs| Term::Prim(id, vs))
            }
            SurfaceExpr::DistCall(d, args) => {
                let spec = self
                    .registry
                    .dist_by_name(d.as_str())
                    .ok_or_else(|| ChurchError::UnboundIdentifier(d.to_string()))?;
                Self::check_arity(d, spec.arity, args.len())?;
                let id = DistId(d.clone());
                self.let_chain(args, |vs| Term::Draw(id, vs))
            }
            SurfaceExpr::Score(arg) => self.let_chain(std::slice::from_ref(&**arg), |mut vs| Term::Score(vs.remove(0))),
            SurfaceExpr::If(c, t, f) => {
                let x = self.fresh();
                let c = self.expr(c)?;
                let t = self.expr(t)?;
                let f = self.expr(f)?;
                Ok(Term::let_in(x.clone(), c, Term::ite(Value::Var(x), t, f)))
            }
            SurfaceExpr::Lambda(params, body) => {
                let params = if params.is_empty() { vec![self.fresh()] } else { params.clone() };
                let body = self.scoped(&params, |t| t.expr(body))?;
                Ok(params.into_iter().rev().fold(body, |b, x| Term::Val(Value::Lam(x, b.into()))))
            }
            SurfaceExpr::App(f, args) => {
                let mut acc = self.expr(f)?;
                for a in args {
                    acc = Term::app(acc, self.expr(a)?);
                }
                Ok(acc)
            }
        }
    }

    /// `⟨query d1 ... dn e_out e_cond⟩`.
    ///
    /// Function defines are bound through `fix` so they may call themselves;
    /// any other define is a plain `let`, since wrapping a non-function in
    /// `fix` would turn it into a λ.
    pub fn query(&mut self, q: &Query) -> Result<Term, ChurchError> {
        let mut bindings = Vec::with_capacity(q.defines.len());
        let depth = self.scope.len();
        for (x, e) in &q.defines {
            let m = if matches!(e, SurfaceExpr::Lambda(..)) {
                let body = self.scoped(std::slice::from_ref(x), |t| t.expr(e))?;
                fix(x.clone(), body)
            } else {
                self.expr(e)?
            };
            bindings.push((x.clone(), m));
            self.scope.push(x.clone());
        }
        let b = self.fresh();
        let cond = self.expr(&q.condition);
        let out = self.expr(&q.output);
        self.scope.truncate(depth);
        let body = Term::let_in(b.clone(), cond?, Term::ite(Value::Var(b), out?, Term::Fail));
        Ok(bindings.into_iter().rev().fold(body, |n, (x, m)| Term::let_in(x, m, n)))
    }
}

/// Translates a closed surface expression.
pub fn translate_expr(e: &SurfaceExpr, registry: &Registry) -> Result<Term, ChurchError> {
    Translator::new(registry).expr(e)
}

/// Translates a query to a closed core term.
pub fn translate_query(q: &Query, registry: &Registry) -> Result<Term, ChurchError> {
    Translator::new(registry).query(q)
}
