//! Environment-based big-step evaluator.
//!
//! Same rules, step counting and weight arithmetic as the substitution-based
//! evaluator in `big.rs`, but variables are looked up in an environment
//! instead of being substituted, so closures are never copied. λ-results are
//! read back into terms by substituting their environment at the end. The
//! density and sampling functions run on this evaluator.

use std::cell::RefCell;
use std::rc::Rc;

use bumpalo::Bump;
use std::sync::Arc;

use super::big::BigRun;
use super::{ChoiceSource, EvalError, Evaluator, Status};
use crate::ast::{is_score_arg, subst, GeneralizedValue, Name, Term, Value, FALSE, TRUE};
use crate::builtins::{BuiltinError, DistSpec, PrimSpec, Registry};

/// A term with variables replaced by environment indices.
enum Code {
    Const(f64),
    Var(usize),
    Lam(LamCode),
    Fail,
    App(Box<Code>, Box<Code>),
    /// `(λx.M) N`, applied without building a closure for the λ.
    Let(LamCode, Box<Code>),
    Draw(Result<DistSpec, BuiltinError>, Vec<Operand>),
    Prim(Result<PrimSpec, BuiltinError>, Vec<Operand>),
    If(Operand, Box<Code>, Box<Code>),
    Score(Operand),
}

enum Operand {
    Const(f64),
    Var(usize),
    Lam,
}

struct LamCode {
    /// The source node, a `Term::Val(Value::Lam(..))`.
    node: Arc<Term>,
    body: Box<Code>,
    /// Free variables of the λ with their indices in the defining environment.
    captures: Vec<(Name, usize)>,
}

/// Compiles a closed term; `None` if it has a free variable. Builtins are
/// resolved up front; lookup errors are kept and raised when reached.
fn compile(term: &Arc<Term>, reg: &Registry, scope: &mut Vec<Name>) -> Option<Code> {
    fn index(scope: &[Name], x: &Name) -> Option<usize> {
        scope.iter().rev().position(|y| y == x)
    }
    fn operand(v: &Value, scope: &[Name]) -> Option<Operand> {
        Some(match v {
            Value::Const(c) => Operand::Const(*c),
            Value::Var(x) => Operand::Var(index(scope, x)?),
            Value::Lam(..) => {
                if v.clone().into_term().free_vars().iter().any(|x| index(scope, x).is_none()) {
                    return None;
                }
                Operand::Lam
            }
        })
    }
    Some(match &**term {
        Term::Val(Value::Const(c)) => Code::Const(*c),
        Term::Val(Value::Var(x)) => Code::Var(index(scope, x)?),
        Term::Val(Value::Lam(x, body)) => {
            let mut free: Vec<Name> = body.free_vars().into_iter().filter(|y| y != x).collect();
            free.sort();
            let captures = free.into_iter().map(|y| index(scope, &y).map(|i| (y, i))).collect::<Option<Vec<_>>>()?;
            scope.push(x.clone());
            let body = compile(body, reg, scope);
            scope.pop();
            Code::Lam(LamCode { node: term.clone(), body: Box::new(body?), captures })
        }
        Term::Fail => Code::Fail,
        Term::App(m, n) => match compile(m, reg, scope)? {
            Code::Lam(lam) => Code::Let(lam, Box::new(compile(n, reg, scope)?)),
            m => Code::App(Box::new(m), Box::new(compile(n, reg, scope)?)),
        },
        Term::Draw(d, args) => Code::Draw(
            reg.dist_with_arity(d, args.len()).cloned(),
            args.iter().map(|a| operand(a, scope)).collect::<Option<_>>()?,
        ),
        Term::Prim(g, args) => Code::Prim(
            reg.prim_with_arity(g, args.len()).cloned(),
            args.iter().map(|a| operand(a, scope)).collect::<Option<_>>()?,
        ),
        Term::If(v, m, n) => {
            Code::If(operand(v, scope)?, Box::new(compile(m, reg, scope)?), Box::new(compile(n, reg, scope)?))
        }
        Term::Score(v) => Code::Score(operand(v, scope)?),
    })
}

/// Compiled programs of recently evaluated terms, keyed by address and
/// registry generation. The `Arc` is held so the address stays unique while
/// cached.
struct CacheEntry {
    term: Arc<Term>,
    generation: u64,
    code: Rc<Code>,
}

const CACHE_SIZE: usize = 4;

thread_local! {
    static CACHE: RefCell<Vec<CacheEntry>> = const { RefCell::new(Vec::new()) };
}

fn compiled(term: &Arc<Term>, reg: &Registry) -> Option<Rc<Code>> {
    CACHE.with(|c| {
        let mut cache = c.borrow_mut();
        if let Some(i) = cache.iter().position(|e| Arc::ptr_eq(&e.term, term) && e.generation == reg.generation()) {
            let e = cache.remove(i);
            let code = e.code.clone();
            cache.insert(0, e);
            return Some(code);
        }
        let code = Rc::new(compile(term, reg, &mut Vec::new())?);
        cache.insert(0, CacheEntry { term: term.clone(), generation: reg.generation(), code: code.clone() });
        cache.truncate(CACHE_SIZE);
        Some(code)
    })
}

// Frames and closures live in a per-run arena.
struct Closure<'c> {
    lam: &'c LamCode,
    env: Env<'c>,
}

#[derive(Clone, Copy)]
enum V<'c> {
    Const(f64),
    Clo(&'c Closure<'c>),
}

struct Frame<'c> {
    val: V<'c>,
    next: Env<'c>,
}

type Env<'c> = Option<&'c Frame<'c>>;

fn lookup<'c>(env: Env<'c>, mut i: usize) -> V<'c> {
    let mut cur = env.expect("compiled indices are in scope");
    while i > 0 {
        cur = cur.next.expect("compiled indices are in scope");
        i -= 1;
    }
    cur.val
}

enum Kont<'c> {
    /// Evaluating `M` in `M N`.
    Arg(&'c Code, Env<'c>),
    /// Evaluating the argument of a closure.
    Apply(&'c Closure<'c>),
    /// Evaluating the argument of a λ-literal.
    Bind(&'c LamCode, Env<'c>),
}

enum Mode<'c> {
    Eval(&'c Code, Env<'c>),
    /// `None` is `fail`.
    Return(Option<V<'c>>),
}

enum Abort {
    Stuck,
    Fuel,
}

struct Run<'e, 'r, 'c, S: ChoiceSource> {
    ev: &'e Evaluator<'r>,
    arena: &'c Bump,
    source: S,
    stack: Vec<Kont<'c>>,
    ctx_depth: usize,
    steps: u64,
    /// Log weight so far, accumulated step by step as the machine does.
    log_w: f64,
    params: Vec<f64>,
}

impl<'c, S: ChoiceSource> Run<'_, '_, 'c, S> {
    fn tick(&mut self) -> Result<(), Abort> {
        if self.steps >= self.ev.fuel {
            return Err(Abort::Fuel);
        }
        self.steps += 1;
        Ok(())
    }

    /// A `fail` produced in the current context; escaping a proper context costs one step.
    fn raise(&mut self) -> Result<Mode<'c>, Abort> {
        if self.ctx_depth > 0 {
            self.tick()?;
        }
        Ok(Mode::Return(None))
    }

    /// The constant denoted by `op`, or `None` for a λ.
    fn resolve(op: &Operand, env: Env<'c>) -> Option<f64> {
        match op {
            Operand::Const(c) => Some(*c),
            Operand::Lam => None,
            Operand::Var(i) => match lookup(env, *i) {
                V::Const(c) => Some(c),
                V::Clo(_) => None,
            },
        }
    }

    /// Fills `self.params` with the constant arguments; false if any is a λ.
    fn load_params(&mut self, args: &[Operand], env: Env<'c>) -> bool {
        self.params.clear();
        for a in args {
            match Self::resolve(a, env) {
                Some(c) => self.params.push(c),
                None => return false,
            }
        }
        true
    }

    fn eval(&mut self, code: &'c Code, env: Env<'c>) -> Result<Result<Mode<'c>, Abort>, EvalError> {
        let mode = match code {
            Code::Const(c) => Ok(Mode::Return(Some(V::Const(*c)))),
            Code::Var(i) => Ok(Mode::Return(Some(lookup(env, *i)))),
            Code::Lam(lam) => Ok(Mode::Return(Some(V::Clo(self.arena.alloc(Closure { lam, env }))))),
            Code::Fail => self.raise(),
            Code::App(m, n) => {
                self.stack.push(Kont::Arg(n, env));
                self.ctx_depth += 1;
                Ok(Mode::Eval(m, env))
            }
            Code::Let(lam, n) => {
                self.stack.push(Kont::Bind(lam, env));
                self.ctx_depth += 1;
                Ok(Mode::Eval(n, env))
            }
            Code::Draw(d, args) => {
                if let Err(a) = self.tick() {
                    return Ok(Err(a));
                }
                if !self.load_params(args, env) {
                    return Ok(self.raise());
                }
                let spec = d.as_ref().map_err(Clone::clone)?;
                let Some(c) = self.source.next_choice(spec, &self.params) else {
                    return Ok(Err(Abort::Stuck));
                };
                let lp = (spec.log_pdf)(&self.params, c);
                if lp > f64::NEG_INFINITY {
                    self.log_w += lp;
                    Ok(Mode::Return(Some(V::Const(c))))
                } else {
                    self.log_w = f64::NEG_INFINITY;
                    self.raise()
                }
            }
            Code::Prim(g, args) => {
                if let Err(a) = self.tick() {
                    return Ok(Err(a));
                }
                if !self.load_params(args, env) {
                    return Ok(self.raise());
                }
                let r = g.as_ref().map_err(Clone::clone)?.apply(&self.params);
                Ok(Mode::Return(Some(V::Const(r))))
            }
            Code::If(v, m, n) => {
                if let Err(a) = self.tick() {
                    return Ok(Err(a));
                }
                match Self::resolve(v, env) {
                    Some(c) if c == TRUE => Ok(Mode::Eval(m, env)),
                    Some(c) if c == FALSE => Ok(Mode::Eval(n, env)),
                    _ => self.raise(),
                }
            }
            Code::Score(v) => {
                if let Err(a) = self.tick() {
                    return Ok(Err(a));
                }
                match Self::resolve(v, env) {
                    Some(c) if is_score_arg(c) => {
                        self.source.on_score(c.ln());
                        self.log_w += c.ln();
                        Ok(Mode::Return(Some(V::Const(TRUE))))
                    }
                    _ => self.raise(),
                }
            }
        };
        Ok(mode)
    }

    fn bind(&mut self, lam: &'c LamCode, env: Env<'c>, v: V<'c>) -> Result<Mode<'c>, Abort> {
        self.tick()?;
        Ok(Mode::Eval(&lam.body, Some(&*self.arena.alloc(Frame { val: v, next: env }))))
    }

    fn ret(&mut self, g: Option<V<'c>>) -> Result<Mode<'c>, Abort> {
        let k = self.stack.pop().expect("caller checks for an empty stack");
        self.ctx_depth -= 1;
        match (k, g) {
            (_, None) => Ok(Mode::Return(None)),
            (Kont::Arg(_, _), Some(V::Const(_))) => self.tick().and_then(|()| self.raise()),
            (Kont::Arg(n, env), Some(V::Clo(clo))) => {
                self.stack.push(Kont::Apply(clo));
                self.ctx_depth += 1;
                Ok(Mode::Eval(n, env))
            }
            (Kont::Apply(clo), Some(v)) => self.bind(clo.lam, clo.env, v),
            (Kont::Bind(lam, env), Some(v)) => self.bind(lam, env, v),
        }
    }
}

/// The closed value denoted by `v`.
fn read_back(v: &V<'_>) -> Value {
    match v {
        V::Const(c) => Value::Const(*c),
        V::Clo(clo) => {
            let Term::Val(Value::Lam(x, body)) = &*clo.lam.node else { unreachable!("λ-code keeps its λ-node") };
            let mut body = body.clone();
            for (y, i) in &clo.lam.captures {
                body = subst(&body, y, &read_back(&lookup(clo.env, *i)));
            }
            Value::Lam(x.clone(), body)
        }
    }
}

impl<'r> Evaluator<'r> {
    /// Environment-based run with the same steps, results and weights as the
    /// small-step machine.
    pub(crate) fn env_step_with<S: ChoiceSource>(&self, term: &Arc<Term>, source: S) -> Result<(BigRun, S), EvalError> {
        let Some(code) = compiled(term, self.registry) else {
            Self::check_closed(term)?;
            unreachable!("only open terms fail to compile");
        };
        let arena = Bump::new();
        let mut run = Run {
            ev: self,
            arena: &arena,
            source,
            stack: Vec::new(),
            ctx_depth: 0,
            steps: 0,
            log_w: 0.0,
            params: Vec::new(),
        };
        let mut mode = Mode::Eval(&code, None);
        let result = loop {
            let next = match mode {
                Mode::Eval(t, env) => run.eval(t, env)?,
                Mode::Return(g) if run.stack.is_empty() => break Ok(g),
                Mode::Return(g) => run.ret(g),
            };
            match next {
                Ok(m) => mode = m,
                Err(Abort::Stuck) => break Err(Status::TraceMismatch),
                Err(Abort::Fuel) => break Err(Status::FuelExhausted),
            }
        };
        let result = result.map(|g| {
            let g = match g {
                Some(v) => GeneralizedValue::Val(read_back(&v)),
                None => GeneralizedValue::Fail,
            };
            (g, run.log_w)
        });
        Ok((BigRun { result, steps: run.steps }, run.source))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::Registry;
    use crate::eval::Replay;
    use crate::syntax::parse_term;

    fn both(src: &str, trace: &[f64], fuel: u64) {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg).with_fuel(fuel);
        let m = Arc::new(parse_term(src).unwrap());
        let (a, ra) = ev.big_step_with(&m, Replay::new(trace)).unwrap();
        let (b, rb) = ev.env_step_with(&m, Replay::new(trace)).unwrap();
        assert_eq!(a.steps, b.steps, "{src}");
        assert_eq!(ra.pos, rb.pos, "{src}");
        match (a.result, b.result) {
            (Ok((g1, w1)), Ok((g2, w2))) => {
                assert_eq!(g1, g2, "{src}");
                assert_eq!(w1.to_bits(), w2.to_bits(), "{src}");
            }
            (Err(s1), Err(s2)) => assert_eq!(s1, s2, "{src}"),
            (x, y) => panic!("{src}: {:?} vs {:?}", x.map(|p| p.0), y.map(|p| p.0)),
        }
    }

    #[test]
    fn agrees_with_substitution() {
        both("((lambda x ((lambda y (prim + x y)) (score 0.25))) (draw gaussian 1.0 4.0))", &[0.3], 1000);
        both("((lambda f (lambda z (f z))) (lambda x x))", &[], 1000);
        both("((lambda x ((lambda x (lambda y x)) 2.0)) 1.0)", &[], 1000);
        both("((lambda x (x x)) (lambda x (x x)))", &[], 77);
        both("((lambda f (prim + f 1.0)) (lambda x x))", &[], 1000);
        both("((lambda b (if b 3.0 fail)) (draw rnd))", &[0.5], 1000);
        both("(3.0 ((lambda x x) 4.0))", &[], 1000);
        both("((lambda x x) (draw rnd))", &[2.0], 1000);
        both("(draw rnd)", &[], 1000);
    }
}
