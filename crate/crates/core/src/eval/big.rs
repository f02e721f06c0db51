//! Big-step evaluation `M ⇓^s_w G`, run iteratively with an explicit
//! continuation stack.
//!
//! Each pending application keeps the weights of its finished premises so the
//! conclusion weight is formed as `w1 · w2 · w3`, as in the rules. Steps are
//! counted at the same points the small-step machine counts them (one per
//! redex contraction, plus one when a `fail` escapes a proper context), so
//! both evaluators exhaust a given fuel budget on the same inputs.

use std::sync::Arc;

use super::{ChoiceSource, EvalError, Evaluator, Replay, RunOutcome, Status, Weight};
use crate::ast::{
    is_score_arg, subst_closed, ClosedLams, GeneralizedValue, Name, OpenTermError, Term, Value, FALSE, TRUE,
};

enum Kont {
    /// Evaluating `M` in `M N`.
    Arg(Arc<Term>),
    /// Evaluating `N` in `(λx.P) N`; holds `w1`.
    Apply { param: Name, body: Arc<Term>, w1: f64 },
    /// Evaluating `P{V/x}`; holds `w1 · w2`.
    Combine { w12: f64 },
}

enum Mode {
    Eval(Arc<Term>),
    Return(GeneralizedValue, f64),
}

/// Why a run stopped before producing a derivation.
enum Abort {
    Stuck,
    Fuel,
}

struct Run<'e, 'r, S: ChoiceSource> {
    ev: &'e Evaluator<'r>,
    source: S,
    stack: Vec<Kont>,
    /// Number of `Arg`/`Apply` frames, i.e. the depth of the evaluation context.
    ctx_depth: usize,
    steps: u64,
    closed: ClosedLams,
}

impl<S: ChoiceSource> Run<'_, '_, S> {
    fn tick(&mut self) -> Result<(), Abort> {
        if self.steps >= self.ev.fuel {
            return Err(Abort::Fuel);
        }
        self.steps += 1;
        Ok(())
    }

    /// A `fail` produced in the current context; escaping a proper context costs one step.
    fn raise(&mut self, log_w: f64) -> Result<Mode, Abort> {
        if self.ctx_depth > 0 {
            self.tick()?;
        }
        Ok(Mode::Return(GeneralizedValue::Fail, log_w))
    }

    fn eval(&mut self, term: Arc<Term>) -> Result<Result<Mode, Abort>, EvalError> {
        let reg = self.ev.registry;
        let mode = match &*term {
            Term::Val(Value::Var(x)) => return Err(OpenTermError(x.clone()).into()),
            Term::Val(v) => Ok(Mode::Return(GeneralizedValue::Val(v.clone()), 0.0)),
            Term::Fail => self.raise(0.0),
            Term::App(m, n) => {
                self.stack.push(Kont::Arg(n.clone()));
                self.ctx_depth += 1;
                Ok(Mode::Eval(m.clone()))
            }
            Term::Draw(d, args) => {
                if let Err(a) = self.tick() {
                    return Ok(Err(a));
                }
                if args.iter().any(Value::is_lam) {
                    return Ok(self.raise(0.0));
                }
                let params = consts(args)?;
                let spec = reg.dist_checked(d, &params)?;
                let Some(c) = self.source.next_choice(spec, &params) else {
                    return Ok(Err(Abort::Stuck));
                };
                let lp = (spec.log_pdf)(&params, c);
                if lp > f64::NEG_INFINITY {
                    Ok(Mode::Return(GeneralizedValue::Val(Value::Const(c)), lp))
                } else {
                    self.raise(f64::NEG_INFINITY)
                }
            }
            Term::Prim(g, args) => {
                if let Err(a) = self.tick() {
                    return Ok(Err(a));
                }
                if args.iter().any(Value::is_lam) {
                    return Ok(self.raise(0.0));
                }
                let r = reg.apply_prim(g, &consts(args)?)?;
                Ok(Mode::Return(GeneralizedValue::Val(Value::Const(r)), 0.0))
            }
            Term::If(v, m, n) => {
                if let Err(a) = self.tick() {
                    return Ok(Err(a));
                }
                match v {
                    Value::Var(x) => return Err(OpenTermError(x.clone()).into()),
                    Value::Const(c) if *c == TRUE => Ok(Mode::Eval(m.clone())),
                    Value::Const(c) if *c == FALSE => Ok(Mode::Eval(n.clone())),
                    _ => self.raise(0.0),
                }
            }
            Term::Score(v) => {
                if let Err(a) = self.tick() {
                    return Ok(Err(a));
                }
                match v {
                    Value::Var(x) => return Err(OpenTermError(x.clone()).into()),
                    Value::Const(c) if is_score_arg(*c) => {
                        self.source.on_score(c.ln());
                        Ok(Mode::Return(GeneralizedValue::Val(Value::Const(TRUE)), c.ln()))
                    }
                    _ => self.raise(0.0),
                }
            }
        };
        Ok(mode)
    }

    fn ret(&mut self, g: GeneralizedValue, log_w: f64) -> Result<Result<Mode, Abort>, EvalError> {
        let k = self.stack.pop().expect("caller checks for an empty stack");
        let mode = match k {
            Kont::Arg(n) => {
                self.ctx_depth -= 1;
                match g {
                    // Eval Appl Raise1
                    GeneralizedValue::Fail => Ok(Mode::Return(GeneralizedValue::Fail, log_w)),
                    // Eval Appl Raise2: c N is an erroneous redex.
                    GeneralizedValue::Val(Value::Const(_)) => self.tick().and_then(|()| self.raise(log_w)),
                    GeneralizedValue::Val(Value::Lam(param, body)) => {
                        self.stack.push(Kont::Apply { param, body, w1: log_w });
                        self.ctx_depth += 1;
                        Ok(Mode::Eval(n))
                    }
                    GeneralizedValue::Val(Value::Var(x)) => return Err(OpenTermError(x).into()),
                }
            }
            Kont::Apply { param, body, w1 } => {
                self.ctx_depth -= 1;
                match g {
                    // Eval Appl Raise3
                    GeneralizedValue::Fail => Ok(Mode::Return(GeneralizedValue::Fail, w1 + log_w)),
                    GeneralizedValue::Val(v) => self.tick().map(|()| {
                        self.stack.push(Kont::Combine { w12: w1 + log_w });
                        Mode::Eval(subst_closed(&body, &param, &v, &mut self.closed))
                    }),
                }
            }
            Kont::Combine { w12 } => Ok(Mode::Return(g, w12 + log_w)),
        };
        Ok(mode)
    }
}

fn consts(args: &[Value]) -> Result<Vec<f64>, EvalError> {
    args.iter()
        .map(|a| match a {
            Value::Const(c) => Ok(*c),
            Value::Var(x) => Err(OpenTermError(x.clone()).into()),
            Value::Lam(..) => unreachable!("lambda arguments are handled as erroneous redexes"),
        })
        .collect()
}

/// Outcome of a big-step run before the trace-exhaustion check.
pub(crate) struct BigRun {
    pub result: Result<(GeneralizedValue, f64), Status>,
    pub steps: u64,
}

impl<'r> Evaluator<'r> {
    pub(crate) fn big_step_with<S: ChoiceSource>(&self, term: &Arc<Term>, source: S) -> Result<(BigRun, S), EvalError> {
        Self::check_closed(term)?;
        let mut run =
            Run { ev: self, source, stack: Vec::new(), ctx_depth: 0, steps: 0, closed: ClosedLams::default() };
        let mut mode = Mode::Eval(term.clone());
        let result = loop {
            let next = match mode {
                Mode::Eval(t) => run.eval(t)?,
                Mode::Return(g, w) if run.stack.is_empty() => break Ok((g, w)),
                Mode::Return(g, w) => run.ret(g, w)?,
            };
            match next {
                Ok(m) => mode = m,
                Err(Abort::Stuck) => break Err(Status::TraceMismatch),
                Err(Abort::Fuel) => break Err(Status::FuelExhausted),
            }
        };
        Ok((BigRun { result, steps: run.steps }, run.source))
    }
}

impl<'r> Evaluator<'r> {
    /// Big-step evaluation against `trace`, which must be consumed exactly.
    pub fn eval_big(&self, term: &Arc<Term>, trace: &[f64]) -> Result<RunOutcome, EvalError> {
        let (run, replay) = self.big_step_with(term, Replay::new(trace))?;
        Ok(match run.result {
            Ok((g, w)) if replay.exhausted() => RunOutcome::completed(g, Weight::from_log(w), run.steps),
            Ok(_) => RunOutcome::aborted(Status::TraceMismatch, run.steps),
            Err(status) => RunOutcome::aborted(status, run.steps),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::Registry;
    use crate::syntax::parse_term;

    fn run(src: &str, trace: &[f64]) -> RunOutcome {
        let reg = Registry::standard();
        Evaluator::new(&reg).eval_big(&Arc::new(parse_term(src).unwrap()), trace).unwrap()
    }

    #[test]
    fn gaussian_draw_weight() {
        let out = run("(draw gaussian 0.0 1.0)", &[0.0]);
        assert_eq!(out.status, Status::Completed);
        assert_eq!(out.result, GeneralizedValue::Val(Value::Const(0.0)));
        let oracle = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((out.weight.value() - oracle).abs() < 1e-15);
    }

    #[test]
    fn score_weight() {
        let out = run("(score 0.3)", &[]);
        assert_eq!(out.result, GeneralizedValue::Val(Value::Const(1.0)));
        assert!((out.weight.value() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn constant_application_fails() {
        let out = run("(3.0 ((lambda x x) 4.0))", &[]);
        assert_eq!(out.status, Status::Completed);
        assert_eq!(out.result, GeneralizedValue::Fail);
        assert_eq!(out.weight, Weight::ONE);
    }

    #[test]
    fn raise_rules_keep_premise_weights() {
        // Raise3: the function's weight survives a failing argument.
        let out = run("((lambda x x) ((lambda y fail) (score 0.5)))", &[]);
        assert_eq!(out.result, GeneralizedValue::Fail);
        assert!((out.weight.value() - 0.5).abs() < 1e-15);
        // Random Fail sets the weight to zero.
        let out = run("((lambda x x) (draw rnd))", &[2.0]);
        assert_eq!(out.result, GeneralizedValue::Fail);
        assert!(out.weight.is_zero());
    }

    #[test]
    fn trace_must_be_consumed_exactly() {
        assert_eq!(run("(draw rnd)", &[]).status, Status::TraceMismatch);
        assert_eq!(run("(draw rnd)", &[0.1, 0.2]).status, Status::TraceMismatch);
        assert_eq!(run("5.0", &[]).status, Status::Completed);
    }

    #[test]
    fn fuel_is_counted_like_the_machine() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg).with_fuel(57);
        let omega = Arc::new(parse_term("((lambda x (x x)) (lambda x (x x)))").unwrap());
        let big = ev.eval_big(&omega, &[]).unwrap();
        let small = ev.run_small_step(&omega, &[]).unwrap();
        assert_eq!(big.status, Status::FuelExhausted);
        assert_eq!(big.steps, small.steps);
    }
}
