//! Small-step machine over `(M, w, s)` configurations.

use std::sync::Arc;

use serde::Serialize;

use super::{ChoiceSource, EvalError, Evaluator, MachineState, Replay, RunOutcome, Status, StepError, Trace, Weight};
use crate::ast::{
    decompose, decompose_unchecked, subst_closed, ClosedLams, Decomposition, EvalContext, Redex, RedexKind, Term, Value,
};
use crate::syntax::format_const;

/// Which reduction rule a machine step used.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub(crate) enum Rule {
    Pure,
    Score,
    Random,
    RandomFail,
}

pub(crate) enum Step {
    Next {
        term: Arc<Term>,
        log_factor: f64,
        rule: Rule,
    },
    /// A draw was reached but the choice source is exhausted.
    Stuck,
    Terminal,
}

/// Result of partial evaluation. `fuel_exhausted` marks a `fail` that came
/// from running out of steps rather than from trace misalignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Peval {
    pub term: Arc<Term>,
    pub fuel_exhausted: bool,
}

/// One line of the reduction log.
#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub term: String,
    pub weight: f64,
    pub log_weight: f64,
    pub remaining: Vec<f64>,
}

fn const_args(args: &[Value]) -> Vec<f64> {
    args.iter().map(|a| a.as_const().expect("redex classified as draw/prim has constant arguments")).collect()
}

impl<'r> Evaluator<'r> {
    /// Contracts a redex that reduces deterministically.
    fn contract(
        &self,
        ctx: &EvalContext,
        redex: &Redex,
        closed: &mut ClosedLams,
    ) -> Result<Option<Arc<Term>>, EvalError> {
        let reduced = match (redex.kind, &*redex.term) {
            (RedexKind::Prim, Term::Prim(g, args)) => {
                let r = self.registry.apply_prim(g, &const_args(args))?;
                Arc::new(Term::constant(r))
            }
            (RedexKind::Beta, Term::App(f, arg)) => match (&**f, &**arg) {
                (Term::Val(Value::Lam(x, body)), Term::Val(v)) => subst_closed(body, x, v, closed),
                _ => unreachable!("beta redex shape"),
            },
            (RedexKind::IfTrue, Term::If(_, m, _)) => m.clone(),
            (RedexKind::IfFalse, Term::If(_, _, n)) => n.clone(),
            (RedexKind::Erroneous(_), _) => Arc::new(Term::Fail),
            // E[fail] -> fail; the context is proper here.
            (RedexKind::Fail, _) => return Ok(Some(Arc::new(Term::Fail))),
            _ => return Ok(None),
        };
        Ok(Some(ctx.plug(reduced)))
    }

    /// One step of the machine, drawing choices from `source`.
    pub(crate) fn step_with(
        &self,
        term: &Arc<Term>,
        source: &mut dyn ChoiceSource,
        closed: &mut ClosedLams,
    ) -> Result<Step, EvalError> {
        let (ctx, redex) = match decompose_unchecked(term)? {
            Decomposition::Value(_) => return Ok(Step::Terminal),
            Decomposition::Redex(ctx, redex) => (ctx, redex),
        };
        match (redex.kind, &*redex.term) {
            (RedexKind::Draw, Term::Draw(d, args)) => {
                let params = const_args(args);
                let spec = self.registry.dist_checked(d, &params)?;
                let Some(c) = source.next_choice(spec, &params) else {
                    return Ok(Step::Stuck);
                };
                let lp = (spec.log_pdf)(&params, c);
                Ok(if lp > f64::NEG_INFINITY {
                    Step::Next { term: ctx.plug(Arc::new(Term::constant(c))), log_factor: lp, rule: Rule::Random }
                } else {
                    Step::Next {
                        term: ctx.plug(Arc::new(Term::Fail)),
                        log_factor: f64::NEG_INFINITY,
                        rule: Rule::RandomFail,
                    }
                })
            }
            (RedexKind::Score, Term::Score(v)) => {
                let c = v.as_const().expect("score redex has a constant argument");
                source.on_score(c.ln());
                Ok(Step::Next { term: ctx.plug(Arc::new(Term::constant(1.0))), log_factor: c.ln(), rule: Rule::Score })
            }
            _ => {
                let next = self.contract(&ctx, &redex, closed)?.expect("every non-random redex contracts");
                Ok(Step::Next { term: next, log_factor: 0.0, rule: Rule::Pure })
            }
        }
    }

    /// One deterministic reduction step; weight and trace are unchanged.
    pub fn det_step(&self, state: &MachineState) -> Result<MachineState, StepError> {
        let (ctx, redex) = match decompose(&state.term).map_err(EvalError::from)? {
            Decomposition::Value(_) => return Err(StepError::NoDetRedex),
            Decomposition::Redex(ctx, redex) => (ctx, redex),
        };
        match self.contract(&ctx, &redex, &mut ClosedLams::default())? {
            Some(term) => Ok(MachineState { term, weight: state.weight, remaining: state.remaining.clone() }),
            None => Err(StepError::NoDetRedex),
        }
    }

    /// One step of the sampling-based small-step relation.
    pub fn small_step(&self, state: &MachineState) -> Result<MachineState, StepError> {
        Self::check_closed(&state.term)?;
        let mut replay = Replay::new(&state.remaining);
        match self.step_with(&state.term, &mut replay, &mut ClosedLams::default())? {
            Step::Terminal => Err(StepError::Terminal),
            Step::Stuck => Err(StepError::Stuck),
            Step::Next { term, log_factor, rule } => {
                let weight = match rule {
                    Rule::RandomFail => Weight::ZERO,
                    _ => state.weight * Weight::from_log(log_factor),
                };
                Ok(MachineState { term, weight, remaining: Trace::from(&state.remaining[replay.pos..]) })
            }
        }
    }

    /// Iterates the machine from `(term, 1, trace)`.
    pub fn run_small_step(&self, term: &Arc<Term>, trace: &[f64]) -> Result<RunOutcome, EvalError> {
        self.run_small_step_observed(term, trace, |_| {})
    }

    /// As [`Evaluator::run_small_step`], reporting every configuration
    /// (including the initial one) to `observe`.
    pub fn run_small_step_observed(
        &self,
        term: &Arc<Term>,
        trace: &[f64],
        mut observe: impl FnMut(&StepRecord),
    ) -> Result<RunOutcome, EvalError> {
        Self::check_closed(term)?;
        let mut replay = Replay::new(trace);
        let mut closed = ClosedLams::default();
        let mut current = term.clone();
        let mut log_w = 0.0f64;
        let mut steps = 0u64;
        let mut record = |steps: u64, t: &Term, log_w: f64, rest: &[f64]| {
            observe(&StepRecord {
                step: steps,
                term: t.to_string(),
                weight: log_w.exp(),
                log_weight: log_w,
                remaining: rest.to_vec(),
            })
        };
        record(0, &current, log_w, trace);
        loop {
            if let Some(g) = current.as_generalized_value() {
                return Ok(if replay.exhausted() {
                    RunOutcome::completed(g, Weight::from_log(log_w), steps)
                } else {
                    RunOutcome::aborted(Status::TraceMismatch, steps)
                });
            }
            if steps >= self.fuel {
                return Ok(RunOutcome::aborted(Status::FuelExhausted, steps));
            }
            match self.step_with(&current, &mut replay, &mut closed)? {
                Step::Terminal => unreachable!("generalized values are handled above"),
                Step::Stuck => return Ok(RunOutcome::aborted(Status::TraceMismatch, steps)),
                Step::Next { term, log_factor, rule } => {
                    log_w = if rule == Rule::RandomFail { f64::NEG_INFINITY } else { log_w + log_factor };
                    current = term;
                    steps += 1;
                    record(steps, &current, log_w, &trace[replay.pos..]);
                }
            }
        }
    }

    /// Runs the machine until the step that consumes the last element of
    /// `trace` and returns the term reached; `fail` if that never happens.
    pub fn peval(&self, term: &Arc<Term>, trace: &[f64]) -> Result<Peval, EvalError> {
        if trace.is_empty() {
            return Ok(Peval { term: term.clone(), fuel_exhausted: false });
        }
        Self::check_closed(term)?;
        let fail = |fuel_exhausted| Peval { term: Arc::new(Term::Fail), fuel_exhausted };
        let mut replay = Replay::new(trace);
        let mut closed = ClosedLams::default();
        let mut current = term.clone();
        let mut steps = 0u64;
        loop {
            if steps >= self.fuel {
                return Ok(fail(true));
            }
            match self.step_with(&current, &mut replay, &mut closed)? {
                Step::Terminal | Step::Stuck => return Ok(fail(false)),
                Step::Next { term, rule, .. } => {
                    steps += 1;
                    if matches!(rule, Rule::Random | Rule::RandomFail) && replay.exhausted() {
                        return Ok(Peval { term, fuel_exhausted: false });
                    }
                    current = term;
                }
            }
        }
    }
}

impl StepRecord {
    /// Compact single-line rendering used by the CLI when JSON is not wanted.
    pub fn summary(&self) -> String {
        let rest: Vec<String> = self.remaining.iter().map(|c| format_const(*c)).collect();
        format!("{:>6}  w={:<12} s=[{}]  {}", self.step, self.weight, rest.join(" "), self.term)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::Registry;
    use crate::syntax::parse_term;

    fn term(src: &str) -> Arc<Term> {
        Arc::new(parse_term(src).unwrap())
    }

    fn state(src: &str, w: f64, s: &[f64]) -> MachineState {
        MachineState { term: term(src), weight: Weight::from_linear(w), remaining: Trace::from(s) }
    }

    #[test]
    fn det_step_beta() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let next = ev.det_step(&state("((lambda x x) 5.0)", 1.0, &[0.2])).unwrap();
        assert_eq!(*next.term, Term::constant(5.0));
        assert_eq!(next.weight, Weight::ONE);
        assert_eq!(&*next.remaining, &[0.2]);
    }

    #[test]
    fn det_step_if_in_context() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let next = ev.det_step(&state("((if 1.0 (lambda y y) fail) 2.0)", 1.0, &[])).unwrap();
        assert_eq!(next.term, term("((lambda y y) 2.0)"));
    }

    #[test]
    fn det_step_erroneous_to_fail() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let next = ev.det_step(&state("(3.0 4.0)", 1.0, &[])).unwrap();
        assert_eq!(*next.term, Term::Fail);
        let next = ev.det_step(&state("((lambda x x) (3.0 4.0))", 1.0, &[])).unwrap();
        assert_eq!(next.term, term("((lambda x x) fail)"));
        let next = ev.det_step(&next).unwrap();
        assert_eq!(*next.term, Term::Fail);
    }

    #[test]
    fn det_step_refuses_random_redexes() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        assert_eq!(ev.det_step(&state("(draw rnd)", 1.0, &[0.5])), Err(StepError::NoDetRedex));
        assert_eq!(ev.det_step(&state("(score 0.5)", 1.0, &[])), Err(StepError::NoDetRedex));
        assert_eq!(ev.det_step(&state("1.0", 1.0, &[])), Err(StepError::NoDetRedex));
    }

    #[test]
    fn small_step_random() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let next = ev.small_step(&state("(draw rnd)", 1.0, &[0.7])).unwrap();
        assert_eq!(*next.term, Term::constant(0.7));
        assert_eq!(next.weight.value(), 1.0);
        assert!(next.remaining.is_empty());
    }

    #[test]
    fn small_step_score() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let next = ev.small_step(&state("(score 0.5)", 1.0, &[])).unwrap();
        assert_eq!(*next.term, Term::constant(1.0));
        assert!((next.weight.value() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn small_step_random_fail() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let next = ev.small_step(&state("(draw rnd)", 1.0, &[1.5])).unwrap();
        assert_eq!(*next.term, Term::Fail);
        assert!(next.weight.is_zero());
        assert!(next.remaining.is_empty());
    }

    #[test]
    fn small_step_stuck_and_terminal() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        assert_eq!(ev.small_step(&state("(draw rnd)", 1.0, &[])), Err(StepError::Stuck));
        assert_eq!(ev.small_step(&state("fail", 1.0, &[])), Err(StepError::Terminal));
    }

    #[test]
    fn run_statuses() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let c5 = term("5.0");
        let out = ev.run_small_step(&c5, &[]).unwrap();
        assert_eq!(out.status, Status::Completed);
        assert_eq!(out.steps, 0);
        assert_eq!(ev.run_small_step(&c5, &[0.1]).unwrap().status, Status::TraceMismatch);
        assert_eq!(ev.run_small_step(&term("(draw rnd)"), &[]).unwrap().status, Status::TraceMismatch);
        let omega = term("((lambda x (x x)) (lambda x (x x)))");
        let out = ev.with_fuel(100).run_small_step(&omega, &[]).unwrap();
        assert_eq!(out.status, Status::FuelExhausted);
        assert_eq!(out.steps, 100);
    }

    #[test]
    fn observed_run_logs_every_configuration() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let mut log = Vec::new();
        let out = ev
            .run_small_step_observed(&term("((lambda x (score x)) (draw rnd))"), &[0.25], |r| log.push(r.clone()))
            .unwrap();
        assert_eq!(out.status, Status::Completed);
        assert_eq!(log.len() as u64, out.steps + 1);
        assert_eq!(log[0].remaining, vec![0.25]);
        assert!((log.last().unwrap().weight - 0.25).abs() < 1e-15);
    }

    #[test]
    fn peval_basics() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let m = term("((lambda x ((lambda y (prim + x y)) (draw rnd))) (draw rnd))");
        assert_eq!(ev.peval(&m, &[]).unwrap().term, m);
        // The first draw is consumed by the step that produces ((λx. …) 0.3).
        let p = ev.peval(&m, &[0.3]).unwrap();
        assert_eq!(p.term, term("((lambda x ((lambda y (prim + x y)) (draw rnd))) 0.3)"));
        // Too long a trace never aligns.
        assert_eq!(*ev.peval(&m, &[0.3, 0.2, 0.1]).unwrap().term, Term::Fail);
    }
}
