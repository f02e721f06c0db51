//! Trace densities and forward sampling.
//!
//! `P_M(s)` is the weight of the completed run of `M` on `s` (0 if the run
//! does not complete), `O_M(s)` its result, and `P^V_M(s)` the weight
//! restricted to runs that end in a value.

use std::sync::Arc;

use rand::RngCore;

use super::{ChoiceSource, EvalError, Evaluator, Replay, RunOutcome, Status, Trace, Weight};
use crate::ast::{GeneralizedValue, Term};
use crate::builtins::DistSpec;

/// `(P_M(s), O_M(s))` together with the status of the underlying run.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceDensity {
    pub weight: Weight,
    pub result: GeneralizedValue,
    pub status: Status,
}

impl TraceDensity {
    /// `P^V_M(s)`: the weight if the result is a value, 0 otherwise.
    pub fn value_weight(&self) -> Weight {
        if self.result.is_value() {
            self.weight
        } else {
            Weight::ZERO
        }
    }
}

/// A forward run with fresh draws.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardRun {
    /// The choices drawn, in order.
    pub trace: Trace,
    pub outcome: RunOutcome,
    /// Log of the product of the score factors met along the run.
    pub score_log_weight: f64,
}

/// Replays a prefix, then samples fresh choices.
///
/// `tail_score` holds the log product of the score factors met after the
/// last prefix element was consumed (all of them for an empty prefix).
struct Extend<'a> {
    prefix: &'a [f64],
    pos: usize,
    rng: &'a mut dyn RngCore,
    drawn: Vec<f64>,
    tail_score: f64,
    all_scores: f64,
    fresh_log_pdf: f64,
}

impl ChoiceSource for Extend<'_> {
    fn next_choice(&mut self, dist: &DistSpec, params: &[f64]) -> Option<f64> {
        if let Some(&c) = self.prefix.get(self.pos) {
            self.pos += 1;
            self.tail_score = 0.0;
            return Some(c);
        }
        let c = (dist.sample)(params, self.rng).unwrap_or(f64::NAN);
        self.fresh_log_pdf += (dist.log_pdf)(params, c);
        self.drawn.push(c);
        Some(c)
    }

    fn on_score(&mut self, log_c: f64) {
        self.tail_score += log_c;
        self.all_scores += log_c;
    }
}

/// Replays a trace, accumulating the weight of everything after element `k`.
struct Watermark<'a> {
    trace: &'a [f64],
    k: usize,
    pos: usize,
    tail: f64,
}

impl ChoiceSource for Watermark<'_> {
    fn next_choice(&mut self, dist: &DistSpec, params: &[f64]) -> Option<f64> {
        let c = *self.trace.get(self.pos)?;
        self.pos += 1;
        if self.pos <= self.k {
            self.tail = 0.0;
        } else {
            self.tail += (dist.log_pdf)(params, c);
        }
        Some(c)
    }

    fn on_score(&mut self, log_c: f64) {
        self.tail += log_c;
    }
}

/// Result of running a term on a perturbed prefix, continued with fresh draws.
#[derive(Clone, Debug)]
pub(crate) struct Extension {
    /// Number of prefix elements consumed.
    pub consumed: usize,
    /// Fresh choices drawn once the prefix ran out.
    pub fresh: Vec<f64>,
    /// Result and log-weight of the run; the run is a complete run on the
    /// consumed prefix followed by the fresh choices.
    pub result: Result<(GeneralizedValue, f64), Status>,
    /// Log product of score factors met after the last consumed prefix element.
    pub tail_score: f64,
    /// Log density of the fresh choices under their distributions.
    pub fresh_log_pdf: f64,
}

/// `log P^V_N(t_{k+1..})` for `N = peval(M, t_{1..k})`, computed in one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct TailDensity {
    pub log: f64,
    pub fuel_exhausted: bool,
}

impl<'r> Evaluator<'r> {
    /// `(P_M(s), O_M(s))`; `(0, fail)` whenever the run does not complete.
    pub fn trace_density(&self, term: &Arc<Term>, trace: &[f64]) -> Result<TraceDensity, EvalError> {
        let (run, replay) = self.env_step_with(term, Replay::new(trace))?;
        Ok(match run.result {
            Ok((result, w)) if replay.exhausted() => {
                TraceDensity { weight: Weight::from_log(w), result, status: Status::Completed }
            }
            Ok(_) => {
                TraceDensity { weight: Weight::ZERO, result: GeneralizedValue::Fail, status: Status::TraceMismatch }
            }
            Err(status) => TraceDensity { weight: Weight::ZERO, result: GeneralizedValue::Fail, status },
        })
    }

    /// Runs `term`, drawing every choice fresh from `rng`.
    pub fn forward_sample(&self, term: &Arc<Term>, rng: &mut dyn RngCore) -> Result<ForwardRun, EvalError> {
        let source = Extend {
            prefix: &[],
            pos: 0,
            rng,
            drawn: Vec::new(),
            tail_score: 0.0,
            all_scores: 0.0,
            fresh_log_pdf: 0.0,
        };
        let (run, source) = self.env_step_with(term, source)?;
        let outcome = match run.result {
            Ok((g, w)) => RunOutcome::completed(g, Weight::from_log(w), run.steps),
            Err(status) => RunOutcome::aborted(status, run.steps),
        };
        Ok(ForwardRun { trace: Trace::new(source.drawn), outcome, score_log_weight: source.all_scores })
    }

    /// Runs `term` on `prefix`. If the prefix runs out before the term halts, the
    /// run continues with fresh draws from `rng`.
    pub(crate) fn extend(
        &self,
        term: &Arc<Term>,
        prefix: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<Extension, EvalError> {
        let source =
            Extend { prefix, pos: 0, rng, drawn: Vec::new(), tail_score: 0.0, all_scores: 0.0, fresh_log_pdf: 0.0 };
        let (run, source) = self.env_step_with(term, source)?;
        Ok(Extension {
            consumed: source.pos,
            fresh: source.drawn,
            result: run.result,
            tail_score: source.tail_score,
            fresh_log_pdf: source.fresh_log_pdf,
        })
    }

    /// `log P^V_{peval(M, t_{1..k})}(t_{k+1..})`.
    ///
    /// The run of `M` on `t` passes through `peval(M, t_{1..k})` right after
    /// consuming `t_k`, so the tail weight is everything accumulated after that
    /// point: the densities of `t_{k+1..}` and the score factors met on the way.
    pub(crate) fn tail_value_density(
        &self,
        term: &Arc<Term>,
        trace: &[f64],
        k: usize,
    ) -> Result<TailDensity, EvalError> {
        let (run, source) = self.env_step_with(term, Watermark { trace, k, pos: 0, tail: 0.0 })?;
        let log = match run.result {
            Ok((GeneralizedValue::Val(_), _)) if source.pos == trace.len() => source.tail,
            _ => f64::NEG_INFINITY,
        };
        let fuel_exhausted = matches!(run.result, Err(Status::FuelExhausted));
        Ok(TailDensity { log, fuel_exhausted })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Value;
    use crate::builtins::Registry;
    use crate::syntax::parse_term;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn term(src: &str) -> Arc<Term> {
        Arc::new(parse_term(src).unwrap())
    }

    #[test]
    fn density_of_values_and_failures() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let d = ev.trace_density(&term("5.0"), &[]).unwrap();
        assert_eq!((d.weight, d.result), (Weight::ONE, GeneralizedValue::Val(Value::Const(5.0))));
        let d = ev.trace_density(&term("(draw rnd)"), &[2.0]).unwrap();
        assert!(d.weight.is_zero());
        assert_eq!(d.result, GeneralizedValue::Fail);
        let d = ev.trace_density(&term("fail"), &[]).unwrap();
        assert_eq!(d.weight, Weight::ONE);
        assert!(d.value_weight().is_zero());
    }

    #[test]
    fn forward_weight_is_pdfs_times_scores() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let m = term("((lambda x ((lambda y (prim + x y)) (score 0.25))) (draw gaussian 1.0 4.0))");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let run = ev.forward_sample(&m, &mut rng).unwrap();
        assert_eq!(run.trace.len(), 1);
        let expected = crate::builtins::gaussian_log_pdf(&[1.0, 4.0], run.trace[0]) + 0.25f64.ln();
        assert!((run.outcome.weight.ln() - expected).abs() < 1e-12);
        assert_eq!(run.score_log_weight, 0.25f64.ln());
        let replay = ev.trace_density(&m, &run.trace).unwrap();
        assert_eq!(replay.weight, run.outcome.weight);
    }

    #[test]
    fn tail_density_skips_scores_before_the_watermark() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let m = term("((lambda a ((lambda x ((lambda b x) (score 0.5))) (draw rnd))) (score 0.2))");
        let t = [0.4];
        let at0 = ev.tail_value_density(&m, &t, 0).unwrap().log;
        let at1 = ev.tail_value_density(&m, &t, 1).unwrap().log;
        assert!((at0 - (0.2f64.ln() + 0.5f64.ln())).abs() < 1e-15);
        assert_eq!(at1, 0.5f64.ln());
        assert_eq!(ev.tail_value_density(&m, &[0.4, 0.1], 1).unwrap().log, f64::NEG_INFINITY);
    }
}
