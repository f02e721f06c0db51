//! Built-in semantics property suite run by `tracelam check`.
//!
//! Each property is checked on generated closed terms and traces and
//! reported with its first counterexample.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ast::{decompose, Decomposition, Term};
use crate::builtins::Registry;
use crate::eval::{EvalError, Evaluator, RunOutcome};
use crate::gen::{random_term, random_trace, GenConfig};

/// Step budget for generated terms, small enough that divergent ones are cheap.
pub const CHECK_FUEL: u64 = 20_000;

/// Outcome of checking a property on one case.
#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Pass,
    /// The case is outside the property's hypotheses (e.g. fuel ran out).
    Skip,
    Fail(String),
}

impl From<Result<(), String>> for Verdict {
    fn from(r: Result<(), String>) -> Self {
        match r {
            Ok(()) => Verdict::Pass,
            Err(e) => Verdict::Fail(e),
        }
    }
}

/// Relative closeness of two log-weights: equal (including both `-inf`), or
/// linear weights within `rel` of each other.
pub fn weights_close(log_a: f64, log_b: f64, rel: f64) -> bool {
    if log_a == log_b {
        return true;
    }
    if !log_a.is_finite() || !log_b.is_finite() {
        return false;
    }
    (log_a - log_b).exp_m1().abs() <= rel
}

fn describe(o: &RunOutcome) -> String {
    format!("{:?} {} w={} steps={}", o.status, o.result.to_term(), o.weight.ln(), o.steps)
}

/// Big-step and small-step runs of `term` on `trace` agree on result and
/// status, with weights within relative `1e-12`.
pub fn equivalence(ev: &Evaluator, term: &Arc<Term>, trace: &[f64]) -> Result<Verdict, EvalError> {
    let big = ev.eval_big(term, trace)?;
    let small = ev.run_small_step(term, trace)?;
    let ok = big.status == small.status
        && big.result == small.result
        && weights_close(big.weight.ln(), small.weight.ln(), 1e-12);
    Ok(if ok { Verdict::Pass } else { Verdict::Fail(format!("big: {}; small: {}", describe(&big), describe(&small))) })
}

/// `peval(peval(M, s), t) = peval(M, s @ t)`, skipped when fuel ran out.
pub fn peval_law(ev: &Evaluator, term: &Arc<Term>, s: &[f64], t: &[f64]) -> Result<Verdict, EvalError> {
    let first = ev.peval(term, s)?;
    let whole = ev.peval(term, &[s, t].concat())?;
    if first.fuel_exhausted || whole.fuel_exhausted {
        return Ok(Verdict::Skip);
    }
    let second = ev.peval(&first.term, t)?;
    if second.fuel_exhausted {
        return Ok(Verdict::Skip);
    }
    Ok(if second.term == whole.term {
        Verdict::Pass
    } else {
        Verdict::Fail(format!("stepwise: {}; at once: {}", second.term, whole.term))
    })
}

/// Plugging the redex of a decomposition back into its context gives the term.
pub fn decompose_round_trip(term: &Arc<Term>) -> Result<Verdict, EvalError> {
    Ok(match decompose(term).map_err(EvalError::from)? {
        Decomposition::Value(g) => {
            (g.to_term() == **term).then_some(()).ok_or_else(|| format!("value {g:?} is not the term")).into()
        }
        Decomposition::Redex(ctx, redex) => {
            let plugged = ctx.plug(redex.term.clone());
            (plugged == *term).then_some(()).ok_or_else(|| format!("plugged back: {plugged}")).into()
        }
    })
}

/// The trace density used by inference agrees with the small-step machine.
pub fn density_matches_machine(ev: &Evaluator, term: &Arc<Term>, trace: &[f64]) -> Result<Verdict, EvalError> {
    let d = ev.trace_density(term, trace)?;
    let m = ev.run_small_step(term, trace)?;
    let ok = d.status == m.status && d.result == m.result && weights_close(d.weight.ln(), m.weight.ln(), 1e-12);
    Ok(if ok {
        Verdict::Pass
    } else {
        Verdict::Fail(format!("density: {:?} {:?}; machine: {}", d.status, d.weight, describe(&m)))
    })
}

/// Two forward runs from equally seeded generators are identical.
pub fn forward_determinism(ev: &Evaluator, term: &Arc<Term>, seed: u64) -> Result<Verdict, EvalError> {
    let a = ev.forward_sample(term, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let b = ev.forward_sample(term, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let same = a.trace.bit_eq(&b.trace)
        && a.outcome.result == b.outcome.result
        && a.outcome.weight.ln().to_bits() == b.outcome.weight.ln().to_bits();
    Ok(if same { Verdict::Pass } else { Verdict::Fail(format!("traces {} and {}", a.trace, b.trace)) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyReport {
    pub name: &'static str,
    pub passed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub counterexample: Option<String>,
}

impl PropertyReport {
    fn new(name: &'static str) -> Self {
        PropertyReport { name, passed: 0, skipped: 0, failed: 0, counterexample: None }
    }

    pub fn ok(&self) -> bool {
        self.failed == 0
    }

    fn record(&mut self, v: Result<Verdict, EvalError>, case: impl FnOnce() -> String) {
        match v {
            Ok(Verdict::Pass) => self.passed += 1,
            Ok(Verdict::Skip) => self.skipped += 1,
            Ok(Verdict::Fail(why)) => {
                self.failed += 1;
                self.counterexample.get_or_insert_with(|| format!("{}: {why}", case()));
            }
            Err(e) => {
                self.failed += 1;
                self.counterexample.get_or_insert_with(|| format!("{}: {e}", case()));
            }
        }
    }
}

impl fmt::Display for PropertyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.ok() { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} ({} passed, {} skipped, {} failed)", self.name, self.passed, self.skipped, self.failed)?;
        if let Some(c) = &self.counterexample {
            write!(f, "\n     counterexample: {c}")?;
        }
        Ok(())
    }
}

/// Runs every property on `cases` generated cases.
pub fn run_suite(cases: usize, seed: u64) -> Vec<PropertyReport> {
    let reg = Registry::standard();
    let ev = Evaluator::new(&reg).with_fuel(CHECK_FUEL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = [
        PropertyReport::new("big-step and small-step agree"),
        PropertyReport::new("partial evaluation composes"),
        PropertyReport::new("decomposition round-trips"),
        PropertyReport::new("trace density matches the machine"),
        PropertyReport::new("forward runs are deterministic"),
    ];
    for _ in 0..cases {
        let term = Arc::new(random_term(&mut rng, GenConfig::default()));
        let trace = random_trace(&ev, &term, &mut rng);
        let show = || format!("M = {term}, s = {trace:?}");
        reports[0].record(equivalence(&ev, &term, &trace), show);
        let cut = rng.random_range(0..=trace.len());
        let (s, t) = trace.split_at(cut);
        reports[1].record(peval_law(&ev, &term, s, t), || format!("M = {term}, s = {s:?}, t = {t:?}"));
        reports[2].record(decompose_round_trip(&term), show);
        reports[3].record(density_matches_machine(&ev, &term, &trace), show);
        reports[4].record(forward_determinism(&ev, &term, rng.random()), show);
    }
    reports.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in run_suite(300, 11) {
            assert!(r.ok(), "{r}");
            assert!(r.passed > 200, "{r}");
        }
    }

    #[test]
    fn weight_closeness() {
        assert!(weights_close(f64::NEG_INFINITY, f64::NEG_INFINITY, 1e-12));
        assert!(weights_close(-1.0, -1.0 + 1e-13, 1e-12));
        assert!(!weights_close(-1.0, -1.0 + 1e-11, 1e-12));
        assert!(!weights_close(-1.0, f64::NEG_INFINITY, 1e-12));
    }

    #[test]
    fn a_counterexample_is_reported() {
        let mut r = PropertyReport::new("p");
        r.record(Ok(Verdict::Fail("bad".into())), || "case".into());
        assert!(!r.ok());
        assert!(r.to_string().contains("counterexample: case: bad"));
    }
}
