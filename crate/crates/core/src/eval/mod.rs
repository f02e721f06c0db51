//! Trace semantics: small-step machine, big-step evaluator, partial
//! evaluation, and the trace density / result functions built on them.
//!
//! Both evaluators run a closed term against a trace that must be consumed
//! exactly. Weights are carried in log-space.

mod big;
mod density;
mod env;
mod small;

use std::fmt;
use std::ops::{Deref, Mul};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::{GeneralizedValue, OpenTermError, Term};
use crate::builtins::{BuiltinError, DistSpec, Registry};

#[allow(unused_imports)]
pub(crate) use density::{Extension, TailDensity};
pub use density::{ForwardRun, TraceDensity};
pub use small::{Peval, StepRecord};

/// Default step budget for a single run.
pub const DEFAULT_FUEL: u64 = 1_000_000;

/// A finite sequence of random choices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Trace(Vec<f64>);

impl Trace {
    pub fn new(v: Vec<f64>) -> Self {
        Trace(v)
    }

    pub fn empty() -> Self {
        Trace(Vec::new())
    }

    /// `self @ other`.
    pub fn concat(&self, other: &[f64]) -> Trace {
        let mut v = self.0.clone();
        v.extend_from_slice(other);
        Trace(v)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn push(&mut self, c: f64) {
        self.0.push(c);
    }

    /// Bitwise equality, so traces containing NaN compare equal to themselves.
    pub fn bit_eq(&self, other: &[f64]) -> bool {
        self.0.len() == other.len() && self.0.iter().zip(other).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Deref for Trace {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Trace {
    fn from(v: Vec<f64>) -> Self {
        Trace(v)
    }
}

impl From<&[f64]> for Trace {
    fn from(v: &[f64]) -> Self {
        Trace(v.to_vec())
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("]")
    }
}

/// Nonnegative run weight, stored as its natural logarithm (`-inf` for 0).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Weight {
    log: f64,
}

impl Weight {
    pub const ONE: Weight = Weight { log: 0.0 };
    pub const ZERO: Weight = Weight { log: f64::NEG_INFINITY };

    pub fn from_log(log: f64) -> Self {
        Weight { log }
    }

    pub fn from_linear(w: f64) -> Self {
        Weight { log: w.ln() }
    }

    pub fn ln(self) -> f64 {
        self.log
    }

    pub fn value(self) -> f64 {
        self.log.exp()
    }

    pub fn is_zero(self) -> bool {
        self.log == f64::NEG_INFINITY
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Mul for Weight {
    type Output = Weight;
    fn mul(self, rhs: Weight) -> Weight {
        Weight { log: self.log + rhs.log }
    }
}

/// A configuration `(M, w, s)` of the small-step machine.
#[derive(Clone, Debug, PartialEq)]
pub struct MachineState {
    pub term: Arc<Term>,
    pub weight: Weight,
    pub remaining: Trace,
}

impl MachineState {
    pub fn initial(term: Arc<Term>, trace: Trace) -> Self {
        MachineState { term, weight: Weight::ONE, remaining: trace }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    /// The run reached a generalized value with the trace consumed exactly.
    Completed,
    /// The run halted with unused choices, or needed a choice the trace lacked.
    TraceMismatch,
    FuelExhausted,
}

/// Result of running a term against a trace. For any status other than
/// `Completed` the result is `fail` and the weight 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub result: GeneralizedValue,
    pub weight: Weight,
    pub status: Status,
    pub steps: u64,
}

impl RunOutcome {
    fn completed(result: GeneralizedValue, weight: Weight, steps: u64) -> Self {
        RunOutcome { result, weight, status: Status::Completed, steps }
    }

    fn aborted(status: Status, steps: u64) -> Self {
        RunOutcome { result: GeneralizedValue::Fail, weight: Weight::ZERO, status, steps }
    }

    pub fn is_completed(&self) -> bool {
        self.status == Status::Completed
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    OpenTerm(#[from] OpenTermError),
    #[error(transparent)]
    Builtin(#[from] BuiltinError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("no deterministic redex")]
    NoDetRedex,
    #[error("trace exhausted at a random draw")]
    Stuck,
    #[error("term is already a generalized value")]
    Terminal,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Where random choices come from during a run.
pub(crate) trait ChoiceSource {
    /// The next choice for a draw from `dist(params)`, or `None` if no more
    /// choices are available.
    fn next_choice(&mut self, dist: &DistSpec, params: &[f64]) -> Option<f64>;

    /// Called for every score step with the log of its factor.
    fn on_score(&mut self, _log_c: f64) {}
}

/// Replays a fixed trace.
pub(crate) struct Replay<'a> {
    pub trace: &'a [f64],
    pub pos: usize,
}

impl<'a> Replay<'a> {
    pub fn new(trace: &'a [f64]) -> Self {
        Replay { trace, pos: 0 }
    }

    pub fn exhausted(&self) -> bool {
        self.pos == self.trace.len()
    }
}

impl ChoiceSource for Replay<'_> {
    fn next_choice(&mut self, _: &DistSpec, _: &[f64]) -> Option<f64> {
        let c = self.trace.get(self.pos).copied()?;
        self.pos += 1;
        Some(c)
    }
}

/// Evaluator bound to a registry and a step budget.
#[derive(Clone, Copy, Debug)]
pub struct Evaluator<'r> {
    registry: &'r Registry,
    fuel: u64,
}

impl<'r> Evaluator<'r> {
    pub fn new(registry: &'r Registry) -> Self {
        Evaluator { registry, fuel: DEFAULT_FUEL }
    }

    pub fn with_fuel(mut self, fuel: u64) -> Self {
        self.fuel = fuel;
        self
    }

    pub fn fuel(&self) -> u64 {
        self.fuel
    }

    pub fn registry(&self) -> &'r Registry {
        self.registry
    }

    fn check_closed(term: &Term) -> Result<(), EvalError> {
        match term.first_free_var() {
            Some(x) => Err(OpenTermError(x).into()),
            None => Ok(()),
        }
    }
}
