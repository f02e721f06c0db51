//! Rejection sampling and plain forward sampling.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{InferError, Sample};
use crate::ast::{GeneralizedValue, Term};
use crate::eval::{EvalError, Evaluator, ForwardRun};

/// Re-runs the term from scratch until it produces a value.
///
/// A run that met score factors is kept with probability equal to their
/// product, which treats each `score(c)` as a coin with bias `c` that must
/// come up true.
pub struct RejectionSampler<'r> {
    ev: Evaluator<'r>,
    term: Arc<Term>,
    rng: ChaCha8Rng,
    samples: usize,
    max_retries: u64,
    emitted: usize,
    attempts: u64,
    done: bool,
}

/// Rejection sampler seeded with `seed`. Gives up with `RetryExhausted`
/// after `max_retries` consecutive rejected runs.
pub fn rejection_sample<'r>(
    ev: Evaluator<'r>,
    term: Arc<Term>,
    samples: usize,
    seed: u64,
    max_retries: u64,
) -> RejectionSampler<'r> {
    RejectionSampler::with_stream(ev, term, samples, seed, max_retries, 0)
}

impl<'r> RejectionSampler<'r> {
    pub fn with_stream(
        ev: Evaluator<'r>,
        term: Arc<Term>,
        samples: usize,
        seed: u64,
        max_retries: u64,
        stream: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RejectionSampler { ev, term, rng, samples, max_retries, emitted: 0, attempts: 0, done: false }
    }

    /// Total number of runs so far.
    pub fn attempts(&self) -> u64 {
        self.attempts
    }

    fn draw(&mut self) -> Result<Sample, InferError> {
        for _ in 0..self.max_retries {
            self.attempts += 1;
            let run = self.ev.forward_sample(&self.term, &mut self.rng)?;
            if !run.outcome.is_completed() || run.outcome.weight.is_zero() {
                continue;
            }
            let log_weight = run.outcome.weight.ln();
            let GeneralizedValue::Val(value) = run.outcome.result else {
                continue;
            };
            if run.score_log_weight < 0.0 && !(self.rng.random::<f64>() < run.score_log_weight.exp()) {
                continue;
            }
            let sample = Sample { index: self.emitted, value, trace: run.trace, log_weight, accepted: true };
            return Ok(sample);
        }
        Err(InferError::RetryExhausted { attempts: self.max_retries })
    }
}

impl Iterator for RejectionSampler<'_> {
    type Item = Result<Sample, InferError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done || self.emitted >= self.samples {
            return None;
        }
        let r = self.draw();
        match &r {
            Ok(_) => self.emitted += 1,
            Err(_) => self.done = true,
        }
        Some(r)
    }
}

/// Unconditioned forward runs, failures included.
pub struct ForwardSamples<'r> {
    ev: Evaluator<'r>,
    term: Arc<Term>,
    rng: ChaCha8Rng,
    remaining: usize,
}

pub fn forward_samples<'r>(ev: Evaluator<'r>, term: Arc<Term>, samples: usize, seed: u64) -> ForwardSamples<'r> {
    ForwardSamples::with_stream(ev, term, samples, seed, 0)
}

impl<'r> ForwardSamples<'r> {
    pub fn with_stream(ev: Evaluator<'r>, term: Arc<Term>, samples: usize, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        ForwardSamples { ev, term, rng, remaining: samples }
    }
}

impl Iterator for ForwardSamples<'_> {
    type Item = Result<ForwardRun, EvalError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.ev.forward_sample(&self.term, &mut self.rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::Value;
    use crate::builtins::Registry;
    use crate::syntax::parse_term;

    #[test]
    fn hopeless_model_exhausts_retries() {
        let reg = Registry::standard();
        let m = Arc::new(parse_term("fail").unwrap());
        let mut it = rejection_sample(Evaluator::new(&reg), m, 3, 1, 50);
        assert_eq!(it.next(), Some(Err(InferError::RetryExhausted { attempts: 50 })));
        assert_eq!(it.next(), None);
    }

    #[test]
    fn score_free_samples_are_kept() {
        let reg = Registry::standard();
        let m = Arc::new(parse_term("(draw rnd)").unwrap());
        let mut it = rejection_sample(Evaluator::new(&reg), m, 100, 9, 10);
        let n = it.by_ref().map(|s| s.unwrap()).filter(|s| matches!(s.value, Value::Const(_))).count();
        assert_eq!(n, 100);
        assert_eq!(it.attempts(), 100);
    }

    #[test]
    fn scores_thin_the_runs() {
        let reg = Registry::standard();
        let m = Arc::new(parse_term("((lambda u 7.0) (score 0.25))").unwrap());
        let mut it = rejection_sample(Evaluator::new(&reg), m, 2000, 3, 1000);
        assert_eq!(it.by_ref().count(), 2000);
        let rate = 2000.0 / it.attempts() as f64;
        // 4 binomial standard errors.
        assert!((rate - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / it.attempts() as f64).sqrt() * 2.0);
    }
}
