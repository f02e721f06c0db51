//! Trace Metropolis-Hastings.

use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{InferError, MHConfig, Sample};
use crate::ast::{GeneralizedValue, Term, Value};
use crate::builtins::gaussian_log_pdf;
use crate::eval::{EvalError, Evaluator, Status, Trace};

/// Current position of a chain: a trace with positive `P^V` weight.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub trace: Trace,
    /// `log P^V_M(trace)`.
    pub log_weight: f64,
    pub value: Value,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalKind {
    /// The perturbed prefix was consumed entirely, possibly followed by fresh draws.
    Extended,
    /// The run halted with a value before consuming the whole perturbed prefix.
    Truncated,
    /// The empty trace, proposed when neither case applies; always rejected.
    Sink,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub trace: Trace,
    pub kind: ProposalKind,
    /// `log q(s,t)`.
    pub log_fwd: f64,
    /// `log q(t,s)`.
    pub log_rev: f64,
    /// `log P^V_M(t)`.
    pub log_weight: f64,
    pub value: Option<Value>,
    /// Log density of `t` accumulated while sampling it: the Gaussian factors
    /// of the kept prefix, the densities of fresh draws and the score factors
    /// after the prefix. `None` for the sink.
    pub log_sampling_density: Option<f64>,
    /// Some run behind this proposal ran out of fuel.
    pub fuel_exhausted: bool,
}

impl Proposal {
    fn sink(fuel_exhausted: bool) -> Self {
        Proposal {
            trace: Trace::empty(),
            kind: ProposalKind::Sink,
            log_fwd: f64::NEG_INFINITY,
            log_rev: f64::NEG_INFINITY,
            log_weight: f64::NEG_INFINITY,
            value: None,
            log_sampling_density: None,
            fuel_exhausted,
        }
    }
}

/// Outcome of one MH step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub proposal: Proposal,
    pub alpha: f64,
    pub accepted: bool,
}

/// Counters for a chain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub steps: u64,
    pub accepted: u64,
    pub sink_proposals: u64,
    pub fuel_exhausted: u64,
}

impl Diagnostics {
    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }
}

/// Forward-samples `term` until a run ends in a value with positive weight.
///
/// Runs that met score factors are kept with probability equal to their
/// product, as in rejection sampling, so the chain starts from an exact
/// posterior draw.
pub fn init_state(
    ev: &Evaluator,
    term: &Arc<Term>,
    retries: u64,
    rng: &mut dyn RngCore,
) -> Result<ChainState, InferError> {
    for _ in 0..retries {
        let run = ev.forward_sample(term, rng)?;
        let (ok, log_weight) = (run.outcome.is_completed() && !run.outcome.weight.is_zero(), run.outcome.weight.ln());
        let GeneralizedValue::Val(value) = run.outcome.result else { continue };
        if !ok || (run.score_log_weight < 0.0 && !(rng.random::<f64>() < run.score_log_weight.exp())) {
            continue;
        }
        return Ok(ChainState { trace: run.trace, log_weight, value });
    }
    Err(InferError::InitFailure { attempts: retries })
}

fn gaussian_prefix(from: &[f64], to: &[f64], var: f64) -> f64 {
    from.iter().zip(to).map(|(&s, &t)| gaussian_log_pdf(&[s, var], t)).sum()
}

/// `log q(from, to)` and whether fuel ran out while computing it.
fn proposal_density_flagged(
    ev: &Evaluator,
    term: &Arc<Term>,
    from: &[f64],
    to: &[f64],
    sigma: f64,
) -> Result<(f64, bool), EvalError> {
    let k = from.len().min(to.len());
    let gauss = gaussian_prefix(&from[..k], &to[..k], sigma * sigma);
    let tail = ev.tail_value_density(term, to, k)?;
    Ok((gauss + tail.log, tail.fuel_exhausted))
}

/// `log q(from, to)`: the Gaussian densities of `to` around `from` on the
/// common prefix, times `P^V` of the partially evaluated term on the rest of
/// `to`. A run that exhausts its fuel contributes density 0.
pub fn proposal_density(
    ev: &Evaluator,
    term: &Arc<Term>,
    from: &[f64],
    to: &[f64],
    sigma: f64,
) -> Result<f64, EvalError> {
    proposal_density_flagged(ev, term, from, to, sigma).map(|(d, _)| d)
}

/// Draws a proposal from `current`.
///
/// Every choice is perturbed by `N(0, sigma^2)` noise and the term is run on
/// the perturbed trace. If the run consumes it entirely, it continues with
/// fresh draws; if it halts with a value earlier, the trace is cut to what was
/// consumed. Score factors met after the last perturbed choice are part of
/// the proposal density, so the candidate is kept with probability equal to
/// their product and replaced by the sink otherwise. Runs ending in `fail` or
/// out of fuel also propose the sink.
pub fn propose(
    ev: &Evaluator,
    term: &Arc<Term>,
    current: &[f64],
    sigma: f64,
    rng: &mut dyn RngCore,
) -> Result<Proposal, EvalError> {
    let perturbed: Vec<f64> = current
        .iter()
        .map(|&s| {
            let z: f64 = StandardNormal.sample(rng);
            s + sigma * z
        })
        .collect();
    let ext = ev.extend(term, &perturbed, rng)?;
    let (value, log_weight) = match ext.result {
        Ok((GeneralizedValue::Val(v), w)) => (v, w),
        Err(Status::FuelExhausted) => return Ok(Proposal::sink(true)),
        _ => return Ok(Proposal::sink(false)),
    };
    if ext.tail_score < 0.0 {
        let u: f64 = rng.random();
        if !(u < ext.tail_score.exp()) {
            return Ok(Proposal::sink(false));
        }
    }
    let k = ext.consumed;
    let kind = if k < perturbed.len() { ProposalKind::Truncated } else { ProposalKind::Extended };
    let sampling = gaussian_prefix(&current[..k], &perturbed[..k], sigma * sigma) + ext.fresh_log_pdf + ext.tail_score;
    let mut t = perturbed;
    t.truncate(k);
    t.extend_from_slice(&ext.fresh);

    // The extension run consumed exactly `t`, so its weight is `P^V(t)`.
    let (log_fwd, fuel_fwd) = proposal_density_flagged(ev, term, current, &t, sigma)?;
    let (log_rev, fuel_rev) = proposal_density_flagged(ev, term, &t, current, sigma)?;
    Ok(Proposal {
        log_weight,
        value: Some(value),
        trace: Trace::new(t),
        kind,
        log_fwd,
        log_rev,
        log_sampling_density: Some(sampling),
        fuel_exhausted: fuel_fwd || fuel_rev,
    })
}

/// Hastings acceptance probability
/// `min(1, P^V(t) q(t,s) / (P^V(s) q(s,t)))`, with `α = 0` when
/// `P^V(t) = 0` (in particular for the sink) and `α = 1` when
/// `P^V(s) q(s,t) = 0`.
pub fn acceptance(current: &ChainState, p: &Proposal) -> f64 {
    if p.kind == ProposalKind::Sink || p.log_weight == f64::NEG_INFINITY {
        return 0.0;
    }
    let denom = current.log_weight + p.log_fwd;
    if denom == f64::NEG_INFINITY {
        return 1.0;
    }
    let log_ratio = (p.log_weight + p.log_rev) - denom;
    if log_ratio >= 0.0 {
        1.0
    } else if log_ratio.is_nan() {
        0.0
    } else {
        log_ratio.exp()
    }
}

/// A Metropolis-Hastings chain. Iterating yields the post-burn-in,
/// thinned states.
pub struct Chain<'r> {
    ev: Evaluator<'r>,
    term: Arc<Term>,
    cfg: MHConfig,
    rng: ChaCha8Rng,
    state: ChainState,
    last_accepted: bool,
    diag: Diagnostics,
    emitted: usize,
}

impl<'r> Chain<'r> {
    /// Starts a chain with the RNG seeded from `cfg.seed`.
    pub fn new(ev: Evaluator<'r>, term: Arc<Term>, cfg: MHConfig) -> Result<Self, InferError> {
        Self::with_stream(ev, term, cfg, 0)
    }

    /// Starts a chain on an independent RNG stream; chains with the same seed
    /// and different streams do not share random numbers.
    pub fn with_stream(ev: Evaluator<'r>, term: Arc<Term>, cfg: MHConfig, stream: u64) -> Result<Self, InferError> {
        cfg.validate()?;
        let ev = ev.with_fuel(cfg.fuel);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let state = init_state(&ev, &term, cfg.init_retries, &mut rng)?;
        Ok(Chain { ev, term, cfg, rng, state, last_accepted: true, diag: Diagnostics::default(), emitted: 0 })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diag
    }

    pub fn config(&self) -> &MHConfig {
        &self.cfg
    }

    /// One propose / accept-reject step.
    pub fn step(&mut self) -> Result<StepReport, EvalError> {
        let proposal = propose(&self.ev, &self.term, &self.state.trace, self.cfg.sigma, &mut self.rng)?;
        let alpha = acceptance(&self.state, &proposal);
        let accepted = alpha >= 1.0 || (alpha > 0.0 && self.rng.random::<f64>() < alpha);
        self.diag.steps += 1;
        self.diag.sink_proposals += u64::from(proposal.kind == ProposalKind::Sink);
        self.diag.fuel_exhausted += u64::from(proposal.fuel_exhausted);
        if accepted {
            self.diag.accepted += 1;
            self.state = ChainState {
                trace: proposal.trace.clone(),
                log_weight: proposal.log_weight,
                value: proposal.value.clone().expect("accepted proposals end in a value"),
            };
        }
        self.last_accepted = accepted;
        Ok(StepReport { proposal, alpha, accepted })
    }

    /// Advances to the next emitted state, reporting every step to `observe`.
    pub fn next_with(
        &mut self,
        mut observe: impl FnMut(&StepReport, &ChainState),
    ) -> Option<Result<Sample, InferError>> {
        if self.emitted >= self.cfg.samples {
            return None;
        }
        let skip = if self.emitted == 0 { self.cfg.burn_in + self.cfg.thin } else { self.cfg.thin };
        for _ in 0..skip {
            match self.step() {
                Ok(report) => observe(&report, &self.state),
                Err(e) => {
                    self.emitted = self.cfg.samples;
                    return Some(Err(e.into()));
                }
            }
        }
        let sample = Sample {
            index: self.emitted,
            value: self.state.value.clone(),
            trace: self.state.trace.clone(),
            log_weight: self.state.log_weight,
            accepted: self.last_accepted,
        };
        self.emitted += 1;
        Some(Ok(sample))
    }
}

impl Iterator for Chain<'_> {
    type Item = Result<Sample, InferError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_with(|_, _| {})
    }
}
