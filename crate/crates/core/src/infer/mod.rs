//! Trace Metropolis-Hastings and rejection sampling.
//!
//! Both samplers work on whole traces of a closed term. MH perturbs every
//! choice of the current trace with Gaussian noise, runs the term on the
//! perturbed prefix, and extends or truncates the trace as the run demands;
//! the Hastings ratio uses the proposal density `q(s,t)`.

mod mh;
mod rejection;

use thiserror::Error;

use crate::ast::Value;
use crate::eval::{EvalError, Trace, DEFAULT_FUEL};

pub use mh::{
    acceptance, init_state, proposal_density, propose, Chain, ChainState, Diagnostics, Proposal, ProposalKind,
    StepReport,
};
pub use rejection::{forward_samples, rejection_sample, ForwardSamples, RejectionSampler};

/// Default number of consecutive failed attempts allowed per rejection sample.
pub const DEFAULT_MAX_RETRIES: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferError {
    #[error("no run produced a value with positive weight after {attempts} attempts")]
    InitFailure { attempts: u64 },
    #[error("rejection sampling gave up after {attempts} consecutive rejected runs")]
    RetryExhausted { attempts: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Settings for a Metropolis-Hastings run.
#[derive(Clone, Debug, PartialEq)]
pub struct MHConfig {
    /// Standard deviation of the Gaussian perturbation of each choice.
    pub sigma: f64,
    pub samples: usize,
    pub burn_in: usize,
    /// Keep every `thin`-th state after burn-in.
    pub thin: usize,
    pub seed: u64,
    pub fuel: u64,
    pub init_retries: u64,
}

impl Default for MHConfig {
    fn default() -> Self {
        MHConfig { sigma: 1.0, samples: 1000, burn_in: 0, thin: 1, seed: 0, fuel: DEFAULT_FUEL, init_retries: 10_000 }
    }
}

impl MHConfig {
    pub fn validate(&self) -> Result<(), InferError> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(InferError::InvalidConfig(format!("sigma must be positive and finite, got {}", self.sigma)));
        }
        if self.thin == 0 {
            return Err(InferError::InvalidConfig("thin must be at least 1".into()));
        }
        if self.init_retries == 0 {
            return Err(InferError::InvalidConfig("init_retries must be at least 1".into()));
        }
        Ok(())
    }
}

/// One emitted sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub value: Value,
    pub trace: Trace,
    /// `log P^V_M(trace)`.
    pub log_weight: f64,
    /// Whether the step that produced this state accepted its proposal.
    /// Always true for rejection and forward samples.
    pub accepted: bool,
}
