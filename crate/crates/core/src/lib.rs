//! A probabilistic call-by-value λ-calculus with trace semantics, a
//! Church-style frontend, and trace Metropolis-Hastings inference.

// Negated float comparisons are used on purpose so that NaN falls on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ast;
pub mod builtins;
pub mod check;
pub mod church;
pub mod cli;
pub mod eval;
pub mod gen;
pub mod infer;
pub mod stats;
pub mod syntax;
