//! Church-style surface language: a reader for `(query ...)` forms and the
//! translation to core terms.

mod parse;
mod translate;

use thiserror::Error;

use crate::ast::Term;
use crate::builtins::Registry;

pub use parse::{parse, Query, SurfaceExpr, KEYWORDS, RESERVED_PREFIX};
pub use translate::{fix, translate_expr, translate_query, Translator};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChurchError {
    #[error("{line}:{column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unbound identifier `{0}`")]
    UnboundIdentifier(String),
    #[error("`{name}` expects {expected} argument(s), got {got}")]
    Arity { name: String, expected: usize, got: usize },
    #[error("`{0}` is not supported")]
    Unsupported(String),
}

/// Parses and translates a Church query in one go.
pub fn compile(source: &str, registry: &Registry) -> Result<Term, ChurchError> {
    translate_query(&parse(source, registry)?, registry)
}
