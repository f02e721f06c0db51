//! Random closed terms and traces for differential and property testing.
//!
//! Terms draw their variable names from a small pool so that shadowing and
//! capture come up often. Traces come from forward runs, optionally
//! truncated, extended or perturbed, so that both completed runs and trace
//! mismatches are well represented.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};

use crate::ast::{Name, Term, Value};
use crate::builtins::{GAUSSIAN, RND};
use crate::eval::Evaluator;

const NAMES: [&str; 4] = ["x", "y", "f", "g"];
const CONSTANTS: [f64; 9] = [0.0, 1.0, 0.5, 0.25, 2.0, -1.0, 0.0, 1.0, 3.0];
const PRIMS: [(&str, usize); 6] = [("+", 2), ("-", 2), ("*", 2), ("<", 2), ("=", 2), ("sqr", 1)];

/// Shape parameters for [`random_term`].
#[derive(Clone, Copy, Debug)]
pub struct GenConfig {
    /// Maximum nesting depth of term constructors.
    pub max_depth: usize,
    /// Percentage chance that a value is a variable when one is in scope.
    pub var_bias: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_depth: 5, var_bias: 60 }
    }
}

struct Gen<'a> {
    rng: &'a mut dyn RngCore,
    cfg: GenConfig,
    scope: Vec<Name>,
}

impl Gen<'_> {
    fn name(&mut self) -> Name {
        Name::new(NAMES.choose(self.rng).expect("nonempty"))
    }

    fn constant(&mut self) -> f64 {
        *CONSTANTS.choose(self.rng).expect("nonempty")
    }

    fn value(&mut self, depth: usize) -> Value {
        if !self.scope.is_empty() && self.rng.random_range(0..100) < self.cfg.var_bias {
            return Value::Var(self.scope.choose(self.rng).expect("nonempty").clone());
        }
        if depth > 0 && self.rng.random_range(0..4) == 0 {
            self.lambda(depth - 1)
        } else {
            Value::Const(self.constant())
        }
    }

    /// A value that is usually not a λ: for builtin arguments and conditions.
    fn operand(&mut self) -> Value {
        if self.rng.random_range(0..20) == 0 {
            return self.lambda(0);
        }
        self.value(0)
    }

    fn lambda(&mut self, depth: usize) -> Value {
        let x = self.name();
        self.scope.push(x.clone());
        let body = self.term(depth);
        self.scope.pop();
        Value::Lam(x, Arc::new(body))
    }

    fn leaf(&mut self) -> Term {
        match self.rng.random_range(0..10) {
            0..=2 => Term::draw(RND, vec![]),
            3 => Term::draw(GAUSSIAN, vec![self.operand(), Value::Const(*[1.0, 0.5, 2.0].choose(self.rng).unwrap())]),
            4 => {
                let (g, n) = *PRIMS.choose(self.rng).expect("nonempty");
                Term::prim(g, (0..n).map(|_| self.operand()).collect())
            }
            5 => {
                let c = *[0.5, 0.25, 1.0, 2.0, 0.0].choose(self.rng).unwrap();
                let v = if self.rng.random_range(0..3) == 0 && !self.scope.is_empty() {
                    self.value(0)
                } else {
                    Value::Const(c)
                };
                Term::Score(v)
            }
            6 => Term::Fail,
            _ => Term::Val(self.value(0)),
        }
    }

    fn term(&mut self, depth: usize) -> Term {
        if depth == 0 || self.rng.random_range(0..5) == 0 {
            return self.leaf();
        }
        let d = depth - 1;
        match self.rng.random_range(0..10) {
            // let x = M in N
            0..=3 => {
                let arg = self.term(d);
                let Value::Lam(x, body) = self.lambda(d) else { unreachable!() };
                Term::App(Arc::new(Term::Val(Value::Lam(x, body))), Arc::new(arg))
            }
            4 | 5 => Term::App(Arc::new(self.term(d)), Arc::new(self.term(d))),
            6 | 7 => {
                let cond = if self.scope.is_empty() || self.rng.random_range(0..4) == 0 {
                    Value::Const(*[0.0, 1.0, 1.0, 0.0, 0.5].choose(self.rng).unwrap())
                } else {
                    self.value(0)
                };
                Term::If(cond, Arc::new(self.term(d)), Arc::new(self.term(d)))
            }
            8 => Term::Val(self.lambda(d)),
            _ => self.leaf(),
        }
    }
}

/// A random closed term over the standard registry.
pub fn random_term(rng: &mut dyn RngCore, cfg: GenConfig) -> Term {
    let mut g = Gen { rng, cfg, scope: Vec::new() };
    g.term(cfg.max_depth)
}

/// A trace for `term`: a forward-sampled trace, possibly with one element
/// dropped, one appended, or one perturbed; sometimes a purely random one.
pub fn random_trace(ev: &Evaluator, term: &Arc<Term>, rng: &mut dyn RngCore) -> Vec<f64> {
    let mut t = match ev.forward_sample(term, rng) {
        Ok(run) => run.trace.into_vec(),
        Err(_) => Vec::new(),
    };
    match rng.random_range(0..10) {
        0 => {
            t.pop();
        }
        1 => t.push(rng.random()),
        2 if !t.is_empty() => {
            let i = rng.random_range(0..t.len());
            t[i] += rng.random_range(-1.5..1.5);
        }
        3 => t = (0..rng.random_range(0..4)).map(|_| rng.random_range(-0.5..1.5)).collect(),
        _ => {}
    }
    t
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::builtins::Registry;
    use crate::eval::Status;

    #[test]
    fn generated_terms_are_closed_and_valid() {
        let reg = Registry::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let t = random_term(&mut rng, GenConfig::default());
            assert!(t.is_closed(), "{t}");
            reg.validate(&t).unwrap();
        }
    }

    #[test]
    fn traces_cover_completed_and_mismatched_runs() {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg).with_fuel(10_000);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (mut completed, mut mismatched, mut nonempty) = (0, 0, 0);
        for _ in 0..500 {
            let t = Arc::new(random_term(&mut rng, GenConfig::default()));
            let s = random_trace(&ev, &t, &mut rng);
            nonempty += usize::from(!s.is_empty());
            match ev.run_small_step(&t, &s).unwrap().status {
                Status::Completed => completed += 1,
                Status::TraceMismatch => mismatched += 1,
                Status::FuelExhausted => {}
            }
        }
        assert!(completed > 200 && mismatched > 25 && nonempty > 100, "{completed} {mismatched} {nonempty}");
    }
}
