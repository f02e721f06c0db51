//! Registry of distributions (density + sampler) and primitive functions.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::ast::{DistId, PrimId, Term, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BuiltinError {
    #[error("unknown distribution `{0}`")]
    UnknownDist(DistId),
    #[error("unknown primitive `{0}`")]
    UnknownPrim(PrimId),
    #[error("`{name}` expects {expected} argument(s), got {got}")]
    ArityMismatch { name: String, expected: usize, got: usize },
    #[error("cannot sample `{dist}` with parameters {params:?}")]
    InvalidParams { dist: DistId, params: Vec<f64> },
}

pub type LogPdfFn = fn(&[f64], f64) -> f64;
pub type SampleFn = fn(&[f64], &mut dyn RngCore) -> Option<f64>;
pub type InterpFn = fn(&[f64]) -> f64;

/// A distribution identifier with its density and sampler.
///
/// `log_pdf` is the natural log of a sub-probability density, `-inf` outside
/// the support. `sample` returns `None` when the parameters admit no draw
/// (the density is zero everywhere).
#[derive(Clone, Debug)]
pub struct DistSpec {
    pub id: DistId,
    pub arity: usize,
    pub log_pdf: LogPdfFn,
    pub sample: SampleFn,
}

/// A primitive function identifier with its (total) interpretation.
#[derive(Clone, Debug)]
pub struct PrimSpec {
    pub id: PrimId,
    pub arity: usize,
    pub interp: InterpFn,
}

/// Immutable after construction; shared by reference between evaluations.
#[derive(Clone, Debug)]
pub struct Registry {
    dists: HashMap<DistId, DistSpec>,
    prims: HashMap<PrimId, PrimSpec>,
    /// Changes on every modification; registries with equal generations
    /// have equal contents.
    generation: u64,
}

impl Default for Registry {
    fn default() -> Self {
        Registry { dists: HashMap::new(), prims: HashMap::new(), generation: next_generation() }
    }
}

fn next_generation() -> u64 {
    static NEXT: AtomicU64 = AtomicU64::new(0);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

impl PrimSpec {
    /// Applies the interpretation. NaN results are canonicalised to `f64::NAN`.
    pub fn apply(&self, args: &[f64]) -> f64 {
        let r = (self.interp)(args);
        if r.is_nan() {
            f64::NAN
        } else {
            r
        }
    }
}

pub const RND: &str = "rnd";
pub const GAUSSIAN: &str = "gaussian";

fn rnd_log_pdf(_: &[f64], c: f64) -> f64 {
    if (0.0..=1.0).contains(&c) {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

fn rnd_sample(_: &[f64], rng: &mut dyn RngCore) -> Option<f64> {
    Some(rng.random::<f64>())
}

/// Gaussian with (mean, variance) parameters.
pub fn gaussian_log_pdf(params: &[f64], c: f64) -> f64 {
    let (m, v) = (params[0], params[1]);
    if v > 0.0 {
        let d = c - m;
        let lp = -(d * d) / (2.0 * v) - 0.5 * (2.0 * v * PI).ln();
        if lp.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp
        }
    } else {
        f64::NEG_INFINITY
    }
}

fn gaussian_sample(params: &[f64], rng: &mut dyn RngCore) -> Option<f64> {
    let (m, v) = (params[0], params[1]);
    if !(v > 0.0) || !m.is_finite() || !v.is_finite() {
        return None;
    }
    Normal::new(m, v.sqrt()).ok().map(|n| n.sample(rng))
}

fn bool_real(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl Registry {
    pub fn empty() -> Self {
        Registry::default()
    }

    /// `rnd`, `gaussian`, and the primitives `+ - * < > = exp sqr`.
    pub fn standard() -> Self {
        let mut r = Registry::empty();
        r.add_dist(DistSpec { id: DistId::new(RND), arity: 0, log_pdf: rnd_log_pdf, sample: rnd_sample });
        r.add_dist(DistSpec {
            id: DistId::new(GAUSSIAN),
            arity: 2,
            log_pdf: gaussian_log_pdf,
            sample: gaussian_sample,
        });
        let prims: [(&str, usize, InterpFn); 8] = [
            ("+", 2, |a| a[0] + a[1]),
            ("-", 2, |a| a[0] - a[1]),
            ("*", 2, |a| a[0] * a[1]),
            ("<", 2, |a| bool_real(a[0] < a[1])),
            (">", 2, |a| bool_real(a[0] > a[1])),
            ("=", 2, |a| bool_real(a[0] == a[1])),
            ("exp", 1, |a| a[0].exp()),
            ("sqr", 1, |a| a[0] * a[0]),
        ];
        for (name, arity, interp) in prims {
            r.add_prim(PrimSpec { id: PrimId::new(name), arity, interp });
        }
        r
    }

    pub fn add_dist(&mut self, spec: DistSpec) {
        self.dists.insert(spec.id.clone(), spec);
        self.generation = next_generation();
    }

    pub fn add_prim(&mut self, spec: PrimSpec) {
        self.prims.insert(spec.id.clone(), spec);
        self.generation = next_generation();
    }

    pub(crate) fn generation(&self) -> u64 {
        self.generation
    }

    pub fn dist(&self, id: &DistId) -> Result<&DistSpec, BuiltinError> {
        self.dists.get(id).ok_or_else(|| BuiltinError::UnknownDist(id.clone()))
    }

    pub fn prim(&self, id: &PrimId) -> Result<&PrimSpec, BuiltinError> {
        self.prims.get(id).ok_or_else(|| BuiltinError::UnknownPrim(id.clone()))
    }

    pub fn dist_by_name(&self, name: &str) -> Option<&DistSpec> {
        self.dists.get(&DistId::new(name))
    }

    pub fn prim_by_name(&self, name: &str) -> Option<&PrimSpec> {
        self.prims.get(&PrimId::new(name))
    }

    /// Looks up `id` and checks that `params` has its arity.
    pub fn dist_checked(&self, id: &DistId, params: &[f64]) -> Result<&DistSpec, BuiltinError> {
        self.dist_with_arity(id, params.len())
    }

    /// Looks up `id` and checks that it takes `n` parameters.
    pub fn dist_with_arity(&self, id: &DistId, n: usize) -> Result<&DistSpec, BuiltinError> {
        let spec = self.dist(id)?;
        if spec.arity != n {
            return Err(BuiltinError::ArityMismatch { name: id.to_string(), expected: spec.arity, got: n });
        }
        Ok(spec)
    }

    /// Looks up `id` and checks that it takes `n` arguments.
    pub fn prim_with_arity(&self, id: &PrimId, n: usize) -> Result<&PrimSpec, BuiltinError> {
        let spec = self.prim(id)?;
        if spec.arity != n {
            return Err(BuiltinError::ArityMismatch { name: id.to_string(), expected: spec.arity, got: n });
        }
        Ok(spec)
    }

    /// Log-density of `dist(params)` at `point`; `-inf` where the density is 0.
    pub fn log_pdf(&self, dist: &DistId, params: &[f64], point: f64) -> Result<f64, BuiltinError> {
        let spec = self.dist_checked(dist, params)?;
        Ok((spec.log_pdf)(params, point))
    }

    pub fn pdf(&self, dist: &DistId, params: &[f64], point: f64) -> Result<f64, BuiltinError> {
        self.log_pdf(dist, params, point).map(f64::exp)
    }

    pub fn sample(&self, dist: &DistId, params: &[f64], rng: &mut dyn RngCore) -> Result<f64, BuiltinError> {
        let spec = self.dist_checked(dist, params)?;
        (spec.sample)(params, rng)
            .ok_or_else(|| BuiltinError::InvalidParams { dist: dist.clone(), params: params.to_vec() })
    }

    /// Applies a primitive. NaN results are canonicalised to `f64::NAN`.
    pub fn apply_prim(&self, prim: &PrimId, args: &[f64]) -> Result<f64, BuiltinError> {
        Ok(self.prim_with_arity(prim, args.len())?.apply(args))
    }

    /// Checks that every draw and primitive call names a registered
    /// identifier with the right number of arguments.
    pub fn validate(&self, term: &Term) -> Result<(), BuiltinError> {
        fn value(r: &Registry, v: &Value) -> Result<(), BuiltinError> {
            match v {
                Value::Lam(_, body) => r.validate(body),
                _ => Ok(()),
            }
        }
        match term {
            Term::Val(v) => value(self, v),
            Term::App(m, n) => {
                self.validate(m)?;
                self.validate(n)
            }
            Term::Draw(d, args) => {
                let spec = self.dist(d)?;
                if spec.arity != args.len() {
                    return Err(BuiltinError::ArityMismatch {
                        name: d.to_string(),
                        expected: spec.arity,
                        got: args.len(),
                    });
                }
                args.iter().try_for_each(|a| value(self, a))
            }
            Term::Prim(g, args) => {
                let spec = self.prim(g)?;
                if spec.arity != args.len() {
                    return Err(BuiltinError::ArityMismatch {
                        name: g.to_string(),
                        expected: spec.arity,
                        got: args.len(),
                    });
                }
                args.iter().try_for_each(|a| value(self, a))
            }
            Term::If(v, m, n) => {
                value(self, v)?;
                self.validate(m)?;
                self.validate(n)
            }
            Term::Score(v) => value(self, v),
            Term::Fail => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reg() -> Registry {
        Registry::standard()
    }

    #[test]
    fn rnd_density() {
        let r = reg();
        let rnd = DistId::new(RND);
        assert_eq!(r.pdf(&rnd, &[], 0.7).unwrap(), 1.0);
        assert_eq!(r.pdf(&rnd, &[], 0.0).unwrap(), 1.0);
        assert_eq!(r.pdf(&rnd, &[], 1.0).unwrap(), 1.0);
        assert_eq!(r.pdf(&rnd, &[], 1.5).unwrap(), 0.0);
        assert_eq!(r.log_pdf(&rnd, &[], -0.1).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn gaussian_density_matches_closed_form() {
        let r = reg();
        let g = DistId::new(GAUSSIAN);
        // 1 / (e^{(c-m)^2/(2v)} sqrt(2 v pi)), evaluated directly.
        let direct = |m: f64, v: f64, c: f64| 1.0 / (((c - m).powi(2) / (2.0 * v)).exp() * (2.0 * v * PI).sqrt());
        assert!((r.pdf(&g, &[0.0, 1.0], 0.0).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        for &(m, v, c) in &[(0.0, 2.0, 1.3), (1.0, 0.5, -0.2), (-3.0, 10.0, 4.0)] {
            let got = r.pdf(&g, &[m, v], c).unwrap();
            assert!((got - direct(m, v, c)).abs() <= 1e-14 * direct(m, v, c).max(1e-300));
        }
        assert_eq!(r.pdf(&g, &[0.0, 0.0], 0.0).unwrap(), 0.0);
        assert_eq!(r.pdf(&g, &[0.0, -1.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_integrates_to_one() {
        let r = reg();
        let g = DistId::new(GAUSSIAN);
        // Midpoint rule over ±12 standard deviations.
        for &(m, v) in &[(0.0, 1.0), (2.0, 0.25), (-1.0, 4.0)] {
            let sd: f64 = f64::sqrt(v);
            let (lo, hi, n) = (m - 12.0 * sd, m + 12.0 * sd, 200_000);
            let h = (hi - lo) / n as f64;
            let total: f64 = (0..n).map(|i| r.pdf(&g, &[m, v], lo + (i as f64 + 0.5) * h).unwrap() * h).sum();
            assert!((total - 1.0).abs() < 1e-9, "{total}");
        }
    }

    #[test]
    fn primitives() {
        let r = reg();
        assert_eq!(r.apply_prim(&PrimId::new("+"), &[2.0, 3.0]).unwrap(), 5.0);
        assert_eq!(r.apply_prim(&PrimId::new("<"), &[0.7, 0.5]).unwrap(), 0.0);
        assert_eq!(r.apply_prim(&PrimId::new("<"), &[0.3, 0.5]).unwrap(), 1.0);
        assert_eq!(r.apply_prim(&PrimId::new("exp"), &[0.0]).unwrap(), 1.0);
        assert_eq!(r.apply_prim(&PrimId::new("sqr"), &[-3.0]).unwrap(), 9.0);
        assert_eq!(r.apply_prim(&PrimId::new("="), &[2.0, 2.0]).unwrap(), 1.0);
        let nan = r.apply_prim(&PrimId::new("-"), &[f64::INFINITY, f64::INFINITY]).unwrap();
        assert_eq!(nan.to_bits(), f64::NAN.to_bits());
    }

    #[test]
    fn lookup_errors() {
        let r = reg();
        assert!(matches!(r.apply_prim(&PrimId::new("frob"), &[]), Err(BuiltinError::UnknownPrim(_))));
        assert!(matches!(r.apply_prim(&PrimId::new("+"), &[1.0]), Err(BuiltinError::ArityMismatch { .. })));
        assert!(matches!(r.pdf(&DistId::new("beta"), &[], 0.0), Err(BuiltinError::UnknownDist(_))));
        assert!(matches!(r.pdf(&DistId::new(RND), &[1.0], 0.0), Err(BuiltinError::ArityMismatch { .. })));
    }

    #[test]
    fn sampling() {
        let r = reg();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let c = r.sample(&DistId::new(RND), &[], &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&c));
        }
        assert!(matches!(
            r.sample(&DistId::new(GAUSSIAN), &[0.0, -1.0], &mut rng),
            Err(BuiltinError::InvalidParams { .. })
        ));
    }

    #[test]
    fn samples_land_in_support() {
        let r = reg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (d, p) in [(RND, vec![]), (GAUSSIAN, vec![1.0, 0.3])] {
            let id = DistId::new(d);
            for _ in 0..10_000 {
                let c = r.sample(&id, &p, &mut rng).unwrap();
                assert!(r.pdf(&id, &p, c).unwrap() > 0.0);
            }
        }
    }
}
