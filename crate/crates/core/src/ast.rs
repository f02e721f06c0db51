//! Core-calculus terms, values, evaluation contexts and redex classification.
//!
//! Terms are immutable and reference-counted so that substitution and
//! context plugging can share unchanged subtrees. Reals are `f64`; the
//! booleans are the reals `0.0` (false) and `1.0` (true).

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::hash::{BuildHasherDefault, Hasher};
use std::sync::Arc;

use thiserror::Error;

/// An interned variable name.
#[derive(Clone, Eq, PartialOrd, Ord)]
pub struct Name(Arc<str>);

impl PartialEq for Name {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

impl std::hash::Hash for Name {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.hash(state)
    }
}

impl Name {
    pub fn new(s: &str) -> Self {
        Name(Arc::from(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Name {
    fn from(s: &str) -> Self {
        Name::new(s)
    }
}

/// Identifier of a registered distribution.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DistId(pub Name);

/// Identifier of a registered primitive function.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrimId(pub Name);

impl DistId {
    pub fn new(s: &str) -> Self {
        DistId(Name::new(s))
    }
}

impl PrimId {
    pub fn new(s: &str) -> Self {
        PrimId(Name::new(s))
    }
}

impl fmt::Display for DistId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Display for PrimId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Values: constants, variables and abstractions.
#[derive(Clone, Debug)]
pub enum Value {
    Const(f64),
    Var(Name),
    Lam(Name, Arc<Term>),
}

/// Terms of the core calculus. `Val` embeds [`Value`] injectively.
#[derive(Clone, Debug)]
pub enum Term {
    Val(Value),
    App(Arc<Term>, Arc<Term>),
    Draw(DistId, Vec<Value>),
    Prim(PrimId, Vec<Value>),
    If(Value, Arc<Term>, Arc<Term>),
    Score(Value),
    Fail,
}

// Structural equality; constants compare by bit pattern so that equality is
// reflexive even for NaN and distinguishes 0.0 from -0.0.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Const(a), Value::Const(b)) => a.to_bits() == b.to_bits(),
            (Value::Var(a), Value::Var(b)) => a == b,
            (Value::Lam(x, m), Value::Lam(y, n)) => x == y && (Arc::ptr_eq(m, n) || m == n),
            _ => false,
        }
    }
}

impl Eq for Value {}

impl PartialEq for Term {
    fn eq(&self, other: &Self) -> bool {
        fn same(a: &Arc<Term>, b: &Arc<Term>) -> bool {
            Arc::ptr_eq(a, b) || a == b
        }
        match (self, other) {
            (Term::Val(a), Term::Val(b)) => a == b,
            (Term::App(m1, n1), Term::App(m2, n2)) => same(m1, m2) && same(n1, n2),
            (Term::Draw(d1, a1), Term::Draw(d2, a2)) => d1 == d2 && a1 == a2,
            (Term::Prim(g1, a1), Term::Prim(g2, a2)) => g1 == g2 && a1 == a2,
            (Term::If(v1, m1, n1), Term::If(v2, m2, n2)) => v1 == v2 && same(m1, m2) && same(n1, n2),
            (Term::Score(a), Term::Score(b)) => a == b,
            (Term::Fail, Term::Fail) => true,
            _ => false,
        }
    }
}

impl Eq for Term {}

pub const TRUE: f64 = 1.0;
pub const FALSE: f64 = 0.0;

impl Value {
    pub fn lam(x: &str, body: Term) -> Value {
        Value::Lam(Name::new(x), Arc::new(body))
    }

    pub fn var(x: &str) -> Value {
        Value::Var(Name::new(x))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Value::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_lam(&self) -> bool {
        matches!(self, Value::Lam(..))
    }

    pub fn into_term(self) -> Term {
        Term::Val(self)
    }
}

impl From<Value> for Term {
    fn from(v: Value) -> Self {
        Term::Val(v)
    }
}

impl Term {
    pub fn constant(c: f64) -> Term {
        Term::Val(Value::Const(c))
    }

    pub fn var(x: &str) -> Term {
        Term::Val(Value::var(x))
    }

    pub fn lam(x: &str, body: Term) -> Term {
        Term::Val(Value::lam(x, body))
    }

    pub fn app(m: Term, n: Term) -> Term {
        Term::App(Arc::new(m), Arc::new(n))
    }

    pub fn ite(v: Value, m: Term, n: Term) -> Term {
        Term::If(v, Arc::new(m), Arc::new(n))
    }

    pub fn draw(d: &str, args: Vec<Value>) -> Term {
        Term::Draw(DistId::new(d), args)
    }

    pub fn prim(g: &str, args: Vec<Value>) -> Term {
        Term::Prim(PrimId::new(g), args)
    }

    /// `let x = m in n`, i.e. `(λx.n) m`.
    pub fn let_in(x: Name, m: Term, n: Term) -> Term {
        Term::App(Arc::new(Term::Val(Value::Lam(x, Arc::new(n)))), Arc::new(m))
    }

    /// `m; n`, i.e. `(λ⋆.n) m` for a binder `dummy` not free in `n`.
    pub fn seq(dummy: Name, m: Term, n: Term) -> Term {
        Term::let_in(dummy, m, n)
    }

    pub fn as_value(&self) -> Option<&Value> {
        match self {
            Term::Val(v) => Some(v),
            _ => None,
        }
    }

    /// Closed-value or `fail` view of the term, if it is a generalized value.
    pub fn as_generalized_value(&self) -> Option<GeneralizedValue> {
        match self {
            Term::Val(v @ (Value::Const(_) | Value::Lam(..))) => Some(GeneralizedValue::Val(v.clone())),
            Term::Fail => Some(GeneralizedValue::Fail),
            _ => None,
        }
    }

    pub fn free_vars(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        collect_free(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn is_closed(&self) -> bool {
        self.first_free_var().is_none()
    }

    /// Some free variable of the term, found without building the full set.
    pub fn first_free_var(&self) -> Option<Name> {
        first_free_var(self, &mut Vec::new())
    }

    pub fn size(&self) -> usize {
        fn value_size(v: &Value) -> usize {
            match v {
                Value::Lam(_, b) => 1 + b.size(),
                _ => 1,
            }
        }
        match self {
            Term::Val(v) => value_size(v),
            Term::App(m, n) => 1 + m.size() + n.size(),
            Term::Draw(_, args) | Term::Prim(_, args) => 1 + args.iter().map(value_size).sum::<usize>(),
            Term::If(v, m, n) => 1 + value_size(v) + m.size() + n.size(),
            Term::Score(v) => 1 + value_size(v),
            Term::Fail => 1,
        }
    }
}

fn collect_free(t: &Term, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
    fn value(v: &Value, bound: &mut Vec<Name>, out: &mut BTreeSet<Name>) {
        match v {
            Value::Const(_) => {}
            Value::Var(x) => {
                if !bound.contains(x) {
                    out.insert(x.clone());
                }
            }
            Value::Lam(x, body) => {
                bound.push(x.clone());
                collect_free(body, bound, out);
                bound.pop();
            }
        }
    }
    match t {
        Term::Val(v) => value(v, bound, out),
        Term::App(m, n) => {
            collect_free(m, bound, out);
            collect_free(n, bound, out);
        }
        Term::Draw(_, args) | Term::Prim(_, args) => args.iter().for_each(|a| value(a, bound, out)),
        Term::If(v, m, n) => {
            value(v, bound, out);
            collect_free(m, bound, out);
            collect_free(n, bound, out);
        }
        Term::Score(v) => value(v, bound, out),
        Term::Fail => {}
    }
}

fn first_free_var(t: &Term, bound: &mut Vec<Name>) -> Option<Name> {
    fn value(v: &Value, bound: &mut Vec<Name>) -> Option<Name> {
        match v {
            Value::Const(_) => None,
            Value::Var(x) => (!bound.contains(x)).then(|| x.clone()),
            Value::Lam(x, body) => {
                bound.push(x.clone());
                let r = first_free_var(body, bound);
                bound.pop();
                r
            }
        }
    }
    match t {
        Term::Val(v) => value(v, bound),
        Term::App(m, n) => first_free_var(m, bound).or_else(|| first_free_var(n, bound)),
        Term::Draw(_, args) | Term::Prim(_, args) => args.iter().find_map(|a| value(a, bound)),
        Term::If(v, m, n) => value(v, bound).or_else(|| first_free_var(m, bound)).or_else(|| first_free_var(n, bound)),
        Term::Score(v) => value(v, bound),
        Term::Fail => None,
    }
}

/// A value or `fail`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GeneralizedValue {
    Val(Value),
    Fail,
}

impl GeneralizedValue {
    pub fn is_value(&self) -> bool {
        matches!(self, GeneralizedValue::Val(_))
    }

    pub fn value(&self) -> Option<&Value> {
        match self {
            GeneralizedValue::Val(v) => Some(v),
            GeneralizedValue::Fail => None,
        }
    }

    pub fn to_term(&self) -> Term {
        match self {
            GeneralizedValue::Val(v) => Term::Val(v.clone()),
            GeneralizedValue::Fail => Term::Fail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("term is not closed: free variable `{0}`")]
pub struct OpenTermError(pub Name);

// ---------------------------------------------------------------------------
// Substitution

/// Capture-avoiding substitution `body{val/var}`.
///
/// Substituends produced by evaluation are closed, in which case no binder is
/// ever renamed. Open substituends are handled by renaming the clashing binder
/// to the first primed variant that is fresh for both sides, which keeps the
/// result a deterministic function of the inputs.
pub fn subst(body: &Arc<Term>, var: &Name, val: &Value) -> Arc<Term> {
    let val_fv = match val {
        Value::Const(_) => BTreeSet::new(),
        v => Term::Val(v.clone()).free_vars(),
    };
    Subst { x: var, v: val, v_fv: &val_fv, closed: None }.term(body).unwrap_or_else(|| body.clone())
}

/// λ-bodies known to belong to closed λ-values, keyed by address. The `Arc`s
/// are kept alive so an address cannot be reused while it is recorded.
#[derive(Default)]
pub(crate) struct ClosedLams {
    ptrs: HashSet<usize, BuildHasherDefault<PtrHasher>>,
    keep: Vec<Arc<Term>>,
}

impl ClosedLams {
    /// Records `v` if it is a λ-value; the caller guarantees it is closed.
    pub fn note(&mut self, v: &Value) {
        if let Value::Lam(_, body) = v {
            if self.ptrs.insert(Arc::as_ptr(body) as usize) {
                self.keep.push(body.clone());
            }
        }
    }

    fn contains(&self, body: &Arc<Term>) -> bool {
        self.ptrs.contains(&(Arc::as_ptr(body) as usize))
    }
}

/// Multiplicative hash for addresses.
#[derive(Default)]
pub(crate) struct PtrHasher(u64);

impl Hasher for PtrHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0.rotate_left(8) ^ u64::from(b)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        }
    }

    fn write_usize(&mut self, n: usize) {
        self.0 = (n as u64 >> 4).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
}

/// [`subst`] for a closed `val`. λ-values recorded in `closed` are not
/// traversed, since substitution leaves them unchanged.
pub(crate) fn subst_closed(body: &Arc<Term>, var: &Name, val: &Value, closed: &mut ClosedLams) -> Arc<Term> {
    closed.note(val);
    let empty = BTreeSet::new();
    Subst { x: var, v: val, v_fv: &empty, closed: Some(closed) }.term(body).unwrap_or_else(|| body.clone())
}

struct Subst<'a> {
    x: &'a Name,
    v: &'a Value,
    v_fv: &'a BTreeSet<Name>,
    closed: Option<&'a ClosedLams>,
}

impl Subst<'_> {
    /// Returns `None` when the term is unchanged, to preserve sharing.
    fn term(&self, t: &Arc<Term>) -> Option<Arc<Term>> {
        match &**t {
            Term::Val(val) => self.value(val).map(|nv| Arc::new(Term::Val(nv))),
            Term::App(m, n) => {
                let m2 = self.term(m);
                let n2 = self.term(n);
                if m2.is_none() && n2.is_none() {
                    return None;
                }
                Some(Arc::new(Term::App(m2.unwrap_or_else(|| m.clone()), n2.unwrap_or_else(|| n.clone()))))
            }
            Term::Draw(d, args) => self.args(args).map(|a| Arc::new(Term::Draw(d.clone(), a))),
            Term::Prim(g, args) => self.args(args).map(|a| Arc::new(Term::Prim(g.clone(), a))),
            Term::If(c, m, n) => {
                let c2 = self.value(c);
                let m2 = self.term(m);
                let n2 = self.term(n);
                if c2.is_none() && m2.is_none() && n2.is_none() {
                    return None;
                }
                Some(Arc::new(Term::If(
                    c2.unwrap_or_else(|| c.clone()),
                    m2.unwrap_or_else(|| m.clone()),
                    n2.unwrap_or_else(|| n.clone()),
                )))
            }
            Term::Score(c) => self.value(c).map(|c| Arc::new(Term::Score(c))),
            Term::Fail => None,
        }
    }

    fn args(&self, args: &[Value]) -> Option<Vec<Value>> {
        let changed: Vec<Option<Value>> = args.iter().map(|a| self.value(a)).collect();
        if changed.iter().all(Option::is_none) {
            return None;
        }
        Some(changed.into_iter().zip(args).map(|(c, a)| c.unwrap_or_else(|| a.clone())).collect())
    }

    fn value(&self, val: &Value) -> Option<Value> {
        match val {
            Value::Const(_) => None,
            Value::Var(y) => (y == self.x).then(|| self.v.clone()),
            Value::Lam(y, body) => {
                if y == self.x || self.closed.is_some_and(|c| c.contains(body)) {
                    return None;
                }
                if self.v_fv.contains(y) {
                    let body_fv = body.free_vars();
                    if !body_fv.contains(self.x) {
                        return None;
                    }
                    let fresh = fresh_variant(y, |n| self.v_fv.contains(n) || body_fv.contains(n) || n == self.x);
                    let fresh_fv = BTreeSet::from([fresh.clone()]);
                    let fresh_var = Value::Var(fresh.clone());
                    let rename = Subst { x: y, v: &fresh_var, v_fv: &fresh_fv, closed: None };
                    let renamed = rename.term(body).unwrap_or_else(|| body.clone());
                    let body2 = self.term(&renamed).unwrap_or(renamed);
                    return Some(Value::Lam(fresh, body2));
                }
                self.term(body).map(|b| Value::Lam(y.clone(), b))
            }
        }
    }
}

fn fresh_variant(base: &Name, taken: impl Fn(&Name) -> bool) -> Name {
    let mut s = base.as_str().to_owned();
    loop {
        s.push('\'');
        let n = Name::new(&s);
        if !taken(&n) {
            return n;
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation contexts

/// One layer of an evaluation context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    /// `E M`: the hole is in function position.
    AppL(Arc<Term>),
    /// `(λx.M) E`: the hole is in argument position; the function is a λ-value.
    AppR(Value),
}

/// Evaluation context, stored outermost frame first. The empty context is the hole.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalContext {
    frames: Vec<Frame>,
}

impl EvalContext {
    pub fn hole() -> Self {
        EvalContext { frames: Vec::new() }
    }

    pub fn from_frames(frames: Vec<Frame>) -> Self {
        EvalContext { frames }
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn is_hole(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    /// `E ∘ E'`.
    pub fn compose(&self, inner: &EvalContext) -> EvalContext {
        let mut frames = self.frames.clone();
        frames.extend(inner.frames.iter().cloned());
        EvalContext { frames }
    }

    /// `E[M]`.
    pub fn plug(&self, term: Arc<Term>) -> Arc<Term> {
        self.frames.iter().rev().fold(term, |acc, frame| match frame {
            Frame::AppL(arg) => Arc::new(Term::App(acc, arg.clone())),
            Frame::AppR(f) => Arc::new(Term::App(Arc::new(Term::Val(f.clone())), acc)),
        })
    }
}

// ---------------------------------------------------------------------------
// Redexes

/// The shape of a redex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RedexKind {
    /// `(λx.M) V`
    Beta,
    /// `D(c⃗)`
    Draw,
    /// `g(c⃗)`
    Prim,
    /// `score(c)` with `c ∈ (0,1]`
    Score,
    Fail,
    IfTrue,
    IfFalse,
    Erroneous(ErroneousKind),
}

/// The five forms of erroneous redex.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErroneousKind {
    /// `c M`
    ConstApplied,
    /// `D(V⃗)` with a λ argument
    DrawLambdaArg,
    /// `g(V⃗)` with a λ argument
    PrimLambdaArg,
    /// `if V M N` with `V` neither `0` nor `1`
    BadCondition,
    /// `score(V)` with `V ∉ (0,1]`
    BadScore,
}

/// A redex together with its classification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Redex {
    pub kind: RedexKind,
    pub term: Arc<Term>,
}

/// Result of splitting a closed term into context and redex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Decomposition {
    Value(GeneralizedValue),
    Redex(EvalContext, Redex),
}

pub fn is_score_arg(c: f64) -> bool {
    c > 0.0 && c <= 1.0
}

fn closed_arg(v: &Value) -> Result<(), OpenTermError> {
    match v {
        Value::Var(x) => Err(OpenTermError(x.clone())),
        _ => Ok(()),
    }
}

/// Classifies `term` as a redex, assuming it sits in a closed context.
/// Returns `Ok(None)` for terms that are not redexes (values and non-value
/// applications whose function part still has to be evaluated).
pub fn classify_redex(term: &Term) -> Result<Option<RedexKind>, OpenTermError> {
    use ErroneousKind::*;
    let kind = match term {
        Term::Val(Value::Var(x)) => return Err(OpenTermError(x.clone())),
        Term::Val(_) => return Ok(None),
        Term::Fail => RedexKind::Fail,
        Term::App(m, n) => match &**m {
            Term::Val(Value::Const(_)) => RedexKind::Erroneous(ConstApplied),
            Term::Val(Value::Var(x)) => return Err(OpenTermError(x.clone())),
            Term::Val(Value::Lam(..)) => match &**n {
                Term::Val(Value::Var(x)) => return Err(OpenTermError(x.clone())),
                Term::Val(_) => RedexKind::Beta,
                _ => return Ok(None),
            },
            _ => return Ok(None),
        },
        Term::Draw(_, args) => {
            args.iter().try_for_each(closed_arg)?;
            if args.iter().any(Value::is_lam) {
                RedexKind::Erroneous(DrawLambdaArg)
            } else {
                RedexKind::Draw
            }
        }
        Term::Prim(_, args) => {
            args.iter().try_for_each(closed_arg)?;
            if args.iter().any(Value::is_lam) {
                RedexKind::Erroneous(PrimLambdaArg)
            } else {
                RedexKind::Prim
            }
        }
        Term::If(v, _, _) => {
            closed_arg(v)?;
            match v.as_const() {
                Some(c) if c == TRUE => RedexKind::IfTrue,
                Some(c) if c == FALSE => RedexKind::IfFalse,
                _ => RedexKind::Erroneous(BadCondition),
            }
        }
        Term::Score(v) => {
            closed_arg(v)?;
            match v.as_const() {
                Some(c) if is_score_arg(c) => RedexKind::Score,
                _ => RedexKind::Erroneous(BadScore),
            }
        }
    };
    Ok(Some(kind))
}

/// Whether `term` is one of the five erroneous-redex forms.
pub fn is_erroneous(term: &Term) -> bool {
    matches!(classify_redex(term), Ok(Some(RedexKind::Erroneous(_))))
}

/// Splits a closed term into its unique evaluation context and redex.
pub fn decompose(term: &Arc<Term>) -> Result<Decomposition, OpenTermError> {
    if let Some(x) = first_free_var(term, &mut Vec::new()) {
        return Err(OpenTermError(x));
    }
    decompose_unchecked(term)
}

/// As [`decompose`], but only checks closedness along the path to the redex.
/// Used by the evaluators, which check closedness once per run.
pub(crate) fn decompose_unchecked(term: &Arc<Term>) -> Result<Decomposition, OpenTermError> {
    let mut frames = Vec::new();
    let mut focus = term.clone();
    loop {
        if frames.is_empty() {
            if let Some(g) = focus.as_generalized_value() {
                return Ok(Decomposition::Value(g));
            }
        }
        if let Some(kind) = classify_redex(&focus)? {
            return Ok(Decomposition::Redex(EvalContext { frames }, Redex { kind, term: focus }));
        }
        let next = match &*focus {
            Term::App(m, n) => {
                if let Term::Val(f @ Value::Lam(..)) = &**m {
                    frames.push(Frame::AppR(f.clone()));
                    n.clone()
                } else {
                    frames.push(Frame::AppL(n.clone()));
                    m.clone()
                }
            }
            // Values in the hole of a proper context never occur: only
            // non-values are descended into.
            _ => unreachable!("non-redex, non-application term in evaluation position"),
        };
        focus = next;
    }
}
