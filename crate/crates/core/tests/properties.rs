use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use tracelam::ast::{decompose, subst, Decomposition, EvalContext, Frame, Name, Term, Value};
use tracelam::builtins::{Registry, GAUSSIAN, RND};
use tracelam::check::{self, weights_close, Verdict, CHECK_FUEL};
use tracelam::church::compile;
use tracelam::eval::{Evaluator, Trace, Weight};
use tracelam::gen::{random_term, random_trace, GenConfig};
use tracelam::infer::{acceptance, init_state, proposal_density, propose, ChainState, Proposal, ProposalKind};
use tracelam::stats::{chi_square_discrete, tv_binned, Binning, EmpiricalDist};

const GEOMETRIC: &str = include_str!("../models/geometric.church");
const REGRESSION_FLIP: &str = include_str!("../models/linear-regression-flip.church");
const REGRESSION_SCORE: &str = include_str!("../models/linear-regression-score.church");

fn generated(seed: u64) -> (Arc<Term>, Vec<f64>, ChaCha8Rng) {
    let reg = Registry::standard();
    let ev = Evaluator::new(&reg).with_fuel(CHECK_FUEL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let term = Arc::new(random_term(&mut rng, GenConfig::default()));
    let trace = random_trace(&ev, &term, &mut rng);
    (term, trace, rng)
}

fn model(src: &str, reg: &Registry) -> Arc<Term> {
    Arc::new(compile(src, reg).expect("bundled model compiles"))
}

fn assert_verdict(v: Verdict) -> Result<(), TestCaseError> {
    match v {
        Verdict::Pass => Ok(()),
        Verdict::Skip => Err(TestCaseError::reject("out of fuel")),
        Verdict::Fail(why) => Err(TestCaseError::fail(why)),
    }
}

/// Replaces every constant `c` by the variable `x`.
fn abstract_const(t: &Term, c: f64, x: &Name) -> Term {
    let val = |v: &Value| match v {
        Value::Const(k) if *k == c => Value::Var(x.clone()),
        Value::Lam(y, body) => Value::Lam(y.clone(), Arc::new(abstract_const(body, c, x))),
        v => v.clone(),
    };
    let sub = |m: &Arc<Term>| Arc::new(abstract_const(m, c, x));
    match t {
        Term::Val(v) => Term::Val(val(v)),
        Term::App(m, n) => Term::App(sub(m), sub(n)),
        Term::Draw(d, args) => Term::Draw(d.clone(), args.iter().map(val).collect()),
        Term::Prim(g, args) => Term::Prim(g.clone(), args.iter().map(val).collect()),
        Term::If(v, m, n) => Term::If(val(v), sub(m), sub(n)),
        Term::Score(v) => Term::Score(val(v)),
        Term::Fail => Term::Fail,
    }
}

fn subst_context(ctx: &EvalContext, x: &Name, v: &Value) -> EvalContext {
    let frames = ctx
        .frames()
        .iter()
        .map(|f| match f {
            Frame::AppL(arg) => Frame::AppL(subst(arg, x, v)),
            Frame::AppR(lam) => match &*subst(&Arc::new(Term::Val(lam.clone())), x, v) {
                Term::Val(l) => Frame::AppR(l.clone()),
                other => panic!("substitution into a value gave {other}"),
            },
        })
        .collect();
    EvalContext::from_frames(frames)
}

fn context_of(seed: u64) -> Option<EvalContext> {
    let (term, _, _) = generated(seed);
    match decompose(&term).ok()? {
        Decomposition::Redex(ctx, _) => Some(ctx),
        Decomposition::Value(_) => None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn big_and_small_step_agree(seed in any::<u64>()) {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg).with_fuel(CHECK_FUEL);
        let (term, trace, _) = generated(seed);
        assert_verdict(check::equivalence(&ev, &term, &trace).unwrap())?;
    }

    #[test]
    fn both_evaluators_are_deterministic(seed in any::<u64>()) {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg).with_fuel(CHECK_FUEL);
        let (term, trace, _) = generated(seed);
        let a = ev.run_small_step(&term, &trace).unwrap();
        let b = ev.run_small_step(&term, &trace).unwrap();
        prop_assert_eq!(&a.result, &b.result);
        prop_assert_eq!(a.weight.ln().to_bits(), b.weight.ln().to_bits());
        let c = ev.eval_big(&term, &trace).unwrap();
        let d = ev.eval_big(&term, &trace).unwrap();
        prop_assert_eq!(&c.result, &d.result);
        prop_assert_eq!(c.weight.ln().to_bits(), d.weight.ln().to_bits());
    }

    #[test]
    fn weight_never_increases_when_factors_are_at_most_one(seed in any::<u64>()) {
        // rnd has density 1 on its support and score arguments are in (0, 1].
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg).with_fuel(CHECK_FUEL);
        let (term, trace, _) = generated(seed);
        prop_assume!(!term.to_string().contains(GAUSSIAN));
        let mut last = 0.0f64;
        let mut ok = true;
        ev.run_small_step_observed(&term, &trace, |r| {
            ok &= !r.log_weight.is_nan() && r.weight >= 0.0 && r.log_weight <= last;
            last = r.log_weight;
        })
        .unwrap();
        prop_assert!(ok);
    }

    #[test]
    fn partial_evaluation_composes(seed in any::<u64>()) {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg).with_fuel(CHECK_FUEL);
        let (term, trace, mut rng) = generated(seed);
        let cut = rng.random_range(0..=trace.len());
        let (s, t) = trace.split_at(cut);
        assert_verdict(check::peval_law(&ev, &term, s, t).unwrap())?;
    }

    #[test]
    fn decomposition_round_trips_and_is_deterministic(seed in any::<u64>()) {
        let (term, _, _) = generated(seed);
        assert_verdict(check::decompose_round_trip(&term).unwrap())?;
        prop_assert_eq!(decompose(&term).unwrap(), decompose(&term).unwrap());
    }

    #[test]
    fn context_composition_plugs_in_order(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let (Some(e1), Some(e2)) = (context_of(a), context_of(b)) else { return Err(TestCaseError::reject("no redex")) };
        let (m, _, _) = generated(c);
        prop_assert_eq!(e1.compose(&e2).plug(m.clone()), e1.plug(e2.plug(m)));
    }

    #[test]
    fn substitution_commutes_with_plugging(a in any::<u64>(), b in any::<u64>(), v in any::<u64>()) {
        let Some(ctx) = context_of(a) else { return Err(TestCaseError::reject("no redex")) };
        let (inner, _, _) = generated(b);
        let z = Name::new("z");
        let open = Arc::new(abstract_const(&inner, 0.5, &z));
        let value = match generated(v).0.as_value() {
            Some(val) => val.clone(),
            None => Value::Const(v as f64),
        };
        let lhs = subst(&ctx.plug(open.clone()), &z, &value);
        let rhs = subst_context(&ctx, &z, &value).plug(subst(&open, &z, &value));
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn trace_concatenation_is_a_monoid(
        a in prop::collection::vec(-10.0..10.0f64, 0..5),
        b in prop::collection::vec(-10.0..10.0f64, 0..5),
        c in prop::collection::vec(-10.0..10.0f64, 0..5),
    ) {
        let (ta, tb) = (Trace::new(a.clone()), Trace::new(b.clone()));
        prop_assert_eq!(ta.concat(&b).concat(&c), ta.concat(&tb.concat(&c)));
        prop_assert_eq!(ta.concat(&[]), ta.clone());
        prop_assert_eq!(Trace::empty().concat(&a), ta);
    }

    #[test]
    fn weights_multiply(a in 0.0..4.0f64, b in 0.0..4.0f64) {
        let (wa, wb) = (Weight::from_linear(a), Weight::from_linear(b));
        prop_assert!(weights_close((wa * wb).ln(), (a * b).ln(), 1e-12));
        prop_assert_eq!(wa * Weight::ONE, wa);
        prop_assert!((wa * Weight::ZERO).is_zero());
    }

    #[test]
    fn samples_have_positive_density(mean in -100.0..100.0f64, var in 1e-6..1e4f64, seed in any::<u64>()) {
        let reg = Registry::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (gauss, rnd) = (reg.dist_by_name(GAUSSIAN).unwrap().id.clone(), reg.dist_by_name(RND).unwrap().id.clone());
        for _ in 0..100 {
            let g = reg.sample(&gauss, &[mean, var], &mut rng).unwrap();
            prop_assert!(reg.pdf(&gauss, &[mean, var], g).unwrap() > 0.0);
            let u = reg.sample(&rnd, &[], &mut rng).unwrap();
            prop_assert!(reg.pdf(&rnd, &[], u).unwrap() > 0.0);
        }
    }

    #[test]
    fn trace_density_matches_the_machine(seed in any::<u64>()) {
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg).with_fuel(CHECK_FUEL);
        let (term, trace, _) = generated(seed);
        assert_verdict(check::density_matches_machine(&ev, &term, &trace).unwrap())?;
    }
}

#[test]
fn pdf_of_samples_is_positive_over_ten_thousand_draws() {
    let reg = Registry::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (name, params) in
        [(RND, vec![]), (GAUSSIAN, vec![0.0, 1.0]), (GAUSSIAN, vec![3.0, 1e-4]), (GAUSSIAN, vec![-2.0, 50.0])]
    {
        let id = reg.dist_by_name(name).unwrap().id.clone();
        for _ in 0..10_000 {
            let x = reg.sample(&id, &params, &mut rng).unwrap();
            assert!(reg.pdf(&id, &params, x).unwrap() > 0.0, "{name}{params:?} at {x}");
        }
    }
}

#[test]
fn gaussian_sampler_fits_its_density() {
    let reg = Registry::standard();
    let id = reg.dist_by_name(GAUSSIAN).unwrap().id.clone();
    let (mean, var) = (1.5f64, 4.0f64);
    let normal = Normal::new(mean, var.sqrt()).unwrap();
    let bins = 20;
    let edge = |i: usize| mean + var.sqrt() * (-3.0 + 6.0 * i as f64 / bins as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let labels = (0..20_000).map(|_| {
        let x = reg.sample(&id, &[mean, var], &mut rng).unwrap();
        (0..bins).find(|&i| x < edge(i + 1)).unwrap_or(bins) as f64 - if x < edge(0) { 1.0 } else { 0.0 }
    });
    let observed = EmpiricalDist::discrete(labels);
    let mut expected: Vec<(f64, f64)> =
        (0..bins).map(|i| (i as f64, normal.cdf(edge(i + 1)) - normal.cdf(edge(i)))).collect();
    expected.push((-1.0, normal.cdf(edge(0))));
    expected.push((bins as f64, 1.0 - normal.cdf(edge(bins))));
    let r = chi_square_discrete(&observed, &expected).unwrap();
    assert!(r.p_value > 0.001, "{r:?}");
}

/// Runs `steps` MH transitions from an initial state, calling `check` on
/// every non-sink proposal.
fn walk(
    src: &str,
    sigma: f64,
    steps: usize,
    seed: u64,
    mut check: impl FnMut(&Evaluator, &Arc<Term>, &ChainState, &Proposal),
) {
    let reg = Registry::standard();
    let ev = Evaluator::new(&reg);
    let term = model(src, &reg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init_state(&ev, &term, 10_000, &mut rng).unwrap();
    for _ in 0..steps {
        let p = propose(&ev, &term, &state.trace, sigma, &mut rng).unwrap();
        if p.kind != ProposalKind::Sink {
            check(&ev, &term, &state, &p);
        }
        let alpha = acceptance(&state, &p);
        if rng.random::<f64>() < alpha {
            state = ChainState { trace: p.trace.clone(), log_weight: p.log_weight, value: p.value.clone().unwrap() };
        }
    }
}

fn reversed(from: &ChainState, p: &Proposal) -> (ChainState, Proposal) {
    let state = ChainState { trace: p.trace.clone(), log_weight: p.log_weight, value: p.value.clone().unwrap() };
    let back = Proposal {
        trace: from.trace.clone(),
        kind: ProposalKind::Extended,
        log_fwd: p.log_rev,
        log_rev: p.log_fwd,
        log_weight: from.log_weight,
        value: Some(from.value.clone()),
        log_sampling_density: None,
        fuel_exhausted: false,
    };
    (state, back)
}

#[test]
fn detailed_balance_holds_for_every_proposal() {
    for (src, sigma) in [(GEOMETRIC, 1.0), (REGRESSION_SCORE, 0.7), (REGRESSION_FLIP, 0.3)] {
        let mut checked = 0;
        walk(src, sigma, 20_000, 21, |_, _, s, p| {
            if p.log_weight == f64::NEG_INFINITY || p.log_rev == f64::NEG_INFINITY {
                return;
            }
            let (t, back) = reversed(s, p);
            let lhs = s.log_weight + p.log_fwd + acceptance(s, p).ln();
            let rhs = t.log_weight + back.log_fwd + acceptance(&t, &back).ln();
            assert!(weights_close(lhs, rhs, 1e-9), "{lhs} vs {rhs}");
            checked += 1;
        });
        assert!(checked > 100, "only {checked} pairs");
    }
}

#[test]
fn proposal_density_matches_the_sampling_density() {
    for (src, sigma) in [(GEOMETRIC, 1.0), (REGRESSION_SCORE, 0.7), (REGRESSION_FLIP, 0.3)] {
        let (mut extended, mut truncated) = (0, 0);
        walk(src, sigma, 3000, 22, |ev, term, s, p| {
            let sampled = p.log_sampling_density.unwrap();
            let recomputed = proposal_density(ev, term, &s.trace, &p.trace, sigma).unwrap();
            assert!(weights_close(sampled, recomputed, 1e-9), "{sampled} vs {recomputed}");
            assert!(weights_close(p.log_fwd, recomputed, 1e-12));
            match p.kind {
                ProposalKind::Extended => extended += 1,
                _ => truncated += 1,
            }
        });
        assert!(extended > 0, "no extended proposals");
        if src == GEOMETRIC {
            assert!(truncated > 0, "no truncated proposals");
        }
    }
}

#[test]
fn valid_states_of_equal_length_can_reach_each_other() {
    for (src, sigma) in [(GEOMETRIC, 1.0), (REGRESSION_SCORE, 0.7)] {
        let mut states: Vec<ChainState> = Vec::new();
        walk(src, sigma, 4000, 23, |_, _, s, _| {
            if states.last() != Some(s) {
                states.push(s.clone());
            }
        });
        let reg = Registry::standard();
        let ev = Evaluator::new(&reg);
        let term = model(src, &reg);
        let mut pairs = 0;
        for (i, s) in states.iter().enumerate() {
            for t in states[i + 1..].iter().filter(|t| t.trace.len() == s.trace.len()).take(5) {
                let p = Proposal {
                    trace: t.trace.clone(),
                    kind: ProposalKind::Extended,
                    log_fwd: proposal_density(&ev, &term, &s.trace, &t.trace, sigma).unwrap(),
                    log_rev: proposal_density(&ev, &term, &t.trace, &s.trace, sigma).unwrap(),
                    log_weight: t.log_weight,
                    value: Some(t.value.clone()),
                    log_sampling_density: None,
                    fuel_exhausted: false,
                };
                assert!(acceptance(s, &p) > 0.0, "{} -> {}", s.trace, t.trace);
                pairs += 1;
            }
        }
        assert!(pairs > 50, "only {pairs} pairs");
    }
}

#[test]
fn tiny_steps_are_almost_always_accepted() {
    for src in [GEOMETRIC, REGRESSION_FLIP, REGRESSION_SCORE] {
        let (mut n, mut alpha_sum, mut moved) = (0, 0.0, 0.0f64);
        walk(src, 1e-12, 2000, 24, |_, _, s, p| {
            n += 1;
            alpha_sum += acceptance(s, p);
            for (a, b) in s.trace.iter().zip(p.trace.iter()) {
                moved = moved.max((a - b).abs());
            }
        });
        assert!(n > 0);
        assert!(alpha_sum / n as f64 >= 0.999, "mean α {}", alpha_sum / n as f64);
        assert!(moved <= 1e-9, "moved {moved}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn tv_is_a_metric(
        a in prop::collection::vec(-3.0..3.0f64, 30..200),
        b in prop::collection::vec(-3.0..3.0f64, 30..200),
        c in prop::collection::vec(-3.0..3.0f64, 30..200),
    ) {
        let (da, db, dc) = (
            EmpiricalDist::continuous(a).unwrap(),
            EmpiricalDist::continuous(b).unwrap(),
            EmpiricalDist::continuous(c).unwrap(),
        );
        let bins = Binning::equal_probability(&[&da, &db, &dc], 10);
        let ab = tv_binned(&da, &db, &bins);
        prop_assert_eq!(ab, tv_binned(&db, &da, &bins));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!(ab <= tv_binned(&da, &dc, &bins) + tv_binned(&dc, &db, &bins) + 1e-12);
        prop_assert_eq!(tv_binned(&da, &da, &bins), 0.0);
    }

    #[test]
    fn chi_square_ignores_category_labels(
        weights in prop::collection::vec(0.05..1.0f64, 2..12),
        seed in any::<u64>(),
        shift in -50.0..50.0f64,
    ) {
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draws: Vec<usize> = (0..400)
            .map(|_| {
                let mut u: f64 = rng.random();
                probs.iter().position(|&p| { u -= p; u < 0.0 }).unwrap_or(probs.len() - 1)
            })
            .collect();
        let relabel = |i: usize| shift - 3.0 * i as f64;
        let plain = chi_square_discrete(
            &EmpiricalDist::discrete(draws.iter().map(|&i| i as f64)),
            &probs.iter().enumerate().map(|(i, &p)| (i as f64, p)).collect::<Vec<_>>(),
        ).unwrap();
        let moved = chi_square_discrete(
            &EmpiricalDist::discrete(draws.iter().map(|&i| relabel(i))),
            &probs.iter().enumerate().map(|(i, &p)| (relabel(i), p)).collect::<Vec<_>>(),
        ).unwrap();
        prop_assert!((plain.statistic - moved.statistic).abs() <= 1e-9 * plain.statistic.max(1.0));
        prop_assert_eq!(plain.df, moved.df);
    }
}
