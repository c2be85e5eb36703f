use std::sync::Arc;

use certsynth_core::certificates::{constraint_groups, conditions, CandidateExprs, OriginExclusion};
use certsynth_core::nnet::NetworkShape;
use certsynth_core::verifier::emit_script;
use certsynth_core::{Activation, CertificateKind, Domain, Expr, Function, Network, Role, SetAssignment, SolverKind, TimeDomain};
use certsynth_core::{DynamicalModel, Formula, Relation};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finite_const() -> impl Strategy<Value = f64> {
    prop_oneof![
        -10.0..10.0f64,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(1.0),
        Just(-1.0),
    ]
}

fn function() -> impl Strategy<Value = Function> {
    proptest::sample::select(Function::ALL.to_vec())
}

/// Raw trees built straight from the enum, so nothing is folded away.
fn raw_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        finite_const().prop_map(Expr::Const),
        (0..3usize).prop_map(Expr::State),
        (0..2usize).prop_map(Expr::Input),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        let bin = (inner.clone(), inner.clone());
        prop_oneof![
            inner.clone().prop_map(|a| Expr::Neg(Arc::new(a))),
            bin.clone().prop_map(|(a, b)| Expr::Add(Arc::new(a), Arc::new(b))),
            bin.clone().prop_map(|(a, b)| Expr::Sub(Arc::new(a), Arc::new(b))),
            bin.clone().prop_map(|(a, b)| Expr::Mul(Arc::new(a), Arc::new(b))),
            bin.prop_map(|(a, b)| Expr::Div(Arc::new(a), Arc::new(b))),
            (inner.clone(), 0..=6u32).prop_map(|(a, k)| Expr::Pow(Arc::new(a), k)),
            (function(), inner).prop_map(|(f, a)| Expr::Call(f, Arc::new(a))),
        ]
    })
}

/// Smooth trees over x0..x2 with moderate values on [-1, 1]³: constants in
/// [-2, 2] and denominators bounded away from zero.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![(-2.0..2.0f64).prop_map(Expr::Const), (0..3usize).prop_map(Expr::State)];
    leaf.prop_recursive(4, 24, 2, |inner| {
        let bin = (inner.clone(), inner.clone());
        prop_oneof![
            inner.clone().prop_map(|a| Expr::Neg(Arc::new(a))),
            bin.clone().prop_map(|(a, b)| Expr::Add(Arc::new(a), Arc::new(b))),
            bin.clone().prop_map(|(a, b)| Expr::Sub(Arc::new(a), Arc::new(b))),
            bin.clone().prop_map(|(a, b)| Expr::Mul(Arc::new(a), Arc::new(b))),
            bin.prop_map(|(a, b)| {
                let den = Expr::Add(Arc::new(Expr::Const(1.5)), Arc::new(Expr::Pow(Arc::new(b), 2)));
                Expr::Div(Arc::new(a), Arc::new(den))
            }),
            (inner.clone(), 0..=3u32).prop_map(|(a, k)| Expr::Pow(Arc::new(a), k)),
            (function(), inner).prop_map(|(f, a)| Expr::Call(f, Arc::new(a))),
        ]
    })
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Five-point central difference.
fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let at = |d: f64| {
        let mut y = x.to_vec();
        y[i] += d;
        f(&y)
    };
    (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn print_parse_round_trip(e in raw_expr()) {
        let printed = e.print_infix();
        let back = Expr::parse(&printed, 3, 2).map_err(|err| TestCaseError::fail(format!("{printed}: {err}")))?;
        prop_assert_eq!(back, e, "{}", printed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn derivative_matches_finite_difference(e in smooth_expr(), x in prop::array::uniform3(-1.0..1.0f64)) {
        let f = |p: &[f64]| e.eval(p, &[]).unwrap();
        let v = f(&x);
        prop_assume!(v.is_finite() && v.abs() < 1e6);
        for i in 0..3 {
            let d = e.differentiate(i).eval(&x, &[]).unwrap();
            let approx = fd(f, &x, i, 1e-3);
            prop_assume!(approx.is_finite() && d.abs() < 1e6);
            prop_assert!(rel_err(d, approx) <= 1e-5, "d/dx{} of {}: {} vs {}", i, e.print_infix(), d, approx);
        }
    }

    #[test]
    fn network_gradient_matches_finite_difference(
        seed in any::<u64>(),
        widths in prop::collection::vec(1..7usize, 1..3),
        acts in prop::collection::vec(0..5usize, 2),
        bias in any::<bool>(),
        x in prop::array::uniform3(-1.0..1.0f64),
    ) {
        let table = [Activation::Linear, Activation::SQUARE, Activation::Sigmoid, Activation::Tanh, Activation::Softplus];
        let activations: Vec<Activation> = widths.iter().enumerate().map(|(k, _)| table[acts[k]]).collect();
        let shape = NetworkShape::new(3, widths, activations, 2, bias).unwrap();
        let net = Network::init(shape, &[], seed).unwrap();
        let (values, grads) = net.forward_with_gradient(&[x.to_vec()]);
        prop_assert_eq!(&values[0], &net.forward(&x));
        for k in 0..2 {
            for i in 0..3 {
                let approx = fd(|p| net.forward(p)[k], &x, i, 1e-3);
                prop_assert!(rel_err(grads[0][k][i], approx) <= 1e-5, "out {} x{}: {} vs {}", k, i, grads[0][k][i], approx);
            }
        }
        // the unrolled expression differentiates to the same gradient
        let exprs = net.to_state_expression().unwrap();
        for k in 0..2 {
            for i in 0..3 {
                let sym = exprs[k].differentiate(i).eval(&x, &[]).unwrap();
                prop_assert!(rel_err(sym, grads[0][k][i]) <= 1e-9);
            }
        }
    }
}

fn domain_kinds() -> Vec<Domain> {
    let sphere = Domain::sphere(vec![0.5, -0.5], 1.5).unwrap();
    let rect = Domain::rectangle(vec![-1.0, -2.0], vec![2.0, 0.5]).unwrap();
    let torus = Domain::torus(vec![0.0, 0.0], 1.0, 0.1).unwrap();
    let ell = Domain::ellipsoid(vec![0.0, 1.0], vec![2.0, 0.5]).unwrap();
    let diff = Domain::difference(rect.clone(), Domain::sphere(vec![0.0, 0.0], 0.5).unwrap()).unwrap();
    vec![
        sphere.clone(),
        sphere.open(),
        rect.clone(),
        rect.open(),
        torus.clone(),
        torus.open(),
        ell.clone(),
        ell.open(),
        diff,
    ]
}

#[test]
fn samples_satisfy_both_predicates() {
    for d in domain_kinds() {
        let formula = d.membership();
        let points = d.sample(10_000, 7).unwrap();
        assert_eq!(points.len(), 10_000);
        for p in &points {
            assert!(d.contains(p), "{d}: {p:?}");
            assert!(formula.holds(p, &[]).unwrap(), "{d}: {p:?}");
        }
        assert_eq!(points, d.sample(10_000, 7).unwrap(), "{d}: sampling is seeded");
    }
}

#[test]
fn predicates_agree_off_the_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for d in domain_kinds() {
        let formula = d.membership();
        let (mut inside, mut outside) = (0, 0);
        for _ in 0..10_000 {
            let p = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let c = d.contains(&p);
            assert_eq!(c, formula.holds(&p, &[]).unwrap(), "{d}: {p:?}");
            if c {
                inside += 1;
            } else {
                outside += 1;
            }
        }
        assert!(inside > 0 && outside > 0, "{d}");
    }
}

#[test]
fn emission_is_byte_identical() {
    let model = DynamicalModel::parse(&["x1 - x0**3", "-x0"], 2, TimeDomain::Continuous).unwrap();
    let sets = SetAssignment::new([(Role::XD, Domain::sphere(vec![0.0, 0.0], 1.0).unwrap())]);
    let conds = conditions(CertificateKind::Lyapunov, TimeDomain::Continuous, &sets).unwrap();
    let shape = NetworkShape::new(2, vec![5], vec![Activation::SQUARE], 1, false).unwrap();
    let build = || {
        let net = Network::init(shape.clone(), &[], 11).unwrap();
        let cand = CandidateExprs {
            primary: Some(net.to_state_expression().unwrap().remove(0)),
            ..Default::default()
        };
        constraint_groups(&conds, &cand, &model, OriginExclusion::Disjunction).unwrap()
    };
    let (a, b) = (build(), build());
    for kind in [SolverKind::Z3, SolverKind::Cvc5, SolverKind::DReal] {
        for (ga, gb) in a.iter().zip(&b) {
            assert_eq!(emit_script(ga, 2, kind), emit_script(gb, 2, kind));
        }
    }
    let f = Formula::atom(Expr::state(0), Relation::Ge, 0.1);
    let g = certsynth_core::certificates::ConstraintGroup {
        name: "g".into(),
        condition: 0,
        formula: f,
    };
    assert_eq!(emit_script(&g, 1, SolverKind::Z3), emit_script(&g.clone(), 1, SolverKind::Z3));
}
