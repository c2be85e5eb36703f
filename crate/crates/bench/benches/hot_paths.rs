use certsynth_core::certificates::{conditions, constraint_groups, CandidateExprs, OriginExclusion};
use certsynth_core::domains::Domain;
use certsynth_core::nnet::NetworkShape;
use certsynth_core::verifier::emit_script;
use certsynth_core::{Activation, CegisConfig, Expr, Network, SolverKind};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

const LISTING_1: &str = "\
SYSTEM: [x1 - x0**3, -x0]
CERTIFICATE: Lyapunov
DOMAINS:
  XD: Sphere([0,0], 1.0)
N_HIDDEN_NEURONS: [5]
ACTIVATION: [SQUARE]
VERIFIER: Z3
";

fn points(n: usize) -> Vec<Vec<f64>> {
    Domain::sphere(vec![0.0, 0.0], 1.0).unwrap().sample(n, 7).unwrap()
}

fn expr_eval(c: &mut Criterion) {
    let e = Expr::parse("u1 + (0.73575*sin(x0) - 0.1*x1) / (0.0375)", 2, 2).unwrap();
    let xs = points(1000);
    let us = vec![vec![0.1, -0.2]; xs.len()];
    c.bench_function("expr eval_batch 1000 pendulum", |b| b.iter(|| e.eval_batch(black_box(&xs), black_box(&us)).unwrap()));
    let d = e.differentiate(0);
    c.bench_function("expr differentiate pendulum", |b| b.iter(|| black_box(&e).differentiate(0)));
    c.bench_function("expr print+parse derivative", |b| {
        b.iter(|| Expr::parse(&black_box(&d).print_infix(), 2, 2).unwrap())
    });
}

fn nnet_forward(c: &mut Criterion) {
    let shape = NetworkShape::new(2, vec![6, 6], vec![Activation::Sigmoid, Activation::SQUARE], 1, true).unwrap();
    let net = Network::init(shape, &[], 3).unwrap();
    let xs = points(1000);
    c.bench_function("nnet forward_with_gradient 1000 [6,6]", |b| b.iter(|| net.forward_with_gradient(black_box(&xs))));
    c.bench_function("nnet to_state_expression [6,6]", |b| b.iter(|| black_box(&net).to_state_expression().unwrap()));
}

fn smt_emission(c: &mut Criterion) {
    let cfg: CegisConfig = LISTING_1.parse().unwrap();
    let conds = conditions(cfg.kind, cfg.model.time_domain(), &cfg.sets).unwrap();
    let shape = NetworkShape::new(2, vec![5], vec![Activation::SQUARE], 1, false).unwrap();
    let v = Network::init(shape, &[], 1).unwrap().to_state_expression().unwrap().remove(0);
    let cand = CandidateExprs {
        primary: Some(v),
        ..Default::default()
    };
    c.bench_function("constraint groups + emission, Lyapunov [5]", |b| {
        b.iter(|| {
            let groups = constraint_groups(&conds, black_box(&cand), &cfg.model, OriginExclusion::Disjunction).unwrap();
            groups.iter().map(|g| emit_script(g, 2, SolverKind::Z3).len()).sum::<usize>()
        })
    });
}

criterion_group!(benches, expr_eval, nnet_forward, smt_emission);
criterion_main!(benches);
