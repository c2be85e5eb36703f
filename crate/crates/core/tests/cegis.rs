//! End-to-end runs on the suite configs.

use std::path::{Path, PathBuf};

use certsynth_core::cegis::{closed_loop_coherence, groups_for_config};
use certsynth_core::{synthesise, CegisConfig, SolverBackend, SolverKind, Status};

fn suite(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../suite").join(name)
}

fn load(name: &str) -> Option<CegisConfig> {
    if !SolverBackend::new(SolverKind::Z3).is_available() {
        eprintln!("skipped: z3 is not installed");
        return None;
    }
    Some(CegisConfig::load(suite(name)).unwrap())
}

#[test]
fn seeded_runs_repeat_exactly() {
    for name in ["discrete_half.yaml", "rwa_linear.yaml"] {
        let Some(mut cfg) = load(name) else { return };
        cfg.seed = 3;
        cfg.max_iterations = 4;
        let a = synthesise(&cfg, None);
        let b = synthesise(&cfg, None);
        let sig = |r: &certsynth_core::CegisReport| r.trace.iter().map(|t| t.signature()).collect::<Vec<_>>();
        assert!(!a.trace.is_empty());
        assert_eq!(sig(&a), sig(&b), "{name}");
        assert_eq!(a.certificate, b.certificate);
        assert_eq!(a.status, b.status);
    }
}

#[test]
fn dataset_only_grows() {
    let Some(mut cfg) = load("rswa_linear.yaml") else { return };
    cfg.seed = 1;
    cfg.max_iterations = 6;
    let report = synthesise(&cfg, None);
    assert!(report.trace.len() >= 2, "needs a falsified iteration");
    for pair in report.trace.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let total = |d: &std::collections::BTreeMap<String, usize>| d.values().sum::<usize>();
        assert_eq!(total(&b.dataset), total(&a.dataset) + a.added);
        for (region, n) in &a.dataset {
            assert!(b.dataset[region] >= *n, "{region} shrank");
        }
    }
}

#[test]
fn every_counterexample_violates_its_candidate() {
    let Some(mut cfg) = load("rar_linear.yaml") else { return };
    cfg.max_iterations = 6;
    let report = synthesise(&cfg, None);
    let tol = cfg.backend.fidelity_tolerance();
    let mut checked = 0;
    for rec in &report.trace {
        let exprs = rec.candidate.exprs(&cfg).unwrap();
        let groups = groups_for_config(&cfg, &exprs).unwrap();
        for (g, r) in groups.iter().zip(&rec.verdicts) {
            assert_eq!(g.name, r.name);
            for p in r.verdict.points() {
                assert!(g.is_witness(p, tol), "iteration {}: {p:?} for {}", rec.iteration, g.name);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
    assert_eq!(checked, report.counterexamples.len());
}

#[test]
fn valid_runs_are_rechecked_and_written() {
    let Some(cfg) = load("control_eq11_z3.yaml") else { return };
    let dir = tempfile::tempdir().unwrap();
    let report = synthesise(&cfg, Some(dir.path()));
    assert_eq!(report.status, Status::Valid, "{:?}", report.error);
    assert!(report.recheck.contains_key("Z3"));
    for results in report.recheck.values() {
        assert!(results.iter().all(|r| r.verdict.is_unsat()));
    }
    let u = report.controller.as_ref().unwrap();
    assert_eq!(u.len(), 1);
    let worst = closed_loop_coherence(&cfg, &report, 1000, 0).unwrap().unwrap();
    assert!(worst <= 1e-9, "{worst}");

    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["status", "iterations", "certificate", "controller", "timings", "counterexamples"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(json["status"], "VALID");
    assert!(dir.path().join("iter_001").is_dir());
    assert!(dir.path().join("recheck_z3").is_dir());
    let snapshot = CegisConfig::load(dir.path().join("config.yaml")).unwrap();
    assert_eq!(snapshot, cfg);
}
