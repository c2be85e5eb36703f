//! The synthesis loop: train, freeze, verify, enrich, repeat.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certificates::{
    conditions, constraint_groups, gaussian_neighbours, regions, CandidateExprs, Condition, ConstraintGroup, OriginExclusion,
};
use crate::config::{CegisConfig, ConfigError};
use crate::expr::Expr;
use crate::learner::{secs, train, Candidate, Dataset, TrainOutcome};
use crate::models::DynamicalModel;
use crate::nnet::{Network, NetworkDump};
use crate::verifier::{verify_groups, GroupResult, SolverBackend, SolverKind, Verdict, VerifyOptions};

/// Neighbours added around every counterexample.
pub const ENRICH_NEIGHBOURS: usize = 50;
/// Their standard deviation, relative to the region's characteristic radius.
pub const ENRICH_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    /// Every constraint group was proven unsatisfiable.
    Valid,
    BudgetExhausted,
    Error,
    /// Trained but never verified.
    Unverified,
    /// A supplied certificate has a counterexample.
    Falsified,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Valid => "VALID",
            Status::BudgetExhausted => "BUDGET_EXHAUSTED",
            Status::Error => "ERROR",
            Status::Unverified => "UNVERIFIED",
            Status::Falsified => "FALSIFIED",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub iteration: usize,
    pub group: String,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Absent when training was skipped.
    pub training: Option<TrainOutcome>,
    pub verdicts: Vec<GroupResult>,
    #[serde(with = "secs")]
    pub verify_time: Duration,
    /// Points added to the data after this iteration.
    pub added: usize,
    /// Region sizes the iteration trained on.
    pub dataset: BTreeMap<String, usize>,
    /// The candidate this iteration verified.
    #[serde(default)]
    pub candidate: CandidateText,
}

/// A candidate in printed form, as reported.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateText {
    pub certificate: BTreeMap<String, String>,
    pub controller: Option<Vec<String>>,
    #[serde(default)]
    pub levels: BTreeMap<String, f64>,
}

impl CandidateText {
    fn new(kind_names: (&str, Option<&str>), exprs: &CandidateExprs) -> Self {
        let mut certificate = BTreeMap::new();
        if let Some(v) = &exprs.primary {
            certificate.insert(kind_names.0.to_string(), v.print_infix());
        }
        if let (Some(name), Some(w)) = (kind_names.1, &exprs.secondary) {
            certificate.insert(name.to_string(), w.print_infix());
        }
        CandidateText {
            certificate,
            controller: exprs.controller.as_ref().map(|c| c.iter().map(Expr::print_infix).collect()),
            levels: exprs.levels.clone(),
        }
    }

    /// Parses the printed expressions back.
    pub fn exprs(&self, cfg: &CegisConfig) -> Result<CandidateExprs, ConfigError> {
        let n = cfg.model.n_vars();
        let parse = |key: &str, s: &str| Expr::parse(s, n, 0).map_err(|e| ConfigError { key: key.into(), reason: e.to_string() });
        let (p, s) = cfg.kind.function_names();
        let primary = self.certificate.get(p).map(|e| parse(p, e)).transpose()?;
        let secondary = s.and_then(|s| self.certificate.get(s).map(|e| parse(s, e))).transpose()?;
        let controller = self
            .controller
            .as_ref()
            .map(|c| c.iter().map(|e| parse("controller", e)).collect::<Result<Vec<_>, _>>())
            .transpose()?;
        Ok(CandidateExprs {
            primary,
            secondary,
            controller,
            levels: self.levels.clone(),
        })
    }
}

impl IterationRecord {
    pub fn loss(&self) -> Option<f64> {
        self.training.as_ref().map(|t| t.evaluation.total())
    }

    /// Everything that must repeat exactly under a fixed seed: losses,
    /// epochs, verdicts and counterexamples, but no wall times.
    pub fn signature(&self) -> String {
        let mut s = format!("#{} ", self.iteration);
        if let Some(t) = &self.training {
            s += &format!("loss={:e} ctrl={:e} epochs={} ", t.evaluation.certificate_loss, t.evaluation.control_loss, t.epochs);
        }
        for v in &self.verdicts {
            s += &format!("{}:{}{:?} ", v.name, v.verdict.label(), v.verdict.points());
        }
        s + &format!("added={} data={:?}", self.added, self.dataset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub total: f64,
    pub learn: f64,
    pub verify: f64,
}

/// Outcome of a run, as written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CegisReport {
    pub status: Status,
    pub iterations: usize,
    /// Function name (`V`, `B`, `W`) → infix expression.
    pub certificate: BTreeMap<String, String>,
    /// Controller outputs `u0..`, when the model has inputs.
    pub controller: Option<Vec<String>>,
    /// The autonomous field the certificate was checked against.
    #[serde(default)]
    pub closed_loop: Option<Vec<String>>,
    #[serde(default)]
    pub levels: BTreeMap<String, f64>,
    pub timings: Timings,
    pub counterexamples: Vec<Counterexample>,
    #[serde(default)]
    pub trace: Vec<IterationRecord>,
    /// Trained weights (empty for verification-only runs).
    #[serde(default)]
    pub networks: BTreeMap<String, NetworkDump>,
    /// Independent re-verification of a VALID result, per backend.
    #[serde(default)]
    pub recheck: BTreeMap<String, Vec<GroupResult>>,
    #[serde(default)]
    pub error: Option<String>,
}

impl CegisReport {
    fn empty() -> Self {
        CegisReport {
            status: Status::BudgetExhausted,
            iterations: 0,
            certificate: BTreeMap::new(),
            controller: None,
            closed_loop: None,
            levels: BTreeMap::new(),
            timings: Timings::default(),
            counterexamples: Vec::new(),
            trace: Vec::new(),
            networks: BTreeMap::new(),
            recheck: BTreeMap::new(),
            error: None,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.status == Status::Valid
    }

    fn fail(&mut self, msg: impl ToString) {
        self.status = Status::Error;
        self.error = Some(msg.to_string());
    }

    fn record_candidate(&mut self, kind_names: (&str, Option<&str>), exprs: &CandidateExprs, model: &DynamicalModel) {
        let text = CandidateText::new(kind_names, exprs);
        self.certificate = text.certificate;
        self.controller = text.controller;
        self.closed_loop = exprs
            .closed_model(model)
            .ok()
            .filter(|_| !model.is_autonomous())
            .map(|m| m.field().components.iter().map(Expr::print_infix).collect());
        self.levels = text.levels;
    }

    /// The reported expressions, parsed back from their printed form.
    pub fn candidate_exprs(&self, cfg: &CegisConfig) -> Result<CandidateExprs, ConfigError> {
        CandidateText {
            certificate: self.certificate.clone(),
            controller: self.controller.clone(),
            levels: self.levels.clone(),
        }
        .exprs(cfg)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(path, text + "\n")
    }
}

/// Fresh networks for a configuration.
pub fn initial_candidate(cfg: &CegisConfig) -> Result<Candidate, String> {
    let n = cfg.model.n_vars();
    let kind = cfg.kind;
    // stability-type certificates must vanish at the origin; the others get
    // a bias so their zero level can move
    let primary_shape = cfg.certificate.shape(n, 1, !kind.primary_is_stability());
    let primary = Network::init(primary_shape, kind.levels(), cfg.seed).map_err(|e| e.to_string())?;
    let secondary = cfg
        .secondary
        .as_ref()
        .map(|s| Network::init(s.shape(n, 1, true), &[], cfg.seed.wrapping_add(1)))
        .transpose()
        .map_err(|e| e.to_string())?;
    // no bias: u(0) = 0 keeps the origin an equilibrium
    let controller = cfg
        .controller
        .as_ref()
        .map(|c| Network::init(c.shape(n, cfg.model.n_inputs(), false), &[], cfg.seed.wrapping_add(2)))
        .transpose()
        .map_err(|e| e.to_string())?;
    Ok(Candidate {
        primary,
        secondary,
        controller,
    })
}

fn origin_exclusion(backend: &SolverBackend) -> OriginExclusion {
    match backend.kind {
        SolverKind::DReal => OriginExclusion::Domain,
        _ => OriginExclusion::Disjunction,
    }
}

/// Counterexample plus Gaussian neighbours that stay inside the region of
/// the violated condition.
pub fn enrich(data: &mut Dataset, cond: &Condition, point: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let region = &cond.region;
    let sigma = ENRICH_SIGMA * region.characteristic_radius();
    let mut batch = vec![point.to_vec()];
    batch.extend(
        gaussian_neighbours(point, sigma, ENRICH_NEIGHBOURS, rng)
            .into_iter()
            .filter(|p| region.contains_within(p, 0.0)),
    );
    let added = batch.len();
    data.push(&region.label, batch);
    added
}

struct RunDir(Option<PathBuf>);

impl RunDir {
    fn create(dir: Option<&Path>) -> std::io::Result<RunDir> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(RunDir(dir.map(Path::to_path_buf)))
    }

    fn sub(&self, name: &str) -> Option<PathBuf> {
        self.0.as_ref().map(|d| d.join(name))
    }

    fn write_config(&self, cfg: &CegisConfig) -> std::io::Result<()> {
        match &self.0 {
            Some(d) => fs::write(d.join("config.yaml"), cfg.to_yaml_string()),
            None => Ok(()),
        }
    }

    fn finish(&self, report: &CegisReport) {
        if let Some(d) = &self.0 {
            if let Err(e) = report.write(&d.join("report.json")) {
                warn!("cannot write report: {e}");
            }
        }
    }
}

fn verify_options(log_dir: Option<PathBuf>) -> VerifyOptions {
    VerifyOptions {
        short_circuit: false,
        pool: 0,
        log_dir,
        prefix: String::new(),
    }
}

/// Runs the full loop. Problems are recorded in the report, never returned.
pub fn synthesise(cfg: &CegisConfig, run_dir: Option<&Path>) -> CegisReport {
    let start = Instant::now();
    let mut report = CegisReport::empty();
    let finish = |mut report: CegisReport, dir: &RunDir| {
        report.timings.total = start.elapsed().as_secs_f64();
        dir.finish(&report);
        report
    };
    let dir = match RunDir::create(run_dir) {
        Ok(d) => d,
        Err(e) => {
            report.fail(format!("cannot create run directory: {e}"));
            return finish(report, &RunDir(None));
        }
    };
    if let Err(e) = dir.write_config(cfg) {
        report.fail(format!("cannot write config snapshot: {e}"));
        return finish(report, &dir);
    }
    if let Err(e) = run_loop(cfg, &dir, &mut report) {
        report.fail(e);
    }
    finish(report, &dir)
}

fn run_loop(cfg: &CegisConfig, dir: &RunDir, report: &mut CegisReport) -> Result<(), String> {
    if cfg.max_iterations > 0 && !cfg.backend.is_available() {
        return Err(format!("{} solver not found at {}", cfg.backend.kind.name(), cfg.backend.executable.display()));
    }
    let conds = conditions(cfg.kind, cfg.model.time_domain(), &cfg.sets).map_err(|e| e.to_string())?;
    let mut data = Dataset::sample(&regions(&conds), &cfg.n_data, cfg.seed).map_err(|e| e.to_string())?;
    let mut cand = initial_candidate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_CE61);
    let origin = origin_exclusion(&cfg.backend);
    let n = cfg.model.n_vars();

    for iteration in 1..=cfg.max_iterations {
        report.iterations = iteration;
        let dataset = data.sizes();
        let outcome = train(&mut cand, &conds, &data, &cfg.model, &cfg.train).map_err(|e| format!("iteration {iteration}: {e}"))?;
        report.timings.learn += outcome.learn_time.as_secs_f64();
        let exprs = cand.freeze().map_err(|e| e.to_string())?;
        report.record_candidate(cfg.kind.function_names(), &exprs, &cfg.model);
        report.networks = network_dumps(cfg, &cand);

        let groups = constraint_groups(&conds, &exprs, &cfg.model, origin).map_err(|e| e.to_string())?;
        let t = Instant::now();
        let log_dir = dir.sub(&format!("iter_{iteration:03}"));
        let results = verify_groups(&groups, n, &cfg.backend, &verify_options(log_dir)).map_err(|e| e.to_string())?;
        let verify_time = t.elapsed();
        report.timings.verify += verify_time.as_secs_f64();

        let mut added = 0;
        for (g, r) in groups.iter().zip(&results) {
            match &r.verdict {
                Verdict::Unsat => {}
                Verdict::Sat(points) | Verdict::DeltaSat(points) => {
                    let cond = &conds[g.condition];
                    for p in points {
                        report.counterexamples.push(Counterexample {
                            iteration,
                            group: g.name.clone(),
                            point: p.clone(),
                        });
                        if !cond.is_data_free() {
                            added += enrich(&mut data, cond, p, &mut rng);
                        }
                    }
                }
                other => warn!("iteration {iteration}: group {} gave {}; continuing on existing data", g.name, other.label()),
            }
        }
        let loss = outcome.evaluation.total();
        let all_unsat = results.iter().all(|r| r.verdict.is_unsat());
        info!(
            "iteration {iteration}: loss {loss:.4e}, {}",
            results.iter().map(|r| format!("{} {}", r.name, r.verdict.label())).collect::<Vec<_>>().join(", ")
        );
        report.trace.push(IterationRecord {
            iteration,
            training: Some(outcome),
            verdicts: results,
            verify_time,
            added,
            dataset,
            candidate: CandidateText::new(cfg.kind.function_names(), &exprs),
        });
        if all_unsat {
            report.status = Status::Valid;
            soundness_recheck(cfg, dir, report);
            return Ok(());
        }
    }
    report.status = Status::BudgetExhausted;
    Ok(())
}

fn network_dumps(cfg: &CegisConfig, cand: &Candidate) -> BTreeMap<String, NetworkDump> {
    let (p, s) = cfg.kind.function_names();
    let mut out = BTreeMap::from([(p.to_string(), cand.primary.dump())]);
    if let (Some(s), Some(net)) = (s, &cand.secondary) {
        out.insert(s.to_string(), net.dump());
    }
    if let Some(c) = &cand.controller {
        out.insert("controller".into(), c.dump());
    }
    out
}

/// Re-verifies a VALID report from its printed expressions in fresh solver
/// processes: on the configured backend, and also on the other polynomial
/// backend when that one is installed.
fn soundness_recheck(cfg: &CegisConfig, dir: &RunDir, report: &mut CegisReport) {
    let mut backends = vec![cfg.backend.clone()];
    if let Some(alt) = cfg.backend.kind.alternative() {
        let mut other = SolverBackend::new(alt);
        other.timeout = cfg.backend.timeout;
        if other.is_available() {
            backends.push(other);
        }
    }
    for (k, backend) in backends.iter().enumerate() {
        let label = backend.kind.name().to_string();
        let results = match recheck_groups(cfg, report, backend, dir.sub(&format!("recheck_{}", label.to_lowercase()))) {
            Ok(r) => r,
            Err(e) => {
                report.fail(format!("soundness recheck on {label}: {e}"));
                return;
            }
        };
        let refuted = results.iter().find(|r| !r.verdict.points().is_empty());
        let undecided = results.iter().find(|r| !r.verdict.is_unsat());
        match (refuted, undecided, k) {
            (Some(r), _, _) => {
                let msg = format!("soundness recheck on {label}: group {} is {}", r.name, r.verdict.label());
                report.recheck.insert(label, results);
                report.fail(msg);
                return;
            }
            (None, Some(r), 0) => {
                let msg = format!("soundness recheck on {label}: group {} is {}", r.name, r.verdict.label());
                report.recheck.insert(label, results);
                report.fail(msg);
                return;
            }
            (None, Some(r), _) => {
                // the second opinion could not decide; only a model refutes
                warn!("recheck on {label}: group {} is {}, inconclusive", r.name, r.verdict.label());
            }
            _ => {}
        }
        report.recheck.insert(label, results);
    }
}

fn recheck_groups(
    cfg: &CegisConfig,
    report: &CegisReport,
    backend: &SolverBackend,
    log_dir: Option<PathBuf>,
) -> Result<Vec<GroupResult>, String> {
    let exprs = report.candidate_exprs(cfg).map_err(|e| e.to_string())?;
    let groups = groups_for(cfg, &exprs, backend)?;
    verify_groups(&groups, cfg.model.n_vars(), backend, &verify_options(log_dir)).map_err(|e| e.to_string())
}

/// Constraint groups of `exprs` under the configured backend.
pub fn groups_for_config(cfg: &CegisConfig, exprs: &CandidateExprs) -> Result<Vec<ConstraintGroup>, String> {
    groups_for(cfg, exprs, &cfg.backend)
}

fn groups_for(cfg: &CegisConfig, exprs: &CandidateExprs, backend: &SolverBackend) -> Result<Vec<ConstraintGroup>, String> {
    let conds = conditions(cfg.kind, cfg.model.time_domain(), &cfg.sets).map_err(|e| e.to_string())?;
    constraint_groups(&conds, exprs, &cfg.model, origin_exclusion(backend)).map_err(|e| e.to_string())
}

/// Checks a user-supplied certificate without training. VALID when every
/// group is UNSAT, FALSIFIED when some group has a counterexample, ERROR
/// when a group stayed undecided.
pub fn verify_only(cfg: &CegisConfig, exprs: &CandidateExprs, run_dir: Option<&Path>) -> CegisReport {
    let start = Instant::now();
    let mut report = CegisReport::empty();
    let dir = RunDir::create(run_dir).unwrap_or(RunDir(None));
    let _ = dir.write_config(cfg);
    report.record_candidate(cfg.kind.function_names(), exprs, &cfg.model);
    let outcome = groups_for(cfg, exprs, &cfg.backend).and_then(|groups| {
        let t = Instant::now();
        let results = verify_groups(&groups, cfg.model.n_vars(), &cfg.backend, &verify_options(dir.sub("iter_001")))
            .map_err(|e| e.to_string())?;
        Ok((results, t.elapsed()))
    });
    match outcome {
        Err(e) => report.fail(e),
        Ok((results, verify_time)) => {
            report.iterations = 1;
            report.timings.verify = verify_time.as_secs_f64();
            for r in &results {
                for p in r.verdict.points() {
                    report.counterexamples.push(Counterexample {
                        iteration: 1,
                        group: r.name.clone(),
                        point: p.clone(),
                    });
                }
            }
            report.status = if results.iter().all(|r| r.verdict.is_unsat()) {
                Status::Valid
            } else if results.iter().any(|r| matches!(r.verdict, Verdict::Sat(_) | Verdict::DeltaSat(_))) {
                Status::Falsified
            } else {
                let r = results.iter().find(|r| !r.verdict.is_unsat()).expect("some group undecided");
                report.error = Some(format!("group {} is {}", r.name, r.verdict.label()));
                Status::Error
            };
            report.trace.push(IterationRecord {
                iteration: 1,
                training: None,
                verdicts: results,
                verify_time,
                added: 0,
                dataset: BTreeMap::new(),
                candidate: CandidateText::new(cfg.kind.function_names(), exprs),
            });
        }
    }
    report.timings.total = start.elapsed().as_secs_f64();
    dir.finish(&report);
    report
}

/// One training pass, reported UNVERIFIED.
pub fn learn_only(cfg: &CegisConfig, run_dir: Option<&Path>) -> CegisReport {
    let start = Instant::now();
    let mut report = CegisReport::empty();
    let dir = RunDir::create(run_dir).unwrap_or(RunDir(None));
    let _ = dir.write_config(cfg);
    let outcome = (|| -> Result<(), String> {
        let conds = conditions(cfg.kind, cfg.model.time_domain(), &cfg.sets).map_err(|e| e.to_string())?;
        let data = Dataset::sample(&regions(&conds), &cfg.n_data, cfg.seed).map_err(|e| e.to_string())?;
        let mut cand = initial_candidate(cfg)?;
        let dataset = data.sizes();
        let outcome = train(&mut cand, &conds, &data, &cfg.model, &cfg.train).map_err(|e| e.to_string())?;
        report.timings.learn = outcome.learn_time.as_secs_f64();
        let exprs = cand.freeze().map_err(|e| e.to_string())?;
        report.record_candidate(cfg.kind.function_names(), &exprs, &cfg.model);
        report.networks = network_dumps(cfg, &cand);
        report.iterations = 1;
        report.trace.push(IterationRecord {
            iteration: 1,
            training: Some(outcome),
            verdicts: Vec::new(),
            verify_time: Duration::ZERO,
            added: 0,
            dataset,
            candidate: CandidateText::new(cfg.kind.function_names(), &exprs),
        });
        Ok(())
    })();
    match outcome {
        Ok(()) => report.status = Status::Unverified,
        Err(e) => report.fail(e),
    }
    report.timings.total = start.elapsed().as_secs_f64();
    dir.finish(&report);
    report
}

/// Parses a certificate file for [`verify_only`]: one `name = expression`
/// per line, with names `V`/`B`/`W` (as the kind requires), `u0..` for the
/// controller and level names such as `beta`. `#` starts a comment.
pub fn parse_certificate(text: &str, cfg: &CegisConfig) -> Result<CandidateExprs, ConfigError> {
    let n = cfg.model.n_vars();
    let m = cfg.model.n_inputs();
    let bad = |reason: String| ConfigError {
        key: "certificate".into(),
        reason,
    };
    let (p, s) = cfg.kind.function_names();
    let mut out = CandidateExprs::default();
    let mut controller: BTreeMap<usize, Expr> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (name, rhs) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("line {}: expected `name = expression`", lineno + 1)))?;
        let (name, rhs) = (name.trim(), rhs.trim());
        let expr = || Expr::parse(rhs, n, 0).map_err(|e| bad(format!("line {}: {e}", lineno + 1)));
        if name == p {
            out.primary = Some(expr()?);
        } else if Some(name) == s {
            out.secondary = Some(expr()?);
        } else if let Some(k) = name.strip_prefix('u').and_then(|k| k.parse::<usize>().ok()) {
            if k >= m {
                return Err(bad(format!("line {}: the model has {m} inputs", lineno + 1)));
            }
            controller.insert(k, expr()?);
        } else if cfg.kind.levels().contains(&name) {
            let v = rhs.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?;
            out.levels.insert(name.to_string(), v);
        } else {
            return Err(bad(format!("line {}: unknown name `{name}` for {}", lineno + 1, cfg.kind)));
        }
    }
    if out.primary.is_none() {
        return Err(bad(format!("missing `{p} = ...`")));
    }
    if let Some(s) = s {
        if out.secondary.is_none() {
            return Err(bad(format!("missing `{s} = ...`")));
        }
    }
    if m > 0 {
        if controller.len() != m {
            return Err(bad(format!("the model needs u0..u{} to be given", m - 1)));
        }
        out.controller = Some(controller.into_values().collect());
    }
    for level in cfg.kind.levels() {
        if !out.levels.contains_key(*level) {
            return Err(bad(format!("missing `{level} = ...`")));
        }
    }
    Ok(out)
}

/// Largest deviation between the reported closed-loop field and the open
/// model driven by the trained controller network, over `count` points of
/// XD. `None` when the report has no controller.
pub fn closed_loop_coherence(cfg: &CegisConfig, report: &CegisReport, count: usize, seed: u64) -> Result<Option<f64>, String> {
    let (Some(closed), Some(dump)) = (&report.closed_loop, report.networks.get("controller")) else {
        return Ok(None);
    };
    let n = cfg.model.n_vars();
    let closed = closed
        .iter()
        .map(|s| Expr::parse(s, n, 0).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    let net = Network::from_dump(dump).map_err(|e| e.to_string())?;
    let xd = cfg.sets.get(crate::certificates::Role::XD).ok_or("no XD")?;
    let mut worst: f64 = 0.0;
    for x in xd.sample(count, seed).map_err(|e| e.to_string())? {
        let u = net.forward(&x);
        let numeric = cfg.model.eval(&x, &u).map_err(|e| e.to_string())?;
        for (c, v) in closed.iter().zip(&numeric) {
            let s = c.eval(&x, &[]).map_err(|e| e.to_string())?;
            worst = worst.max((s - v).abs() / v.abs().max(1.0));
        }
    }
    Ok(Some(worst))
}
