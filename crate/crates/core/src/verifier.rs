//! SMT back end: writes each constraint group as an SMT-LIB 2 script, runs
//! the solver as a subprocess and turns its answer into a verdict with
//! concrete counterexample points.

use std::fmt;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::str::FromStr;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::certificates::ConstraintGroup;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("{solver} cannot decide `{function}` (group {group}); use DREAL for non-polynomial certificates")]
    Capability {
        solver: SolverKind,
        function: String,
        group: String,
    },
    #[error("no constraint groups to verify")]
    NoGroups,
    #[error("cannot write solver files: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SolverKind {
    #[serde(rename = "Z3")]
    Z3,
    #[serde(rename = "CVC5")]
    Cvc5,
    #[serde(rename = "DREAL")]
    DReal,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Z3 => "Z3",
            SolverKind::Cvc5 => "CVC5",
            SolverKind::DReal => "DREAL",
        }
    }

    fn env_var(self) -> &'static str {
        match self {
            SolverKind::Z3 => "FOSSIL_Z3",
            SolverKind::Cvc5 => "FOSSIL_CVC5",
            SolverKind::DReal => "FOSSIL_DREAL",
        }
    }

    fn default_executable(self) -> &'static str {
        match self {
            SolverKind::Z3 => "z3",
            SolverKind::Cvc5 => "cvc5",
            SolverKind::DReal => "dreal",
        }
    }

    /// Z3 and CVC5 only get polynomial arithmetic.
    pub fn is_polynomial_only(self) -> bool {
        self != SolverKind::DReal
    }

    /// The other polynomial back end, used for independent re-checks.
    pub fn alternative(self) -> Option<SolverKind> {
        match self {
            SolverKind::Z3 => Some(SolverKind::Cvc5),
            SolverKind::Cvc5 => Some(SolverKind::Z3),
            SolverKind::DReal => None,
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "Z3" => Ok(SolverKind::Z3),
            "CVC5" => Ok(SolverKind::Cvc5),
            "DREAL" => Ok(SolverKind::DReal),
            other => Err(format!("unknown verifier `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverBackend {
    pub kind: SolverKind,
    pub executable: PathBuf,
    pub timeout: Duration,
    /// dReal precision δ.
    pub delta: f64,
}

impl SolverBackend {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(180);
    pub const DEFAULT_DELTA: f64 = 1e-4;

    /// Executable from the `FOSSIL_*` environment variable, else the plain
    /// command name looked up on `PATH`.
    pub fn new(kind: SolverKind) -> SolverBackend {
        let executable = std::env::var_os(kind.env_var())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(kind.default_executable()));
        SolverBackend {
            kind,
            executable,
            timeout: Self::DEFAULT_TIMEOUT,
            delta: Self::DEFAULT_DELTA,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// The executable can be found (does not try to run it).
    pub fn is_available(&self) -> bool {
        if self.executable.components().count() > 1 {
            return self.executable.is_file();
        }
        std::env::var_os("PATH")
            .map(|paths| std::env::split_paths(&paths).any(|dir| dir.join(&self.executable).is_file()))
            .unwrap_or(false)
    }

    /// Rejects formulas the solver cannot decide.
    pub fn check_capability(&self, group: &ConstraintGroup) -> Result<(), VerifyError> {
        if !self.kind.is_polynomial_only() {
            return Ok(());
        }
        match group.formula.functions().first() {
            None => Ok(()),
            Some(f) => Err(VerifyError::Capability {
                solver: self.kind,
                function: f.name().to_string(),
                group: group.name.clone(),
            }),
        }
    }

    /// Slack tolerance for re-validating counterexamples.
    pub fn fidelity_tolerance(&self) -> f64 {
        match self.kind {
            SolverKind::DReal => self.delta + 1e-6,
            _ => 1e-6,
        }
    }

    fn args(&self, script: &Path) -> Vec<String> {
        let file = script.display().to_string();
        match self.kind {
            SolverKind::Z3 => vec![
                format!("-T:{}", self.timeout.as_secs().max(1)),
                "pp.decimal=true".into(),
                "pp.decimal_precision=40".into(),
                file,
            ],
            SolverKind::Cvc5 => vec![
                "--produce-models".into(),
                format!("--tlimit={}", self.timeout.as_millis().max(1)),
                file,
            ],
            SolverKind::DReal => vec!["--precision".into(), self.delta.to_string(), "--model".into(), file],
        }
    }
}

/// Outcome of one solver query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "detail")]
pub enum Verdict {
    #[serde(rename = "UNSAT")]
    Unsat,
    #[serde(rename = "SAT")]
    Sat(Vec<Vec<f64>>),
    #[serde(rename = "DELTA_SAT")]
    DeltaSat(Vec<Vec<f64>>),
    #[serde(rename = "TIMEOUT")]
    Timeout,
    #[serde(rename = "SOLVER_ERROR")]
    SolverError(String),
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Unsat => "UNSAT",
            Verdict::Sat(_) => "SAT",
            Verdict::DeltaSat(_) => "DELTA_SAT",
            Verdict::Timeout => "TIMEOUT",
            Verdict::SolverError(_) => "SOLVER_ERROR",
        }
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, Verdict::Unsat)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        match self {
            Verdict::Sat(p) | Verdict::DeltaSat(p) => p,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub name: String,
    pub verdict: Verdict,
    #[serde(with = "crate::learner::secs")]
    pub wall_time: Duration,
    /// Model points that failed numeric re-validation and were dropped.
    #[serde(default)]
    pub discarded: usize,
}

/// SMT-LIB script for one group: top-level conjuncts become separate
/// asserts. Byte-identical for identical inputs.
pub fn emit_script(group: &ConstraintGroup, n_vars: usize, kind: SolverKind) -> String {
    let mut s = String::new();
    s.push_str("(set-logic QF_NRA)\n");
    for i in 0..n_vars {
        match kind {
            SolverKind::DReal => s.push_str(&format!("(declare-fun x{i} () Real)\n")),
            _ => s.push_str(&format!("(declare-const x{i} Real)\n")),
        }
    }
    for part in group.formula.conjuncts() {
        s.push_str("(assert ");
        s.push_str(&part.to_smtlib());
        s.push_str(")\n");
    }
    s.push_str("(check-sat)\n(get-model)\n");
    s
}

/// Runs one script; `stem` names the script and transcript files in `dir`.
pub fn run_script(backend: &SolverBackend, script: &str, n_vars: usize, dir: &Path, stem: &str) -> (Verdict, Duration) {
    let start = Instant::now();
    let verdict = run_inner(backend, script, n_vars, dir, stem).unwrap_or_else(Verdict::SolverError);
    (verdict, start.elapsed())
}

fn run_inner(backend: &SolverBackend, script: &str, n_vars: usize, dir: &Path, stem: &str) -> Result<Verdict, String> {
    let script_path = dir.join(format!("{stem}.smt2"));
    let out_path = dir.join(format!("{stem}.out"));
    let err_path = dir.join(format!("{stem}.err"));
    fs::write(&script_path, script).map_err(|e| format!("cannot write {}: {e}", script_path.display()))?;
    let stdout = File::create(&out_path).map_err(|e| e.to_string())?;
    let stderr = File::create(&err_path).map_err(|e| e.to_string())?;
    let mut child = Command::new(&backend.executable)
        .args(backend.args(&script_path))
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(stderr)
        .spawn()
        .map_err(|e| format!("cannot launch {}: {e}", backend.executable.display()))?;
    // the solver's own limit fires first; the kill is the backstop
    let grace = backend.timeout + Duration::from_secs(5);
    let status = match child.wait_timeout(grace).map_err(|e| e.to_string())? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Ok(Verdict::Timeout);
        }
    };
    let out = fs::read_to_string(&out_path).unwrap_or_default();
    let err = fs::read_to_string(&err_path).unwrap_or_default();
    if err.trim().is_empty() {
        let _ = fs::remove_file(&err_path);
    }
    let verdict = parse_output(&out, n_vars);
    Ok(match verdict {
        Verdict::SolverError(msg) => Verdict::SolverError(format!(
            "{msg} (exit {status}){}",
            if err.trim().is_empty() { String::new() } else { format!(": {}", err.trim()) }
        )),
        v => v,
    })
}

/// Classifies solver output and extracts the model.
pub fn parse_output(out: &str, n_vars: usize) -> Verdict {
    let mut lines = out.lines().map(str::trim).filter(|l| !l.is_empty());
    let Some(first) = lines.next() else {
        return Verdict::SolverError("empty solver output".into());
    };
    let rest = &out[out.find(first).unwrap() + first.len()..];
    match first {
        "unsat" => Verdict::Unsat,
        "sat" => match parse_define_funs(rest, n_vars) {
            Ok(p) => Verdict::Sat(vec![p]),
            Err(e) => Verdict::SolverError(format!("cannot parse model: {e}")),
        },
        "timeout" => Verdict::Timeout,
        "unknown" => Verdict::SolverError("solver answered unknown".into()),
        l if l.starts_with("delta-sat") => match parse_intervals(rest, n_vars) {
            Ok(p) => Verdict::DeltaSat(vec![p]),
            Err(e) => Verdict::SolverError(format!("cannot parse dReal model: {e}")),
        },
        other => Verdict::SolverError(format!("unexpected solver output `{other}`")),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn read_sexps(text: &str) -> Result<Vec<Sexp>, String> {
    let chars: Vec<char> = text.chars().collect();
    let mut pos = 0;
    let mut out = Vec::new();
    loop {
        skip_ws(&chars, &mut pos);
        if pos >= chars.len() {
            return Ok(out);
        }
        out.push(read_one(&chars, &mut pos)?);
    }
}

fn skip_ws(chars: &[char], pos: &mut usize) {
    while *pos < chars.len() {
        if chars[*pos].is_whitespace() {
            *pos += 1;
        } else if chars[*pos] == ';' {
            while *pos < chars.len() && chars[*pos] != '\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
}

fn read_one(chars: &[char], pos: &mut usize) -> Result<Sexp, String> {
    skip_ws(chars, pos);
    match chars.get(*pos) {
        None => Err("unexpected end of input".into()),
        Some('(') => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                skip_ws(chars, pos);
                match chars.get(*pos) {
                    None => return Err("unbalanced parenthesis".into()),
                    Some(')') => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    _ => items.push(read_one(chars, pos)?),
                }
            }
        }
        Some(')') => Err("unexpected `)`".into()),
        // cvc5 prints algebraic numbers as `<poly, (lo, hi)>`
        Some('<') => {
            let start = *pos;
            let mut depth = 0;
            while *pos < chars.len() {
                match chars[*pos] {
                    '<' => depth += 1,
                    '>' => {
                        depth -= 1;
                        if depth == 0 {
                            *pos += 1;
                            break;
                        }
                    }
                    _ => {}
                }
                *pos += 1;
            }
            Ok(Sexp::Atom(chars[start..*pos].iter().collect()))
        }
        Some('|') => {
            let start = *pos;
            *pos += 1;
            while *pos < chars.len() && chars[*pos] != '|' {
                *pos += 1;
            }
            *pos += 1;
            Ok(Sexp::Atom(chars[start..(*pos).min(chars.len())].iter().collect()))
        }
        Some(_) => {
            let start = *pos;
            while *pos < chars.len() && !chars[*pos].is_whitespace() && chars[*pos] != '(' && chars[*pos] != ')' {
                *pos += 1;
            }
            Ok(Sexp::Atom(chars[start..*pos].iter().collect()))
        }
    }
}

fn number(atom: &str) -> Result<f64, String> {
    let t = atom.trim().trim_end_matches('?');
    let bad = || format!("not a number: `{atom}`");
    match t.split_once('/') {
        Some((p, q)) => Ok(p.trim().parse::<f64>().map_err(|_| bad())? / q.trim().parse::<f64>().map_err(|_| bad())?),
        None => t.parse::<f64>().map_err(|_| bad()),
    }
}

/// Root of the defining polynomial inside the isolating interval, from text
/// like `<1*x^2 + (-2), (7/5, 3/2)>`; the midpoint when the polynomial
/// cannot be read or does not change sign.
fn algebraic_root(atom: &str) -> Result<f64, String> {
    let open = atom.rfind('(').ok_or_else(|| format!("no isolating interval in `{atom}`"))?;
    let close = atom[open..].find(')').map(|c| c + open).ok_or("unterminated interval")?;
    let inner = &atom[open + 1..close];
    let mut parts = inner.split(',');
    let mut lo = value_text(parts.next().unwrap_or(""))?;
    let mut hi = value_text(parts.next().ok_or("interval needs two bounds")?)?;
    let poly = atom
        .trim_start_matches('<')
        .rsplit_once(", (")
        .and_then(|(p, _)| polynomial(p));
    let Some(poly) = poly else {
        return Ok(0.5 * (lo + hi));
    };
    let eval = |x: f64| poly.iter().fold(0.0, |acc, &(c, k)| acc + c * x.powi(k as i32));
    let (flo, fhi) = (eval(lo), eval(hi));
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Ok(0.5 * (lo + hi));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = eval(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Terms `c*x^k` of a univariate polynomial such as `1*x^2 + (-2)`.
fn polynomial(text: &str) -> Option<Vec<(f64, u32)>> {
    let mut terms = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    let bytes = text.as_bytes();
    let mut pieces = Vec::new();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b'+' if depth == 0 => {
                pieces.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    pieces.push(&text[start..]);
    for piece in pieces {
        let piece = piece.trim();
        let (coef, power) = match piece.split_once('*') {
            Some((c, x)) => (c.trim(), x.trim()),
            None if piece.starts_with('x') => ("1", piece),
            None => (piece, ""),
        };
        let coef = number(coef.trim_start_matches('(').trim_end_matches(')')).ok()?;
        let k = match power {
            "" => 0,
            "x" => 1,
            p => p.strip_prefix("x^")?.parse().ok()?,
        };
        terms.push((coef, k));
    }
    Some(terms)
}

fn value_text(text: &str) -> Result<f64, String> {
    let sexps = read_sexps(text.trim())?;
    match sexps.as_slice() {
        [one] => value(one),
        _ => Err(format!("expected one value, got `{text}`")),
    }
}

fn value(s: &Sexp) -> Result<f64, String> {
    match s {
        Sexp::Atom(a) => number(a),
        Sexp::List(items) => {
            let head = match items.first() {
                Some(Sexp::Atom(h)) => h.as_str(),
                _ => return Err("malformed value".into()),
            };
            let args = &items[1..];
            match (head, args.len()) {
                ("-", 1) => Ok(-value(&args[0])?),
                ("-", _) => {
                    let first = value(&args[0])?;
                    args[1..].iter().try_fold(first, |acc, a| Ok(acc - value(a)?))
                }
                ("+", _) => args.iter().try_fold(0.0, |acc, a| Ok(acc + value(a)?)),
                ("*", _) => args.iter().try_fold(1.0, |acc, a| Ok(acc * value(a)?)),
                ("/", 2) => Ok(value(&args[0])? / value(&args[1])?),
                ("_", _) => match args {
                    [Sexp::Atom(tag), Sexp::Atom(body), ..] if tag == "real_algebraic_number" => algebraic_root(body),
                    _ => Err("unsupported indexed value".into()),
                },
                ("root-obj", _) => Err("algebraic number without decimal approximation".into()),
                _ => Err(format!("unsupported value operator `{head}`")),
            }
        }
    }
}

/// Reads `(define-fun xk () Real v)` entries; unassigned variables are 0.
fn parse_define_funs(text: &str, n_vars: usize) -> Result<Vec<f64>, String> {
    let mut point = vec![0.0; n_vars];
    let mut stack = read_sexps(text)?;
    while let Some(s) = stack.pop() {
        let Sexp::List(items) = s else { continue };
        match items.as_slice() {
            [Sexp::Atom(df), Sexp::Atom(name), Sexp::List(params), _sort, v] if df == "define-fun" && params.is_empty() => {
                if let Some(i) = var_index(name) {
                    if i < n_vars {
                        point[i] = value(v)?;
                    }
                }
            }
            _ => stack.extend(items.into_iter().filter(|i| matches!(i, Sexp::List(_)))),
        }
    }
    Ok(point)
}

fn var_index(name: &str) -> Option<usize> {
    name.trim_matches('|').strip_prefix('x')?.parse().ok()
}

/// Reads dReal's `xk : [lo, hi]` lines and takes midpoints.
fn parse_intervals(text: &str, n_vars: usize) -> Result<Vec<f64>, String> {
    let mut point = vec![0.0; n_vars];
    for line in text.lines() {
        let Some((name, rest)) = line.split_once(':') else { continue };
        let Some(i) = var_index(name.trim()) else { continue };
        if i >= n_vars {
            continue;
        }
        let inner = rest
            .trim()
            .trim_start_matches('[')
            .trim_end_matches(']')
            .trim();
        let mut bounds = inner.split(',').map(str::trim);
        let lo = bounds.next().ok_or("missing lower bound")?;
        let hi = bounds.next().ok_or("missing upper bound")?;
        let parse = |b: &str| -> Result<f64, String> {
            match b {
                "-inf" | "-INFTY" => Ok(f64::NEG_INFINITY),
                "inf" | "+inf" | "INFTY" => Ok(f64::INFINITY),
                _ => number(b),
            }
        };
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        point[i] = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo,
            (false, true) => hi,
            (false, false) => 0.0,
        };
    }
    Ok(point)
}

/// Options for [`verify_groups`].
#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    /// Stop launching new queries once one group is falsified.
    pub short_circuit: bool,
    /// Maximum concurrent solver processes; 0 means one per group.
    pub pool: usize,
    /// Where scripts and transcripts are written; a temporary directory
    /// when unset.
    pub log_dir: Option<PathBuf>,
    /// Prefix for file names inside `log_dir`.
    pub prefix: String,
}

/// Verifies every group. Results keep the order of `groups`.
pub fn verify_groups(
    groups: &[ConstraintGroup],
    n_vars: usize,
    backend: &SolverBackend,
    opts: &VerifyOptions,
) -> Result<Vec<GroupResult>, VerifyError> {
    if groups.is_empty() {
        return Err(VerifyError::NoGroups);
    }
    for g in groups {
        backend.check_capability(g)?;
    }
    let tmp;
    let dir: &Path = match &opts.log_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| VerifyError::Io(e.to_string()))?;
            d
        }
        None => {
            tmp = tempfile::tempdir().map_err(|e| VerifyError::Io(e.to_string()))?;
            tmp.path()
        }
    };
    let pool = if opts.pool == 0 { groups.len() } else { opts.pool };
    let mut results: Vec<Option<GroupResult>> = vec![None; groups.len()];
    let mut falsified = false;
    for chunk_start in (0..groups.len()).step_by(pool) {
        if falsified && opts.short_circuit {
            break;
        }
        let chunk = &groups[chunk_start..(chunk_start + pool).min(groups.len())];
        let outcomes: Vec<GroupResult> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|g| {
                    let stem = format!("{}{}", opts.prefix, g.name);
                    scope.spawn(move || {
                        let script = emit_script(g, n_vars, backend.kind);
                        let (verdict, wall_time) = run_script(backend, &script, n_vars, dir, &stem);
                        filter_witnesses(g, verdict, wall_time, backend)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
        });
        for (k, r) in outcomes.into_iter().enumerate() {
            falsified |= !r.verdict.is_unsat();
            results[chunk_start + k] = Some(r);
        }
    }
    Ok(results.into_iter().flatten().collect())
}

/// Keeps only model points that numerically violate the group's condition.
fn filter_witnesses(group: &ConstraintGroup, verdict: Verdict, wall_time: Duration, backend: &SolverBackend) -> GroupResult {
    let tol = backend.fidelity_tolerance();
    let mut discarded = 0;
    let mut keep = |pts: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        pts.into_iter()
            .filter(|p| {
                let ok = group.is_witness(p, tol);
                if !ok {
                    discarded += 1;
                    warn!("discarding spurious counterexample {p:?} for {}", group.name);
                }
                ok
            })
            .collect()
    };
    let verdict = match verdict {
        Verdict::Sat(p) => Verdict::Sat(keep(p)),
        Verdict::DeltaSat(p) => Verdict::DeltaSat(keep(p)),
        v => v,
    };
    GroupResult {
        name: group.name.clone(),
        verdict,
        wall_time,
        discarded,
    }
}
