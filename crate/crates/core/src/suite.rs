//! Benchmark suites: a directory with `suite.yaml` listing config files,
//! each run for several seeds and summarised in a table.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cegis::{synthesise, CegisReport, Status};
use crate::certificates::CertificateKind;
use crate::config::CegisConfig;

/// One line of `suite.yaml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteEntry {
    pub name: String,
    /// Config file, relative to the suite directory.
    pub config: PathBuf,
    #[serde(default = "valid")]
    pub expected: Status,
    #[serde(default = "ten")]
    pub repeats: usize,
    /// Required share of successful runs, in percent.
    #[serde(default)]
    pub success_threshold: f64,
    /// A run slower than this (seconds) counts as a failure.
    #[serde(default)]
    pub time_ceiling: Option<f64>,
    /// Stands in for a benchmark whose dynamics are not published.
    #[serde(default)]
    pub substitute: bool,
}

fn valid() -> Status {
    Status::Valid
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub entries: Vec<SuiteEntry>,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl Suite {
    pub fn load(dir: impl AsRef<Path>) -> Result<Suite, String> {
        let dir = dir.as_ref();
        let file = dir.join("suite.yaml");
        let text = std::fs::read_to_string(&file).map_err(|e| format!("{}: {e}", file.display()))?;
        let entries: Vec<SuiteEntry> = serde_yaml::from_str(&text).map_err(|e| format!("{}: {e}", file.display()))?;
        Ok(Suite {
            entries,
            dir: dir.to_path_buf(),
        })
    }

    pub fn entry(&self, name: &str) -> Option<&SuiteEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn config(&self, entry: &SuiteEntry) -> Result<CegisConfig, String> {
        CegisConfig::load(self.dir.join(&entry.config)).map_err(|e| format!("{}: {e}", entry.name))
    }
}

/// Iteration budget of the benchmark protocol.
pub fn bench_budget(kind: CertificateKind) -> usize {
    match kind {
        CertificateKind::Swa | CertificateKind::Rar => 100,
        _ => 25,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub status: Status,
    pub iterations: usize,
    pub total: f64,
    pub learn: f64,
    pub verify: f64,
    pub success: bool,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryResult {
    pub name: String,
    pub substitute: bool,
    pub n_states: usize,
    pub n_inputs: usize,
    pub certificate: String,
    pub neurons: String,
    pub activations: String,
    pub runs: Vec<RunSummary>,
    /// Set when the config itself could not be loaded.
    #[serde(default)]
    pub error: Option<String>,
}

impl EntryResult {
    /// Percentage of successful runs.
    pub fn success_rate(&self) -> f64 {
        if self.runs.is_empty() {
            return 0.0;
        }
        100.0 * self.runs.iter().filter(|r| r.success).count() as f64 / self.runs.len() as f64
    }

    /// min / mean / max total time and mean learn share over successful runs.
    pub fn timing(&self) -> Option<(f64, f64, f64, f64)> {
        let ok: Vec<&RunSummary> = self.runs.iter().filter(|r| r.success).collect();
        if ok.is_empty() {
            return None;
        }
        let t: Vec<f64> = ok.iter().map(|r| r.total).collect();
        let min = t.iter().copied().fold(f64::INFINITY, f64::min);
        let max = t.iter().copied().fold(0.0, f64::max);
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let learn = ok.iter().map(|r| r.learn).sum::<f64>() / ok.len() as f64;
        Some((min, mean, max, learn))
    }
}

/// Runs one entry for seeds `0..repeats`; each run gets its own directory
/// under `out_dir` when given.
pub fn run_entry(suite: &Suite, entry: &SuiteEntry, repeats: usize, out_dir: Option<&Path>) -> EntryResult {
    run_entry_reports(suite, entry, repeats, out_dir).0
}

/// [`run_entry`], also returning the full report of every run.
pub fn run_entry_reports(
    suite: &Suite,
    entry: &SuiteEntry,
    repeats: usize,
    out_dir: Option<&Path>,
) -> (EntryResult, Vec<CegisReport>) {
    let mut result = EntryResult {
        name: entry.name.clone(),
        substitute: entry.substitute,
        n_states: 0,
        n_inputs: 0,
        certificate: String::new(),
        neurons: String::new(),
        activations: String::new(),
        runs: Vec::new(),
        error: None,
    };
    let cfg = match suite.config(entry) {
        Ok(c) => c,
        Err(e) => {
            result.error = Some(e);
            return (result, Vec::new());
        }
    };
    result.n_states = cfg.model.n_vars();
    result.n_inputs = cfg.model.n_inputs();
    result.certificate = cfg.kind.name().to_string();
    let mut nets = vec![&cfg.certificate];
    nets.extend(cfg.secondary.as_ref());
    result.neurons = nets.iter().map(|s| format!("{:?}", s.hidden)).collect::<Vec<_>>().join(" + ");
    result.activations = nets
        .iter()
        .map(|s| s.activations.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(" + ");
    let mut reports = Vec::with_capacity(repeats);
    for seed in 0..repeats as u64 {
        let mut run = cfg.clone();
        run.seed = seed;
        run.max_iterations = bench_budget(cfg.kind);
        let dir = out_dir.map(|d| d.join(&entry.name).join(format!("seed_{seed:02}")));
        let report = synthesise(&run, dir.as_deref());
        result.runs.push(summarise(seed, &report, entry));
        reports.push(report);
    }
    (result, reports)
}

fn summarise(seed: u64, report: &CegisReport, entry: &SuiteEntry) -> RunSummary {
    let within = entry.time_ceiling.map_or(true, |c| report.timings.total <= c);
    RunSummary {
        seed,
        status: report.status,
        iterations: report.iterations,
        total: report.timings.total,
        learn: report.timings.learn,
        verify: report.timings.verify,
        success: report.status == Status::Valid && within,
        error: report.error.clone(),
    }
}

/// Results as a plain-text table; timings are over successful runs only.
pub fn format_table(results: &[EntryResult]) -> String {
    let header = [
        "Benchmark",
        "N_s",
        "N_u",
        "Certificate",
        "Neurons",
        "Activations",
        "T min",
        "T μ",
        "T max",
        "learn %",
        "S",
    ];
    let mut rows = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
    for r in results {
        let name = if r.substitute {
            format!("{} (substitute)", r.name)
        } else {
            r.name.clone()
        };
        let (tmin, tmean, tmax, learn) = match r.timing() {
            Some((a, b, c, l)) => (
                format!("{a:.2}"),
                format!("{b:.2}"),
                format!("{c:.2}"),
                if b > 0.0 { format!("{:.0}", 100.0 * l / b) } else { "—".into() },
            ),
            None => ("—".into(), "—".into(), "—".into(), "—".into()),
        };
        rows.push(vec![
            name,
            r.n_states.to_string(),
            r.n_inputs.to_string(),
            r.certificate.clone(),
            r.neurons.clone(),
            r.activations.clone(),
            tmin,
            tmean,
            tmax,
            learn,
            format!("{:.0}", r.success_rate()),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        }
    }
    out
}
