use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use certsynth_core::cegis::{self, CegisReport, Status};
use certsynth_core::suite::{format_table, run_entry, Suite};
use certsynth_core::{CegisConfig, Expr};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "certsynth", version, about = "Synthesise verified Lyapunov, barrier and reach-avoid certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full learn/verify loop.
    Synth {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep the config snapshot, SMT scripts and solver transcripts here.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Check a given certificate without training.
    Verify {
        config: PathBuf,
        /// Lines of `V = <expr>`, `W = <expr>`, `u0 = <expr>`, `beta = <value>`.
        #[arg(long)]
        certificate: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Train once and report the unverified candidate.
    Learn {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every entry of a suite directory and print the results table.
    Bench {
        suite_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Only entries with these names.
        #[arg(long)]
        only: Vec<String>,
        /// Raw per-run results as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Keep run directories here.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Integrate the model and write a trajectory CSV.
    Simulate {
        config: PathBuf,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
        x0: Vec<f64>,
        /// Time horizon (steps for discrete models).
        #[arg(long = "T")]
        horizon: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        /// Report whose controller closes the loop.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &Path) -> Result<CegisConfig> {
    Ok(CegisConfig::load(path)?)
}

fn emit(report: &CegisReport, out: Option<&Path>) -> Result<ExitCode> {
    let text = serde_json::to_string_pretty(report)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    eprintln!("status: {} after {} iteration(s), {:.2}s", report.status, report.iterations, report.timings.total);
    if let Some(e) = &report.error {
        eprintln!("error: {e}");
    }
    Ok(if report.status == Status::Error {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth {
            config,
            seed,
            out,
            run_dir,
            max_iters,
        } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = max_iters {
                cfg.max_iterations = m;
            }
            emit(&cegis::synthesise(&cfg, run_dir.as_deref()), out.as_deref())
        }
        Command::Verify {
            config,
            certificate,
            out,
            run_dir,
        } => {
            let cfg = load(&config)?;
            let text = fs::read_to_string(&certificate).with_context(|| format!("reading {}", certificate.display()))?;
            let exprs = cegis::parse_certificate(&text, &cfg)?;
            emit(&cegis::verify_only(&cfg, &exprs, run_dir.as_deref()), out.as_deref())
        }
        Command::Learn { config, seed, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            emit(&cegis::learn_only(&cfg, None), out.as_deref())
        }
        Command::Bench {
            suite_dir,
            repeats,
            only,
            json,
            run_dir,
        } => {
            let suite = Suite::load(&suite_dir).map_err(anyhow::Error::msg)?;
            let mut results = Vec::new();
            for entry in suite.entries.iter().filter(|e| only.is_empty() || only.contains(&e.name)) {
                eprintln!("running {} ({repeats} seeds)", entry.name);
                let r = run_entry(&suite, entry, repeats, run_dir.as_deref());
                if let Some(e) = &r.error {
                    eprintln!("  {e}");
                }
                results.push(r);
            }
            print!("{}", format_table(&results));
            if let Some(p) = json {
                fs::write(&p, serde_json::to_string_pretty(&results)? + "\n")?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate {
            config,
            x0,
            horizon,
            dt,
            report,
            out,
        } => {
            let cfg = load(&config)?;
            let mut model = cfg.model.clone();
            if !model.is_autonomous() {
                let Some(path) = report else {
                    bail!("the model has inputs; pass --report with a synthesised controller");
                };
                let report: CegisReport = serde_json::from_str(&fs::read_to_string(&path)?)?;
                let Some(ctrl) = &report.controller else {
                    bail!("{} has no controller", path.display());
                };
                let ctrl = ctrl
                    .iter()
                    .map(|s| Expr::parse(s, model.n_vars(), 0))
                    .collect::<Result<Vec<_>, _>>()?;
                model = model.close_with(&ctrl)?;
            }
            if x0.len() != model.n_vars() {
                bail!("--x0 has {} entries, the model has {} states", x0.len(), model.n_vars());
            }
            if !(dt > 0.0) || !(horizon >= 0.0) {
                bail!("--dt must be positive and --T non-negative");
            }
            let steps = match model.time_domain() {
                certsynth_core::TimeDomain::Continuous => (horizon / dt).round() as usize,
                certsynth_core::TimeDomain::Discrete => horizon.round() as usize,
            };
            let traj = model.simulate(&x0, steps, dt)?;
            if let Some(reason) = &traj.aborted {
                eprintln!("warning: integration stopped early: {reason}");
            }
            match out {
                Some(p) => traj.write_csv(fs::File::create(&p)?)?,
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    traj.write_csv(&mut lock)?;
                    lock.flush()?;
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
