use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ate_harness::harness::{
    emit_report, load_experiment, parse_report_json, render_report_json, render_summary, run_experiment, simulate,
    summarize, ExperimentSpec, ReportBundle, REPORT_FILE,
};
use ate_harness::Error;

#[derive(Parser)]
#[command(name = "ate-harness", version, about = "Estimate average treatment effects of ML pipeline methods")]
struct Cli {
    /// Worker threads (overrides ATE_HARNESS_THREADS and the config).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate an experiment file.
    Validate { config: PathBuf },
    /// Run an experiment and write its report bundle.
    Run {
        config: PathBuf,
        /// Bundle directory; defaults to `[output] dir`, then `./out`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the population exactly over its split universe.
    Oracle {
        config: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Replicate a synthetic-surface experiment under derived seeds.
    Simulate {
        config: PathBuf,
        #[arg(short, long, default_value_t = 100)]
        replications: usize,
        /// Write per-replication rows here as JSON lines.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Re-render a report bundle.
    Report {
        bundle: PathBuf,
        /// Print the canonical report JSON instead of the summary.
        #[arg(long)]
        json: bool,
    },
}

/// (exit code, message)
struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_validation() { 1 } else { 2 };
        Failure(code, e.to_string())
    }
}

fn load(path: &Path) -> Result<ExperimentSpec, Failure> {
    load_experiment(path).map_err(|e| match e {
        Error::Io { .. } => Failure(2, e.to_string()),
        other => Failure(1, other.to_string()),
    })
}

fn out_dir(flag: Option<PathBuf>, spec: &ExperimentSpec) -> PathBuf {
    flag.or_else(|| spec.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn write_bundle(bundle: &ReportBundle, dir: &Path) -> Result<(), Failure> {
    emit_report(bundle, dir)?;
    print!("{}", render_summary(&bundle.report));
    println!("bundle      {}", dir.display());
    Ok(())
}

fn execute(spec: &ExperimentSpec, threads: Option<usize>, dir: &Path) -> Result<(), Failure> {
    match run_experiment(spec, threads) {
        Ok(bundle) => write_bundle(&bundle, dir),
        Err(e @ Error::Execution { .. }) => {
            let manifest = dir.join("partial_run.txt");
            let note = format!("run aborted\n{e}\n");
            if fs::create_dir_all(dir).and_then(|_| fs::write(&manifest, note)).is_ok() {
                eprintln!("partial-run manifest: {}", manifest.display());
            }
            Err(e.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn main_inner(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { config } => {
            let spec = load(&config)?;
            println!(
                "ok: {} design, executor {}, {} nuisance variables",
                spec.design,
                spec.population.executor_id,
                spec.population.nuisance.len()
            );
            Ok(())
        }
        Command::Run { config, out } => {
            let spec = load(&config)?;
            let dir = out_dir(out, &spec);
            execute(&spec, cli.threads, &dir)
        }
        Command::Oracle { config, out } => {
            let spec = load(&config)?.into_exhaustive().map_err(|e| Failure(1, e.to_string()))?;
            let dir = out_dir(out, &spec);
            execute(&spec, cli.threads, &dir)
        }
        Command::Simulate {
            config,
            replications,
            out,
        } => {
            let spec = load(&config)?;
            let Some(surface) = spec.synthetic.as_ref().filter(|_| spec.population.executor_id == "synthetic_surface")
            else {
                return Err(Failure(1, "simulate needs the synthetic_surface executor".into()));
            };
            let true_ate = surface.population_ate(&spec.population);
            let reps = simulate(&spec, replications, cli.threads)?;
            if let Some(path) = out {
                let mut lines = String::new();
                for r in &reps {
                    lines.push_str(&serde_json::to_string(r).map_err(Error::from)?);
                    lines.push('\n');
                }
                fs::write(&path, lines).map_err(|e| Failure(2, format!("{}: {e}", path.display())))?;
            }
            let summary = summarize(&reps, true_ate);
            println!("{}", serde_json::to_string_pretty(&summary).map_err(Error::from)?);
            Ok(())
        }
        Command::Report { bundle, json } => {
            let path = if bundle.is_dir() { bundle.join(REPORT_FILE) } else { bundle };
            let text = fs::read_to_string(&path).map_err(|e| Failure(2, format!("{}: {e}", path.display())))?;
            let doc = parse_report_json(&text).map_err(|e| Failure(1, e.to_string()))?;
            if json {
                print!("{}", render_report_json(&doc)?);
            } else {
                print!("{}", render_summary(&doc.report));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
