use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use fcalc::{combined_exit_code, resolve, run_and_write, Study, BUILTIN_NAMES};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "fcalc", version, about = "Numerical checks of filtered kernel calculus on graded charts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one study (or `all`) and write JSON, CSV and TSV reports.
    Run {
        /// Built-in scenario name or path to a scenario file.
        #[arg(long)]
        scenario: String,
        /// geometry, conditions, orthogonality, lp, flow or all.
        #[arg(long)]
        study: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated ħ values replacing both ħ lists of the scenario.
        #[arg(long, value_delimiter = ',')]
        hbar_list: Option<Vec<f64>>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; defaults to the number of cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Recompute the metric table instead of reading or writing the cache.
        #[arg(long)]
        no_cache: bool,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Print the built-in scenarios.
    ListScenarios,
    /// Parse and validate a scenario file.
    Validate { path: PathBuf },
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::ListScenarios => {
            for name in BUILTIN_NAMES {
                let s = fcalc::builtin(name).expect("built-in exists");
                println!("{name}\td={}\tweights={:?}\t{}", s.dim(), s.chart.weights, s.hash());
            }
            Ok(0)
        }
        Command::Validate { path } => {
            let s = fcalc::config::load_config(&path)?;
            println!("ok\t{}\t{}", s.name, s.hash());
            Ok(0)
        }
        Command::Run { scenario, study, seed, hbar_list, out, threads, no_cache, quiet } => {
            if let Some(t) = threads {
                if t == 0 {
                    bail!("--threads must be positive");
                }
                rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
            }
            let mut sc = resolve(&scenario)?;
            if let Some(h) = hbar_list {
                if h.is_empty() {
                    bail!("--hbar-list is empty");
                }
                sc.study.hbar_list = h.clone();
                sc.study.lp_hbar_list = h;
            }
            let studies = Study::parse_list(&study)?;
            let reports = run_and_write(&sc, &studies, seed, &out, !no_cache, !quiet)?;
            for r in &reports {
                for c in &r.checks {
                    let status = if c.passed { "pass" } else if c.hard { "FAIL" } else { "soft-fail" };
                    println!("{}\t{}\t{status}\t{:.6e}", r.study, c.name, c.value);
                }
                for f in &r.failures {
                    println!("{}\terror\t{f}", r.study);
                }
            }
            Ok(combined_exit_code(&reports))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
