//! `atlaslab run` and `atlaslab validate`.
//!
//! Exit status: 0 when every check passes, 2 when a check fails, 1 on any
//! configuration or runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use atlaslab::config::ExperimentConfig;
use atlaslab::runner::{dry_run, run};
use atlaslab::{Admissibility, Error};
use clap::{Args, Parser, Subcommand};

const SEED_ENV: &str = "ATLASLAB_SEED";

#[derive(Parser)]
#[command(name = "atlaslab", version, about = "Monte Carlo lab for g-Atlas particle systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        /// Seed override; beats ATLASLAB_SEED, which beats the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `out_dir` from the file, then
        /// `atlaslab-out/<experiment>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only print the dry-run diagnostics.
        #[arg(long)]
        validate: bool,
    },
    /// Check a config and print diagnostics without simulating.
    Validate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            common,
            seed,
            out,
            validate,
        } => {
            if validate {
                validate_cmd(&common.config, common.threads)
            } else {
                run_cmd(&common.config, common.threads, seed, out)
            }
        }
        Command::Validate { common } => validate_cmd(&common.config, common.threads),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn resolve_seed(cfg: &mut ExperimentConfig, flag: Option<u64>) -> Result<(), Error> {
    if let Some(seed) = flag {
        cfg.seed = seed;
    } else if let Ok(text) = std::env::var(SEED_ENV) {
        cfg.seed = text.trim().parse().map_err(|_| {
            Error::config(SEED_ENV, format!("not an unsigned 64-bit integer: {text:?}"))
        })?;
    }
    Ok(())
}

fn run_cmd(
    path: &Path,
    threads: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<ExitCode, Error> {
    if threads == Some(0) {
        return Err(Error::config("--threads", "must be at least 1"));
    }
    let mut cfg = ExperimentConfig::load(path)?;
    resolve_seed(&mut cfg, seed)?;
    let out = out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("atlaslab-out").join(cfg.experiment.name()));
    let report = run(&cfg, &out, threads)?;
    print!("{}", atlaslab::report::summary_text(&report));
    println!("artifacts in {}", out.display());
    let failed = report.failed();
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} check(s) failed:", failed.len());
        for c in failed {
            eprintln!("  {} estimate {} target {}", c.name, c.estimate, c.target);
        }
        Ok(ExitCode::from(2))
    }
}

fn validate_cmd(path: &Path, threads: Option<usize>) -> Result<ExitCode, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    resolve_seed(&mut cfg, None)?;
    let d = dry_run(&cfg, threads);
    println!("experiment: {}", d.experiment);
    println!("drift prefix {:?} (zero tail), a = {}", d.drift, d.a);
    println!(
        "a_min = {} (-2 inf_n mean drift); drift in D1: {}",
        d.a_min, d.d1_member
    );
    match d.admissibility {
        Admissibility::Interior => println!("a is admissible (a > a_min)"),
        Admissibility::Boundary => {
            println!("warning: a = a_min; boundary case accepted because the drift is in D1")
        }
        Admissibility::Inadmissible => {
            println!("warning: a = {} is below the admissible range a >= {}", d.a, d.a_min)
        }
    }
    println!(
        "truncation: N = {}, suggested N >= {}",
        d.n_particles, d.suggested_n_particles
    );
    println!(
        "estimated runtime: {:.1} s ({:.3e} particle-steps)",
        d.estimated_seconds, d.work_units
    );
    match d.verdict {
        Ok(notes) => {
            for n in notes {
                println!("note: {n}");
            }
            println!("config OK");
            Ok(ExitCode::SUCCESS)
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            Ok(ExitCode::from(1))
        }
    }
}
