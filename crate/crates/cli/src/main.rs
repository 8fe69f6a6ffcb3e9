//! `foldlab`: run oscillatory-operator experiments from a JSON config.
//!
//! Exit status: 0 when every declared check passes, 1 on a usage or config
//! error, 2 when a computation fails or a check misses its tolerance.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod error;
mod experiments;
mod report;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::{Experiment, ExperimentConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "foldlab", version, about = "Norm sweeps for oscillatory integral operators with fold singularities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for the numerical kernels.
        #[arg(long, env = "FOLDLAB_THREADS")]
        threads: Option<usize>,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the experiment catalog.
    List,
}

fn list() -> String {
    let mut s = String::new();
    for e in Experiment::ALL {
        s.push_str(&format!("{:<14}{}\n", e.id(), e.anchor()));
    }
    s
}

fn run(config: PathBuf, out: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>) -> Result<bool, CliError> {
    let text = fs::read_to_string(&config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out = Some(o);
    }
    cfg.validate()?;
    if let Some(k) = threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }

    let id = cfg.experiment.id();
    let hash = cfg.hash();
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("foldlab-out"));
    fs::create_dir_all(&dir)?;

    let start = Instant::now();
    let rep = experiments::run(&cfg)?;
    let wall = start.elapsed().as_secs_f64();

    rep.write_csv(&dir.join(format!("{id}.csv")), id, &hash, cfg.seed)?;
    let summary = rep.summary(id, &hash, cfg.seed, wall);
    fs::write(
        dir.join(format!("{id}.summary.json")),
        serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n",
    )?;
    for c in &rep.checks {
        println!(
            "{id}: {} = {} (target {}, tolerance {}, {:?}) {}",
            c.name,
            report::fmt_float(c.value),
            report::fmt_float(c.target),
            report::fmt_float(c.tolerance),
            c.comparison,
            if c.pass { "PASS" } else { "FAIL" }
        );
    }
    println!("{id}: wrote {} rows to {} in {wall:.2}s", rep.rows.len(), dir.display());
    Ok(rep.pass())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match cli.command {
        Command::List => {
            print!("{}", list());
            ExitCode::SUCCESS
        }
        Command::Run { config, out, threads, seed } => match run(config, out, threads, seed) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("foldlab: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
