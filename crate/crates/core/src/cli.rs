//! Command-line entry points.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::consensus::CoordinationMode;
use crate::scenario::Scenario;
use crate::system::run_scenario;
use crate::trace::first_divergence;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "multiconcern", version, about = "Run and replay multi-concern management scenarios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write trace.jsonl, metrics.csv, graph_final.json and verdict.json.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the scenario's coordination mode (sm or cm).
        #[arg(long)]
        mode: Option<CoordinationMode>,
    },
    /// Re-run a scenario and compare against a recorded trace.
    Replay { trace: PathBuf, scenario: PathBuf },
}

/// Exit status of `run`: 0 converged, 1 invalid scenario, 2 not converged.
pub fn run(scenario: &Path, out: &Path, seed: Option<u64>, mode: Option<CoordinationMode>) -> i32 {
    let mut s = match Scenario::load(scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", scenario.display());
            return EXIT_INVALID;
        }
    };
    if let Some(seed) = seed {
        s.sim.seed = seed;
    }
    if let Some(mode) = mode {
        s.mode = mode;
    }
    let report = match run_scenario(&s) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INVALID;
        }
    };
    if let Err(e) = report.write_outputs(out) {
        eprintln!("error: {e}");
        return EXIT_INVALID;
    }
    let v = &report.verdict;
    println!(
        "converged={} ticks_to_converge={} final_throughput={:.4}",
        v.converged,
        v.ticks_to_converge.map_or("-".to_string(), |n| n.to_string()),
        v.final_throughput
    );
    if v.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    }
}

/// Exit status of `replay`: 0 when the re-run trace is byte-identical.
pub fn replay(trace: &Path, scenario: &Path) -> i32 {
    let recorded = match std::fs::read_to_string(trace) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", trace.display());
            return 1;
        }
    };
    let fresh = match Scenario::load(scenario).map_err(|e| e.to_string()).and_then(|s| {
        run_scenario(&s).map_err(|e| e.to_string())
    }) {
        Ok(r) => r.trace_jsonl(),
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if recorded == fresh {
        println!("identical ({} lines)", fresh.lines().count());
        return 0;
    }
    match first_divergence(&recorded, &fresh) {
        Some(line) => {
            let pick = |t: &str| t.lines().nth(line - 1).unwrap_or("<end of trace>").to_string();
            println!("traces diverge at line {line}");
            println!("  recorded: {}", pick(&recorded));
            println!("  replayed: {}", pick(&fresh));
        }
        None => println!("traces differ in trailing whitespace"),
    }
    1
}

pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::Run { scenario, out, seed, mode } => run(&scenario, &out, seed, mode),
        Command::Replay { trace, scenario } => replay(&trace, &scenario),
    }
}
