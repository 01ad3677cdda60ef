use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cesim::harness::{self, Run};
use cesim::scenario::{Construction, Scenario};
use cesim::trace::{diff_replays, DiffReport};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cesim",
    version,
    about = "Finite-horizon simulator for c.e. set constructions"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Input {
    /// Scenario file.
    #[arg(short, long)]
    scenario: PathBuf,
    /// Run to this horizon instead of the scenario's.
    #[arg(long)]
    horizon: Option<u32>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its trace.
    Run {
        #[command(flatten)]
        input: Input,
        /// Trace output path; stdout when absent.
        #[arg(short, long)]
        trace: Option<PathBuf>,
    },
    /// Run a scenario and its invariant suite. Exits nonzero on any failure.
    Check {
        #[command(flatten)]
        input: Input,
        /// Comma-separated check-name prefixes, e.g. `pinball/restraint,trace`.
        #[arg(long, value_delimiter = ',')]
        checks: Vec<String>,
        #[arg(short, long)]
        trace: Option<PathBuf>,
    },
    /// Compare two trace files record by record.
    Diff { left: PathBuf, right: PathBuf },
    /// Print entry-census and ledger tables.
    Census {
        #[command(flatten)]
        input: Input,
    },
    /// Write a seeded random scenario.
    Gen {
        #[arg(short, long)]
        construction: Construction,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        horizon: u32,
        /// Output path; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn load(input: &Input) -> Result<Scenario> {
    let sc = Scenario::load(&input.scenario)
        .with_context(|| format!("loading {}", input.scenario.display()))?;
    Ok(match input.horizon {
        Some(h) if h <= sc.horizon => sc.truncated(h),
        Some(h) => {
            let mut sc = sc;
            sc.horizon = h;
            sc
        }
        None => sc,
    })
}

fn execute(sc: &Scenario) -> Result<Run> {
    harness::run(sc)
        .with_context(|| format!("running {} to stage {}", sc.construction.name(), sc.horizon))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::Run { input, trace } => {
            let sc = load(&input)?;
            let run = execute(&sc)?;
            write_out(trace.as_deref(), &run.trace_text())?;
            eprintln!(
                "{} records through stage {}",
                run.events().len(),
                run.stage()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Check {
            input,
            checks,
            trace,
        } => {
            let sc = load(&input)?;
            let run = execute(&sc)?;
            if let Some(p) = trace {
                write_out(Some(&p), &run.trace_text())?;
            }
            let results = harness::select(harness::run_invariant_suite(&run, &sc), &checks);
            if results.is_empty() && !checks.is_empty() {
                bail!("no check matches {}", checks.join(","));
            }
            for r in &results {
                let status = if r.passed() { "pass" } else { "FAIL" };
                match r.first() {
                    Some(v) => eprintln!(
                        "{status} {:<28} first violation at stage {}: {}",
                        r.name, v.stage, v.msg
                    ),
                    None => eprintln!("{status} {}", r.name),
                }
            }
            let failures = harness::failures(&results);
            let report = serde_json::json!({ "passed": failures.is_empty(), "failures": failures });
            println!("{report}");
            Ok(if failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Cmd::Diff { left, right } => {
            let read = |p: &Path| {
                fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
            };
            let report = diff_replays(&read(&left)?, &read(&right)?);
            match &report {
                DiffReport::Identical => println!("identical"),
                DiffReport::Prefix {
                    longer_is_left,
                    common,
                    next_stage,
                } => {
                    let longer = if *longer_is_left { "left" } else { "right" };
                    let at = next_stage.map_or("?".to_string(), |s| s.to_string());
                    println!("prefix: {longer} extends the other after {common} records, from stage {at}");
                }
                DiffReport::Divergent {
                    line,
                    stage,
                    left,
                    right,
                } => {
                    let at = stage.map_or("?".to_string(), |s| s.to_string());
                    println!("divergent at record {line} (stage {at})\n< {left}\n> {right}");
                }
            }
            Ok(if report == DiffReport::Identical {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Cmd::Census { input } => {
            let sc = load(&input)?;
            let run = execute(&sc)?;
            print!("{}", harness::census(&run)?);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Gen {
            construction,
            seed,
            horizon,
            out,
        } => {
            let sc = harness::generate(construction, seed, horizon)?;
            write_out(out.as_deref(), &sc.render())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
