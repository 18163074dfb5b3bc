use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use shapesim_core::harness::output::emit_csv;
use shapesim_core::harness::suite::{self, Cell, DEFAULT_DURATION_NS};
use shapesim_core::harness::{builtin, Scenario};
use shapesim_core::shaper::plan_admission;
use shapesim_core::{run, Error};

#[derive(Parser)]
#[command(name = "shapesim", version, about = "Multi-tenant accelerator I/O simulator with traffic shaping")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file or a built-in and write CSVs.
    Run {
        /// Path to a JSON scenario, or the name of a built-in.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// Run every built-in, cells in parallel.
    RunAll {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        over: Overrides,
    },
    /// List the built-in scenarios.
    List,
    /// Print the shaper admission report without running.
    Plan {
        #[arg(long)]
        scenario: String,
        /// Plan as if shaping were switched on.
        #[arg(long)]
        shaping: Option<Switch>,
    },
}

#[derive(clap::Args, Clone)]
struct Overrides {
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed range `a..b` (exclusive) or `a..=b`; one output directory per seed.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Range<u64>>,
    #[arg(long)]
    duration_ns: Option<u64>,
    #[arg(long)]
    shaping: Option<Switch>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let bad = || format!("expected `a..b` or `a..=b`, got `{s}`");
    let (a, b, inclusive) = match s.split_once("..=") {
        Some((a, b)) => (a, b, true),
        None => {
            let (a, b) = s.split_once("..").ok_or_else(bad)?;
            (a, b, false)
        }
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let end = if inclusive { b.checked_add(1).ok_or_else(bad)? } else { b };
    if end <= a {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok(a..end)
}

/// A runnable unit and where its CSV goes, relative to the output root.
struct Job {
    rel: PathBuf,
    scenario: Scenario,
}

/// Builds the cells named by `target`: a file if one exists, else a built-in.
fn load(target: &str, duration_ns: Option<u64>) -> Result<(String, Vec<Cell>), Error> {
    let path = Path::new(target);
    if path.is_file() {
        let s = Scenario::load(path)?;
        let s = match duration_ns {
            Some(d) => Scenario { duration_ns: d, ..s },
            None => s,
        };
        let label = s.name.clone();
        return Ok((String::new(), vec![Cell { label, scenario: s }]));
    }
    let b = builtin(target, duration_ns.unwrap_or(DEFAULT_DURATION_NS))?;
    Ok((b.name.to_string(), b.cells))
}

fn apply(mut s: Scenario, over: &Overrides, seed: Option<u64>) -> Scenario {
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(d) = over.duration_ns {
        s.duration_ns = d;
    }
    match over.shaping {
        Some(Switch::On) => s.with_shaping(true),
        Some(Switch::Off) => s.with_shaping(false),
        None => s,
    }
}

fn expand(groups: Vec<(String, Vec<Cell>)>, over: &Overrides) -> Vec<Job> {
    let seeds: Vec<Option<u64>> = match &over.seeds {
        Some(r) => r.clone().map(Some).collect(),
        None => vec![over.seed],
    };
    let mut jobs = Vec::new();
    for seed in &seeds {
        let root = match (&over.seeds, seed) {
            (Some(_), Some(n)) => PathBuf::from(format!("seed-{n}")),
            _ => PathBuf::new(),
        };
        for (dir, cells) in &groups {
            for c in cells {
                jobs.push(Job {
                    rel: root.join(dir).join(format!("{}.csv", c.label)),
                    scenario: apply(c.scenario.clone(), over, *seed),
                });
            }
        }
    }
    jobs
}

/// Validates every job up front so that a bad override fails before any run.
fn execute(jobs: Vec<Job>, out: &Path) -> Result<(), Error> {
    for j in &jobs {
        j.scenario.validate()?;
    }
    let lines = jobs
        .par_iter()
        .map(|j| -> Result<String, Error> {
            let res = run(&j.scenario)?;
            let path = out.join(&j.rel);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            emit_csv(&j.scenario.name, &res.tenants, &path)?;
            let mut line = format!("{}:", j.rel.display());
            for m in &res.tenants {
                let _ = write!(line, " {}={:.2}Gbps/{:.0}iops", m.tenant_id, m.delivered_gbps, m.delivered_iops);
            }
            if !res.summary.conservation.holds() {
                line.push_str(" [conservation violated]");
            }
            Ok(line)
        })
        .collect::<Result<Vec<_>, _>>()?;
    for l in lines {
        println!("{l}");
    }
    Ok(())
}

fn plan(target: &str, shaping: Option<Switch>) -> Result<(), Error> {
    let (_, cells) = load(target, None)?;
    for c in cells {
        let s = match shaping {
            Some(Switch::On) => c.scenario.with_shaping(true),
            Some(Switch::Off) => c.scenario.with_shaping(false),
            None => c.scenario,
        };
        s.validate()?;
        let p = plan_admission(&s.flows, &s.slas, &s.profiles, &s.pcie, &s.ring, &s.planner)?;
        println!("== {} (shaping {})", c.label, if s.shaping_enabled { "on" } else { "off" });
        print!("{}", p.report());
    }
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::List => {
            for b in suite::scenario_suite(DEFAULT_DURATION_NS) {
                println!("{:<16} {:>3} cells  {}", b.name, b.cells.len(), b.phenomenon);
            }
            Ok(())
        }
        Cmd::Plan { scenario, shaping } => plan(&scenario, shaping),
        Cmd::Run { scenario, out, over } => {
            let group = load(&scenario, over.duration_ns)?;
            execute(expand(vec![group], &over), &out)
        }
        Cmd::RunAll { out, over } => {
            let d = over.duration_ns.unwrap_or(DEFAULT_DURATION_NS);
            let groups = suite::scenario_suite(d)
                .into_iter()
                .map(|b| (b.name.to_string(), b.cells))
                .collect();
            execute(expand(groups, &over), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } | Error::UnknownScenario(_) | Error::Parse(_) => 2,
                Error::InfeasibleSla { .. } => 3,
                Error::Io(_) | Error::Csv(_) => 1,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::parse_seeds;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("1..4"), Ok(1..4));
        assert_eq!(parse_seeds("1..=4"), Ok(1..5));
        assert!(parse_seeds("4..4").is_err());
        assert!(parse_seeds("a..b").is_err());
        assert!(parse_seeds("7").is_err());
    }
}
