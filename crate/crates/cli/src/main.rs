//! `sint`: check, run, compare and format programs.
//!
//! Exit codes: 0 accepted / poised / equivalent, 1 rejected, 2 I/O or usage,
//! 3 step budget exhausted, 4 distinguished, 5 state budget exceeded.

mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sintegrity::niharness::{ni_check, ExploreOptions, Mode, NiError};
use sintegrity::runtime::{format_trace, Machine, RuntimeError, Scheduler, Status, DEFAULT_MAX_STEPS};
use sintegrity::typecheck::CheckOptions;
use sintegrity::{parser, pretty, Error, Program};

use report::Report;

/// Prints to stdout, ignoring a closed pipe (`sint run ... | head`).
macro_rules! out {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "sint",
    version,
    about = "Security-typed session programs: checker, interpreter, noninterference harness"
)]
struct Cli {
    /// Emit machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Admit programs that fail the synchronization pattern checks. Only for
    /// demonstrating leaks.
    #[arg(long, global = true, hide = true)]
    unsafe_skip_sync: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exhaustive,
    Sampled,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and type-check a program.
    Check { file: PathBuf },
    /// Run a checked program and print its message trace.
    Run {
        file: PathBuf,
        /// Seed for the random scheduler; without it the first redex is always taken.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
        max_steps: usize,
        /// Re-check configuration typing after every step.
        #[arg(long)]
        check_config: bool,
    },
    /// Compare what an observer sees of two programs across schedules.
    Ni {
        file_a: PathBuf,
        file_b: PathBuf,
        #[arg(long, default_value = "guest")]
        observer: String,
        #[arg(long, value_enum, default_value_t = ModeArg::Exhaustive)]
        mode: ModeArg,
        /// Observable events per run.
        #[arg(long, default_value_t = 12)]
        max_events: usize,
        /// Steps allowed to reach each observable event.
        #[arg(long, default_value_t = 2_000)]
        max_steps: usize,
        #[arg(long, default_value_t = 1_000_000)]
        max_states: usize,
        /// Runs in sampled mode.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Pretty-print a program in canonical layout.
    Fmt { file: PathBuf },
}

fn read(path: &Path) -> Result<String, ExitCode> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("sint: cannot read {}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let opts = CheckOptions {
        skip_sync: cli.unsafe_skip_sync,
        ..Default::default()
    };
    let out = match &cli.cmd {
        Cmd::Check { file } => check(file, opts, cli.json),
        Cmd::Run {
            file,
            seed,
            max_steps,
            check_config,
        } => run(file, opts, *seed, *max_steps, *check_config, cli.json),
        Cmd::Ni {
            file_a,
            file_b,
            observer,
            mode,
            max_events,
            max_steps,
            max_states,
            seeds,
        } => {
            let eo = ExploreOptions {
                max_steps: *max_steps,
                max_events: *max_events,
                max_states: *max_states,
                mode: match mode {
                    ModeArg::Exhaustive => Mode::Exhaustive,
                    ModeArg::Sampled => Mode::Sampled { seeds: *seeds },
                },
            };
            ni(file_a, file_b, observer, opts, &eo, cli.json)
        }
        Cmd::Fmt { file } => fmt(file),
    };
    out.unwrap_or_else(|code| code)
}

fn load(path: &Path, opts: CheckOptions, json: bool) -> Result<Program, ExitCode> {
    let src = read(path)?;
    sintegrity::load(&src, opts).map_err(|e| {
        let r = Report::rejected(path, &e);
        if json {
            out!("{}", r.to_json());
        } else {
            eprintln!("{}", r.text());
        }
        ExitCode::from(1)
    })
}

fn check(path: &Path, opts: CheckOptions, json: bool) -> Result<ExitCode, ExitCode> {
    let p = load(path, opts, json)?;
    let r = Report::accepted(path, &p);
    if json {
        out!("{}", r.to_json());
    } else {
        out!("{}", r.text());
    }
    Ok(ExitCode::SUCCESS)
}

fn run(
    path: &Path,
    opts: CheckOptions,
    seed: Option<u64>,
    max_steps: usize,
    check_config: bool,
    json: bool,
) -> Result<ExitCode, ExitCode> {
    let p = load(path, opts, json)?;
    let m = Machine::new(&p);
    let mut sched = match seed {
        Some(s) => Scheduler::seeded(s),
        None => Scheduler::First,
    };
    let res = m
        .initial()
        .and_then(|cfg| m.run(cfg, &mut sched, max_steps, check_config));
    let res = match res {
        Ok(r) => r,
        Err(e) => {
            report_runtime(path, &e, json);
            return Err(ExitCode::from(1));
        }
    };
    let (status, code) = match res.status {
        Status::Poised => ("poised", 0),
        Status::Budget => ("budget", 3),
        Status::Stuck => ("stuck", 1),
    };
    if json {
        out!("{}", report::run_json(path, status, res.steps, &res.trace));
    } else {
        let _ = write!(std::io::stdout().lock(), "{}", format_trace(&res.trace));
        eprintln!("{status} after {} steps", res.steps);
    }
    Ok(ExitCode::from(code))
}

fn report_runtime(path: &Path, e: &RuntimeError, json: bool) {
    let r = Report::rejected(path, &Error::Runtime(e.clone()));
    if json {
        out!("{}", r.to_json());
    } else {
        eprintln!("{}", r.text());
    }
}

fn ni(
    a: &Path,
    b: &Path,
    observer: &str,
    opts: CheckOptions,
    eo: &ExploreOptions,
    json: bool,
) -> Result<ExitCode, ExitCode> {
    let pa = load(a, opts, json)?;
    let pb = load(b, opts, json)?;
    match ni_check(&pa, &pb, observer, eo) {
        Ok(v) => {
            if json {
                out!("{}", report::verdict_json(&v));
            } else {
                out!("{v}");
            }
            Ok(ExitCode::from(if v.is_equivalent() { 0 } else { 4 }))
        }
        Err(e) => {
            let code = match e {
                NiError::StateBudgetExceeded(_) => 5,
                NiError::UnknownObserver(_) | NiError::LatticeMismatch => 2,
                NiError::Runtime(_) => 1,
            };
            let r = Report::rejected(a, &Error::Ni(e));
            if json {
                out!("{}", r.to_json());
            } else {
                eprintln!("{}", r.text());
            }
            Err(ExitCode::from(code))
        }
    }
}

fn fmt(path: &Path) -> Result<ExitCode, ExitCode> {
    let src = read(path)?;
    match parser::parse_program(&src) {
        Ok(p) => {
            let _ = write!(std::io::stdout().lock(), "{}", pretty::print_program(&p));
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("{}: parse error at {e}", path.display());
            Err(ExitCode::from(1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use sintegrity::niharness::Verdict;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unsafe_flag_is_hidden() {
        let help = Cli::command().render_long_help().to_string();
        assert!(!help.contains("unsafe"));
    }

    #[test]
    fn verdict_text_matches_core() {
        let v = Verdict::Equivalent { depth: 3, states: 7 };
        assert_eq!(v.to_string(), "EQUIVALENT depth=3 states=7");
    }
}
