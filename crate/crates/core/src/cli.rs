//! Command-line front end.
//!
//! Exit codes: 0 success, 1 domain negative (type error, distinguished),
//! 2 usage, input or parse error, 3 inconclusive.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::ast::{Name, Program};
use crate::bisim::{weak_barbed_bisim_with, BarbMode, BisimVerdict};
use crate::congruence::normalize_with;
use crate::eval::Registry;
use crate::parser::{parse_program, pretty_print};
use crate::protocol::{electoral_source, hierarchy_source, ElectoralSpec, HierarchySpec, LeafBody, Rounds};
use crate::reduction::{run, Engine, Exploration, Limits, Mode, RuleLabel};
use crate::typesys::check_program;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NEGATIVE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Dot,
}

#[derive(Debug, Parser)]
#[command(name = "bbc", version, about = "Bounded broadcast and collection calculus toolkit")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value = "text")]
    pub format: Format,
    #[command(flatten)]
    pub limits: LimitArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct LimitArgs {
    /// Largest number of states explored.
    #[arg(long, global = true, env = "BBC_MAX_STATES", default_value_t = 50_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_states: u64,
    /// Agent unfoldings allowed along any path.
    #[arg(long, global = true, env = "BBC_UNFOLD_BUDGET", default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    pub unfold_budget: u64,
    /// Longest random run.
    #[arg(long, global = true, env = "BBC_MAX_STEPS", default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_steps: u64,
}

impl LimitArgs {
    pub fn limits(&self) -> Limits {
        Limits {
            max_states: self.max_states as usize,
            unfold_budget: self.unfold_budget as usize,
            max_steps: self.max_steps as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Default,
    Exhaustive,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Default => Mode::Default,
            ModeArg::Exhaustive => Mode::Exhaustive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BarbModeArg {
    Strict,
    Weak,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a program and pretty-print it.
    Parse { file: PathBuf },
    /// Print the normal form of the program's network.
    Normalize { file: PathBuf },
    /// List the one-step successors of the initial state.
    Step {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "default")]
        mode: ModeArg,
    },
    /// Seeded random execution.
    Run {
        file: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "default")]
        mode: ModeArg,
    },
    /// Explore the reachable state graph.
    States {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "exhaustive")]
        mode: ModeArg,
        /// Prioritise independent invisible steps and drop dead prefixes
        /// (exhaustive mode only).
        #[arg(long)]
        reduced: bool,
        /// Write the export here instead of the output stream.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decide weak barbed bisimilarity of two programs.
    Bisim {
        left: PathBuf,
        right: PathBuf,
        #[arg(long, value_enum, default_value = "strict")]
        barb_mode: BarbModeArg,
        /// Explore every state instead of the reduced graphs.
        #[arg(long)]
        full: bool,
        /// Where to write the distinguishing trace.
        #[arg(long, default_value = "bisim-trace.json")]
        trace_out: PathBuf,
    },
    /// Type-check a program.
    Typecheck { file: PathBuf },
    /// Generate protocol programs.
    #[command(subcommand)]
    Gen(GenCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoundsArg {
    Once,
    Repeat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LeafBodyArg {
    Inert,
    Echo,
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Hierarchical aggregation protocol.
    Hierarchy {
        #[arg(long, default_value_t = 1)]
        depth: usize,
        /// Fan-out per level, comma separated; the last entry repeats.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        branching: Vec<usize>,
        #[arg(long, value_enum, default_value = "once")]
        rounds: RoundsArg,
        #[arg(long, default_value = "min")]
        selection: String,
        #[arg(long, value_enum, default_value = "echo")]
        leaf_body: LeafBodyArg,
        #[arg(long)]
        bound: Option<u32>,
        /// Emit the flattened equivalent instead.
        #[arg(long)]
        flat: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Electoral system.
    Electoral {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        rounds_k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Process entry point.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Parse `argv`, run the subcommand and return the exit code.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(code) => code,
        Err(Failure(code, message)) => {
            let _ = writeln!(err, "error: {message}");
            code
        }
    }
}

struct Failure(i32, String);

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure(EXIT_USAGE, e.to_string())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure(EXIT_USAGE, e.to_string())
}

fn load(path: &Path) -> Result<Program, Failure> {
    let src = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    parse_program(&src).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn emit_json(out: &mut dyn Write, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    writeln!(out, "{text}")?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn reject_dot(format: Format) -> Result<(), Failure> {
    match format {
        Format::Dot => Err(usage("--format dot is only available for `states`")),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct StepJson {
    label: RuleLabel,
    target: String,
}

#[derive(Serialize)]
struct RunJson {
    seed: u64,
    initial: String,
    steps: Vec<StepJson>,
}

#[derive(Serialize)]
struct TypecheckJson {
    ok: bool,
    error: Option<String>,
}

/// Contents of the trace file written by `bisim`.
#[derive(Debug, Serialize)]
pub struct TraceFile {
    pub left: String,
    pub right: String,
    pub barb_mode: BarbMode,
    pub verdict: BisimVerdict,
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, Failure> {
    let limits = cli.limits.limits();
    let json = cli.format == Format::Json;
    match &cli.command {
        Command::Parse { file } => {
            reject_dot(cli.format)?;
            let p = load(file)?;
            let text = pretty_print(&p);
            if json {
                emit_json(out, &serde_json::json!({ "program": text }))?;
            } else {
                write!(out, "{text}")?;
            }
            Ok(EXIT_OK)
        }
        Command::Normalize { file } => {
            reject_dot(cli.format)?;
            let p = load(file)?;
            let nf = normalize_with(p.network(), &Registry::from_program(&p));
            if json {
                emit_json(out, &serde_json::json!({ "normal_form": nf.to_string() }))?;
            } else {
                writeln!(out, "{nf}")?;
            }
            Ok(EXIT_OK)
        }
        Command::Step { file, mode } => {
            reject_dot(cli.format)?;
            let p = load(file)?;
            let engine = Engine::new(&p, (*mode).into(), limits);
            let succ = engine.successors(&engine.initial()).map_err(|e| Failure(EXIT_NEGATIVE, e.to_string()))?;
            if json {
                let steps: Vec<StepJson> =
                    succ.into_iter().map(|(label, nf)| StepJson { label, target: nf.to_string() }).collect();
                emit_json(out, &steps)?;
            } else if succ.is_empty() {
                writeln!(out, "no successors")?;
            } else {
                for (label, nf) in succ {
                    writeln!(out, "{label}\n    {nf}")?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::Run { file, seed, mode } => {
            reject_dot(cli.format)?;
            let p = load(file)?;
            let engine = Engine::new(&p, (*mode).into(), limits);
            let initial = engine.initial();
            let trace =
                run(&p, *seed, limits.max_steps, (*mode).into()).map_err(|e| Failure(EXIT_NEGATIVE, e.to_string()))?;
            if json {
                let steps = trace.into_iter().map(|(label, nf)| StepJson { label, target: nf.to_string() }).collect();
                emit_json(out, &RunJson { seed: *seed, initial: initial.to_string(), steps })?;
            } else {
                writeln!(out, "{initial}")?;
                for (label, nf) in trace {
                    writeln!(out, "--[{label}]-->\n{nf}")?;
                }
            }
            Ok(EXIT_OK)
        }
        Command::States { file, mode, reduced, out: path } => {
            let p = load(file)?;
            if *reduced && *mode != ModeArg::Exhaustive {
                return Err(usage("--reduced requires --mode exhaustive"));
            }
            let how = if *reduced { Exploration::Reduced } else { Exploration::Full };
            let g = Engine::new(&p, (*mode).into(), limits).explore(how).map_err(|e| Failure(EXIT_NEGATIVE, e.to_string()))?;
            let text = match cli.format {
                Format::Json => g.to_json() + "\n",
                Format::Dot => g.to_dot(),
                Format::Text => {
                    let mut s = format!(
                        "{} states, {} edges, {} terminal{}\n",
                        g.states.len(),
                        g.edges.len(),
                        g.terminal_states().len(),
                        if g.truncated { ", truncated" } else { "" }
                    );
                    for (i, st) in g.states.iter().enumerate() {
                        s += &format!("[{i}] {st}\n");
                    }
                    for e in &g.edges {
                        s += &format!("[{}] --[{}]--> [{}]\n", e.from, e.label, e.to);
                    }
                    s
                }
            };
            match path {
                Some(path) => write_file(path, &text)?,
                None => write!(out, "{text}")?,
            }
            if g.truncated {
                writeln!(err, "warning: exploration truncated")?;
            }
            Ok(EXIT_OK)
        }
        Command::Bisim { left, right, barb_mode, full, trace_out } => {
            reject_dot(cli.format)?;
            let (p1, p2) = (load(left)?, load(right)?);
            let mode = match barb_mode {
                BarbModeArg::Strict => BarbMode::Strict,
                BarbModeArg::Weak => BarbMode::Weak,
            };
            let how = if *full { Exploration::Full } else { Exploration::Reduced };
            let verdict = weak_barbed_bisim_with(&p1, &p2, limits, mode, how).map_err(usage)?;
            let code = match &verdict {
                BisimVerdict::Bisimilar { .. } => EXIT_OK,
                BisimVerdict::Distinguished { .. } => EXIT_NEGATIVE,
                BisimVerdict::Inconclusive { .. } => EXIT_INCONCLUSIVE,
            };
            if let BisimVerdict::Distinguished { .. } = &verdict {
                let file = TraceFile {
                    left: left.display().to_string(),
                    right: right.display().to_string(),
                    barb_mode: mode,
                    verdict: verdict.clone(),
                };
                write_file(trace_out, &(serde_json::to_string_pretty(&file).expect("trace serializes") + "\n"))?;
            }
            if json {
                emit_json(out, &verdict)?;
            } else {
                match &verdict {
                    BisimVerdict::Bisimilar { witness } => {
                        writeln!(out, "Bisimilar ({} related pairs)", witness.pairs.len())?
                    }
                    BisimVerdict::Distinguished { side, trace, reason } => {
                        writeln!(out, "Distinguished: {reason}")?;
                        writeln!(out, "trace on {side:?} side ({} steps), written to {}", trace.len(), trace_out.display())?;
                        for label in trace {
                            writeln!(out, "  {label}")?;
                        }
                    }
                    BisimVerdict::Inconclusive { reason } => writeln!(out, "Inconclusive: {reason}")?,
                }
            }
            Ok(code)
        }
        Command::Typecheck { file } => {
            reject_dot(cli.format)?;
            let p = load(file)?;
            let result = check_program(&p);
            if json {
                emit_json(out, &TypecheckJson { ok: result.is_ok(), error: result.as_ref().err().map(|e| e.to_string()) })?;
            } else if result.is_ok() {
                writeln!(out, "ok")?;
            }
            if let Err(e) = &result {
                writeln!(err, "type error: {e}")?;
                return Ok(EXIT_NEGATIVE);
            }
            Ok(EXIT_OK)
        }
        Command::Gen(gen) => {
            reject_dot(cli.format)?;
            let (src, path) = match gen {
                GenCommand::Hierarchy { depth, branching, rounds, selection, leaf_body, bound, flat, out: path } => {
                    let mut spec = HierarchySpec {
                        rounds: match rounds {
                            RoundsArg::Once => Rounds::Once,
                            RoundsArg::Repeat => Rounds::Repeat,
                        },
                        selection: Name::new(selection),
                        leaf_body: match leaf_body {
                            LeafBodyArg::Inert => LeafBody::Inert,
                            LeafBodyArg::Echo => LeafBody::Echo,
                        },
                        bound: *bound,
                        ..HierarchySpec::new(*depth, branching.clone())
                    };
                    if *flat {
                        spec = crate::protocol::flatten_spec(&spec, &spec.root.clone());
                    }
                    (hierarchy_source(&spec).map_err(usage)?, path)
                }
                GenCommand::Electoral { n, rounds_k, out: path } => {
                    (electoral_source(&ElectoralSpec { participants: *n, rounds: *rounds_k }).map_err(usage)?, path)
                }
            };
            match path {
                Some(path) => write_file(path, &src)?,
                None if json => emit_json(out, &serde_json::json!({ "program": src }))?,
                None => write!(out, "{src}")?,
            }
            Ok(EXIT_OK)
        }
    }
}
