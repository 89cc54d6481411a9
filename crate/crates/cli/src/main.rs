//! `tapeformer` command line. Every artifact path is an explicit flag;
//! nothing is written to the working directory implicitly.
//!
//! Exit status: 0 when everything passes, 1 on a failed verdict or a
//! runtime error, 2 on a usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tapeformer::corpus::{self, CorpusEntry};
use tapeformer::harness::{run_suite, DiffOptions, SpaceMode};
use tapeformer::machine::{
    parse_machine, pm_run_with, tm_run, tm_run_with, AnyMachine, PmSpec, ResourceLimits, TmSpec,
    TraceRecord,
};
use tapeformer::pm2tf::{compile_pm_to_tf, verify_paper_literal, TfWeights, DEFAULT_HIDDEN_CAP};
use tapeformer::runtime::{generate_mode, FfMode};
use tapeformer::tm2pm::compile_tm_to_pm;
use tapeformer::Error;

#[derive(Parser)]
#[command(
    name = "tapeformer",
    version,
    about = "Compile Turing machines down to constant bit-size transformers and run all three side by side"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Tm,
    Pm,
    Tf,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a Turing machine into an adapted Post machine.
    CompilePm {
        /// Corpus name or path to a machine JSON file.
        #[arg(long)]
        machine: String,
        /// Space bound `s` the queue is sized for.
        #[arg(long)]
        space: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write compile metadata (queue size, checkpoint states, ...).
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Compile an adapted Post machine into transformer weights.
    CompileTf {
        #[arg(long)]
        pm: PathBuf,
        /// Context window; use the queue size the PM runs with.
        #[arg(long)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
        /// Include the synthesized ReLU feed-forward network.
        #[arg(long)]
        mlp: bool,
    },
    /// Run one input on one backend and print the answer.
    Run {
        #[arg(long, value_enum)]
        backend: Backend,
        #[arg(long)]
        machine: String,
        #[arg(long)]
        input: String,
        /// Space bound; defaults to the declared bound for corpus machines
        /// and to the measured TM space otherwise.
        #[arg(long)]
        space: Option<usize>,
        /// Write a JSONL trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000_000)]
        max_steps: u64,
        /// Evaluate the feed-forward block with the ReLU network.
        #[arg(long)]
        mlp: bool,
    },
    /// Differential run over every input up to a length.
    Diff {
        /// Corpus machine name.
        #[arg(long)]
        machine: String,
        #[arg(long, default_value_t = 10)]
        max_len: usize,
        /// Write the JSONL report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Size each compilation from the TM's measured space.
        #[arg(long)]
        measure_space: bool,
        #[arg(long)]
        mlp: bool,
        #[arg(long, default_value_t = 10_000_000)]
        max_steps: u64,
    },
    /// Write the JSONL trace of one run.
    Trace {
        #[arg(long, value_enum)]
        backend: Backend,
        #[arg(long)]
        machine: String,
        #[arg(long)]
        input: String,
        #[arg(long)]
        space: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000_000)]
        max_steps: u64,
    },
    /// Check 3-symbol weights entry by entry against the hand construction.
    VerifyLiteral {
        #[arg(long)]
        weights: PathBuf,
        /// Write the check list as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

type Res<T> = Result<T, String>;

fn err(e: Error) -> String {
    e.to_string()
}

fn read(path: &Path) -> Res<String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> Res<()> {
    fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// A TM from the corpus or from disk, with the corpus entry when known.
fn load_tm(machine: &str) -> Res<(TmSpec, Option<CorpusEntry>)> {
    if let Some(e) = corpus::entry(machine) {
        return Ok((e.tm.clone(), Some(e)));
    }
    let path = Path::new(machine);
    if !path.exists() {
        return Err(format!(
            "`{machine}` is neither a corpus machine nor a file"
        ));
    }
    match parse_machine(&read(path)?).map_err(err)? {
        AnyMachine::Tm(tm) => Ok((tm, None)),
        AnyMachine::Pm(_) => Err(format!(
            "{machine} is a Post machine, expected a Turing machine"
        )),
    }
}

fn load_pm(path: &Path) -> Res<PmSpec> {
    match parse_machine(&read(path)?).map_err(err)? {
        AnyMachine::Pm(pm) => Ok(pm),
        AnyMachine::Tm(_) => Err(format!(
            "{} is a Turing machine, expected a Post machine",
            path.display()
        )),
    }
}

fn space_for(
    tm: &TmSpec,
    entry: Option<&CorpusEntry>,
    input: &str,
    space: Option<usize>,
    max_steps: u64,
) -> Res<usize> {
    if let Some(s) = space {
        return Ok(s);
    }
    if let Some(e) = entry {
        return Ok((e.space)(input.len()));
    }
    let (stats, _) = tm_run(tm, input, ResourceLimits::new(max_steps, usize::MAX)).map_err(err)?;
    Ok(stats.space_cells)
}

fn jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Runs one backend and returns the answer plus its trace as JSONL.
fn run_backend(
    backend: Backend,
    machine: &str,
    input: &str,
    space: Option<usize>,
    max_steps: u64,
    mlp: bool,
) -> Res<(Option<u8>, String)> {
    let (tm, entry) = load_tm(machine)?;
    let s = space_for(&tm, entry.as_ref(), input, space, max_steps)?;
    let limits = ResourceLimits::new(max_steps, s);
    match backend {
        Backend::Tm => {
            let mut recs: Vec<TraceRecord> = Vec::new();
            let (stats, _) =
                tm_run_with(&tm, input, limits, |r, _| recs.push(r.clone())).map_err(err)?;
            Ok((stats.output_bit, jsonl(&recs)))
        }
        Backend::Pm => {
            let art = compile_tm_to_pm(&tm, s).map_err(err)?;
            let mut recs: Vec<TraceRecord> = Vec::new();
            let (stats, _) = pm_run_with(
                &art.pm,
                input,
                art.queue_size,
                ResourceLimits::new(max_steps, art.queue_size + 1),
                |r, _| recs.push(r.clone()),
            )
            .map_err(err)?;
            Ok((stats.output_bit, jsonl(&recs)))
        }
        Backend::Tf => {
            let art = compile_tm_to_pm(&tm, s).map_err(err)?;
            let mut w = compile_pm_to_tf(&art.pm, art.queue_size).map_err(err)?;
            let mode = if mlp {
                w.attach_mlp(DEFAULT_HIDDEN_CAP).map_err(err)?;
                FfMode::Mlp
            } else {
                FfMode::Dispatch
            };
            let g =
                generate_mode(&w, input, ResourceLimits::new(max_steps, 0), mode).map_err(err)?;
            Ok((g.summary.answer, g.trace_jsonl()))
        }
    }
}

fn show(answer: Option<u8>) -> String {
    answer.map_or_else(|| "none".to_string(), |b| b.to_string())
}

fn execute(cmd: Command) -> Res<bool> {
    match cmd {
        Command::CompilePm {
            machine,
            space,
            out,
            meta,
        } => {
            let (tm, _) = load_tm(&machine)?;
            let art = compile_tm_to_pm(&tm, space).map_err(err)?;
            write(&out, &art.pm.to_json())?;
            if let Some(m) = meta {
                write(&m, &art.metadata_json())?;
            }
            println!(
                "wrote {} ({} states, {} symbols, queue size {})",
                out.display(),
                art.pm.num_states(),
                art.pm.num_symbols(),
                art.queue_size
            );
            Ok(true)
        }
        Command::CompileTf {
            pm,
            window,
            out,
            mlp,
        } => {
            let pm = load_pm(&pm)?;
            let mut w = compile_pm_to_tf(&pm, window).map_err(err)?;
            if mlp {
                w.attach_mlp(DEFAULT_HIDDEN_CAP).map_err(err)?;
            }
            write(&out, &w.to_json())?;
            println!(
                "wrote {} (d = {}, |V| = {}, window {})",
                out.display(),
                w.layout.dim(),
                w.layout.vocab,
                w.window
            );
            Ok(true)
        }
        Command::Run {
            backend,
            machine,
            input,
            space,
            trace,
            max_steps,
            mlp,
        } => {
            let (answer, text) = run_backend(backend, &machine, &input, space, max_steps, mlp)?;
            println!("answer {}", show(answer));
            if let Some(p) = trace {
                write(&p, &text)?;
                println!("trace {}", p.display());
            }
            Ok(true)
        }
        Command::Trace {
            backend,
            machine,
            input,
            space,
            out,
            max_steps,
        } => {
            let (answer, text) = run_backend(backend, &machine, &input, space, max_steps, false)?;
            write(&out, &text)?;
            println!("answer {}", show(answer));
            println!("trace {}", out.display());
            Ok(true)
        }
        Command::Diff {
            machine,
            max_len,
            report,
            measure_space,
            mlp,
            max_steps,
        } => {
            let entry = corpus::entry(&machine).ok_or_else(|| {
                format!("unknown corpus machine `{machine}` (try parity, palindrome, binary-increment, copy-compare, minimal)")
            })?;
            let opts = DiffOptions {
                max_len,
                space: if measure_space {
                    SpaceMode::Measured
                } else {
                    SpaceMode::Declared
                },
                max_steps,
                ff_mode: if mlp { FfMode::Mlp } else { FfMode::Dispatch },
            };
            let rep = run_suite(&entry, &opts).map_err(err)?;
            if let Some(p) = &report {
                write(p, &rep.to_jsonl())?;
            }
            let failed = rep.failures().count();
            println!(
                "{}: {} inputs, {} failed, max pm_steps/(P t) {:.3}",
                rep.machine,
                rep.rows.len(),
                failed,
                rep.max_step_factor()
            );
            for r in rep.failures().take(10) {
                println!("  FAIL {:?}: {}", r.input, r.failures.join("; "));
            }
            if let Some(p) = report {
                println!("report {}", p.display());
            }
            Ok(failed == 0)
        }
        Command::VerifyLiteral { weights, report } => {
            let w = TfWeights::from_json(&read(&weights)?).map_err(err)?;
            let r = verify_paper_literal(&w).map_err(err)?;
            for c in &r.checks {
                println!(
                    "{:<15} {}  {}",
                    c.name,
                    if c.passed { "ok" } else { "FAIL" },
                    c.detail
                );
            }
            if let Some(p) = report {
                write(
                    &p,
                    &serde_json::to_string_pretty(&r).expect("report serializes"),
                )?;
            }
            Ok(r.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
