//! Command-line front end. `run_cli` returns the process exit code:
//! 0 on success, 1 on a domain error, 2 on a usage error.

use std::error::Error;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analytic::{sweep, Dim, Dims};
use crate::compiler::{load_workload, CompiledWorkload, StaticSchedule};
use crate::fabric::{build_fabric, run_program, write_csv, write_jsonl, FabricConfig, RunOptions, TraceEvent};
use crate::isa::{assemble, disassemble, isa_table_hash, read_program, write_program, MessageProgram, PROGRAM_MAGIC};
use crate::pipeline::{compile_workload, resolve_config, run_workload, OracleVerdict};
use crate::report::{comparison_report, default_span_points, throughput_report};

type CliResult = Result<(), Box<dyn Error>>;

#[derive(Debug, Parser)]
#[command(name = "mipu", about = "Message-driven fabric toolkit: assembler, simulator, compiler and models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Fabric configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Write the primary output here instead of standard output.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write the event trace here; `.csv` selects CSV, anything else JSON Lines.
    #[arg(long, global = true, value_name = "PATH")]
    trace: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long = "cycle-budget", global = true, default_value_t = 1_000_000)]
    cycle_budget: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
    Jsonl,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assemble a text program into the binary program format.
    Asm { input: PathBuf },
    /// Print a binary program as assembly text.
    Disasm { input: PathBuf },
    /// Simulate a program (text or binary) and print its run report.
    Sim { program: PathBuf },
    /// Compile a workload file into a binary program.
    Compile {
        #[arg(long)]
        workload: PathBuf,
    },
    /// Compile, simulate and check a workload against the oracle.
    Run {
        #[arg(long)]
        workload: PathBuf,
    },
    /// Closed-form latency sweep over one dimension.
    Sweep {
        #[arg(long)]
        vary: Dim,
        #[arg(long)]
        lo: u64,
        #[arg(long)]
        hi: u64,
        /// Values of the two fixed dimensions, e.g. `m=128,p=128`.
        #[arg(long, default_value = "n=128,m=128,p=128")]
        fixed: String,
    },
    /// Throughput model against the published figures.
    Throughput {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Closed forms, simulated matmul spans and throughput in one table.
    Report {
        #[command(flatten)]
        model: ModelArgs,
        /// SiteMs per fabric for the simulated span sweep.
        #[arg(long, default_value_t = 240)]
        span_sitems: u16,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 1.0)]
    lane_efficiency: f64,
    #[arg(long, default_value_t = 0)]
    fill_cycles: u64,
    /// Images in the simulated batch through the example network.
    #[arg(long, default_value_t = 64)]
    batch: usize,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the exit code.
pub fn run_cli<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let version: &'static str = Box::leak(format!("{} (isa {})", env!("CARGO_PKG_VERSION"), isa_table_hash()).into_boxed_str());
    let matches = match Cli::command().version(version).try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(rendered.as_bytes()) } else { stdout.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return 2;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write) -> CliResult {
    let c = &cli.common;
    match &cli.command {
        Command::Asm { input } => cmd_asm(c, input, stdout),
        Command::Disasm { input } => {
            let program = read_program(fs::File::open(input).map_err(|e| io_err(input, e))?)?;
            emit(c, stdout, disassemble(&program).as_bytes())
        }
        Command::Sim { program } => cmd_sim(c, program, stdout),
        Command::Compile { workload } => cmd_compile(c, workload, stdout),
        Command::Run { workload } => cmd_run(c, workload, stdout),
        Command::Sweep { vary, lo, hi, fixed } => {
            let result = sweep(*vary, *lo, *hi, parse_fixed(fixed)?)?;
            let text = match c.format.unwrap_or(Format::Csv) {
                Format::Csv | Format::Text => result.to_csv(),
                Format::Json => result.to_json() + "\n",
                Format::Jsonl => serde_json::to_string(&result)? + "\n",
            };
            emit(c, stdout, text.as_bytes())
        }
        Command::Throughput { model } => {
            let r = throughput_report(model.lane_efficiency, model.fill_cycles, model.batch.max(2))?;
            let text = match c.format.unwrap_or(Format::Text) {
                Format::Text => r.to_text(),
                Format::Csv => r.to_csv(),
                f => json(&r, f)?,
            };
            emit(c, stdout, text.as_bytes())
        }
        Command::Report { model, span_sitems } => {
            let r = comparison_report(
                &default_span_points(),
                *span_sitems,
                c.seed,
                model.lane_efficiency,
                model.fill_cycles,
                model.batch.max(2),
            )?;
            let text = match c.format.unwrap_or(Format::Text) {
                Format::Text => r.to_text(),
                Format::Csv => r.to_csv(),
                f => json(&r, f)?,
            };
            emit(c, stdout, text.as_bytes())
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> String {
    format!("{}: {e}", path.display())
}

fn json<T: Serialize>(value: &T, f: Format) -> Result<String, serde_json::Error> {
    Ok(if f == Format::Jsonl { serde_json::to_string(value)? } else { serde_json::to_string_pretty(value)? } + "\n")
}

fn emit(c: &Common, stdout: &mut dyn Write, bytes: &[u8]) -> CliResult {
    match &c.out {
        Some(p) => fs::write(p, bytes).map_err(|e| io_err(p, e))?,
        None => stdout.write_all(bytes)?,
    }
    Ok(())
}

fn parse_fixed(text: &str) -> Result<Dims, String> {
    let mut d = Dims::new(128, 128, 128);
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("expected dim=value, got '{part}'"))?;
        let v: u64 = v.trim().parse().map_err(|_| format!("bad value in '{part}'"))?;
        match k.trim().parse::<Dim>()? {
            Dim::N => d.n = v,
            Dim::M => d.m = v,
            Dim::P => d.p = v,
        }
    }
    Ok(d)
}

fn load_config(c: &Common) -> Result<Option<FabricConfig>, Box<dyn Error>> {
    match &c.config {
        Some(p) => Ok(Some(FabricConfig::from_text(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?)),
        None => Ok(None),
    }
}

fn run_options(c: &Common) -> RunOptions {
    RunOptions { cycle_budget: c.cycle_budget, keep_trace: c.trace.is_some() }
}

fn write_trace(c: &Common, events: &[TraceEvent]) -> CliResult {
    if let Some(p) = &c.trace {
        let file = std::io::BufWriter::new(fs::File::create(p).map_err(|e| io_err(p, e))?);
        if p.extension().is_some_and(|e| e == "csv") {
            write_csv(events, file)?;
        } else {
            write_jsonl(events, file)?;
        }
    }
    Ok(())
}

fn cmd_asm(c: &Common, input: &Path, stdout: &mut dyn Write) -> CliResult {
    let text = fs::read_to_string(input).map_err(|e| io_err(input, e))?;
    let program = assemble(&text)?;
    if program.is_empty() {
        return Err("no injections".into());
    }
    let mut bytes = Vec::new();
    write_program(&program, &mut bytes)?;
    match &c.out {
        Some(p) => {
            fs::write(p, &bytes).map_err(|e| io_err(p, e))?;
            writeln!(stdout, "{} injections -> {}", program.len(), p.display())?;
        }
        None => stdout.write_all(&bytes)?,
    }
    Ok(())
}

fn load_program(path: &Path) -> Result<MessageProgram, Box<dyn Error>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.starts_with(PROGRAM_MAGIC) {
        Ok(read_program(bytes.as_slice())?)
    } else {
        Ok(assemble(std::str::from_utf8(&bytes)?)?)
    }
}

fn cmd_sim(c: &Common, path: &Path, stdout: &mut dyn Write) -> CliResult {
    let program = load_program(path)?;
    let mut fabric = build_fabric(load_config(c)?.unwrap_or_default())?;
    let out = run_program(&mut fabric, &program, &run_options(c))?;
    write_trace(c, &out.trace)?;
    let r = &out.report;
    let text = match c.format.unwrap_or(Format::Text) {
        Format::Text | Format::Csv => {
            let mut s = format!(
                "total_cycles {}\noperation_span {}\ninjected {}\ncreated {}\nexecuted {}\negressed {}\nhops {}\nbus_transfers {}\nstalls {}\nfifo_overflows {}\ntrace_hash {}\n",
                r.total_cycles, r.operation_span, r.injected, r.created, r.executed, r.egressed, r.hops, r.bus_transfers, r.stalls, r.fifo_overflows, r.trace_hash
            );
            for e in &r.egress {
                s.push_str(&format!("egress @{} mem:{} {:?}\n", e.cycle, e.address, e.value));
            }
            s
        }
        f => json(r, f)?,
    };
    emit(c, stdout, text.as_bytes())
}

#[derive(Serialize)]
struct CompileSummary<'a> {
    sitems: u16,
    blocks: Vec<BlockSummary<'a>>,
}

#[derive(Serialize)]
struct BlockSummary<'a> {
    injections: usize,
    required_sitems: u16,
    schedule: &'a StaticSchedule,
    placement: &'a [crate::compiler::Placed],
}

fn cmd_compile(c: &Common, path: &Path, stdout: &mut dyn Write) -> CliResult {
    let w = load_workload(path)?;
    let cfg = resolve_config(&w, load_config(c)?.as_ref());
    let blocks = compile_workload(&w, &cfg)?;
    if let Some(out) = &c.out {
        for (i, b) in blocks.iter().enumerate() {
            let target = block_path(out, i, blocks.len());
            let mut bytes = Vec::new();
            write_program(&b.program, &mut bytes)?;
            fs::write(&target, bytes).map_err(|e| io_err(&target, e))?;
        }
    }
    let summary = CompileSummary {
        sitems: cfg.sitems,
        blocks: blocks.iter().map(block_summary).collect(),
    };
    let text = match c.format.unwrap_or(Format::Text) {
        Format::Text | Format::Csv => {
            let mut s = String::new();
            for (i, b) in blocks.iter().enumerate() {
                let sch = &b.schedule;
                s.push_str(&format!(
                    "block {i}: {} injections, {} SiteOs on {} SiteMs, programming CC{}..CC{}, programmed at CC{}, operation CC{}..CC{}\n",
                    b.program.len(),
                    b.placement.len(),
                    b.required_sitems,
                    sch.programming.start,
                    sch.programming.end,
                    sch.programmed_at,
                    sch.operation.start,
                    sch.operation.end
                ));
                if c.out.is_none() {
                    s.push_str(&disassemble(&b.program));
                }
            }
            s
        }
        f => json(&summary, f)?,
    };
    stdout.write_all(text.as_bytes())?;
    Ok(())
}

fn block_summary(b: &CompiledWorkload) -> BlockSummary<'_> {
    BlockSummary { injections: b.program.len(), required_sitems: b.required_sitems, schedule: &b.schedule, placement: &b.placement }
}

/// `prog.bin` for a single block, `prog.0.bin`, `prog.1.bin`, ... otherwise.
fn block_path(out: &Path, i: usize, n: usize) -> PathBuf {
    if n == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.{i}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{i}"),
    };
    out.with_file_name(name)
}

fn cmd_run(c: &Common, path: &Path, stdout: &mut dyn Write) -> CliResult {
    let w = load_workload(path)?;
    let cfg = resolve_config(&w, load_config(c)?.as_ref());
    let run = run_workload(&w, &cfg, &run_options(c))?;
    write_trace(c, &run.trace)?;
    let s = &run.summary;
    let text = match c.format.unwrap_or(Format::Text) {
        Format::Text => s.to_text(),
        Format::Csv => {
            let mut t = String::from("index,simulated,expected\n");
            for (i, (a, b)) in run.output.data().iter().zip(run.expected.data()).enumerate() {
                t.push_str(&format!("{i},{a:?},{b:?}\n"));
            }
            t
        }
        f => json(s, f)?,
    };
    emit(c, stdout, text.as_bytes())?;
    if s.oracle == OracleVerdict::Fail {
        return Err("simulated output differs from the reference".into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_cli(std::iter::once("mipu").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(call(&["sweep", "--bogus"]).0, 2);
        assert_eq!(call(&["frobnicate"]).0, 2);
        assert_eq!(call(&[]).0, 2);
    }

    #[test]
    fn version_carries_isa_hash() {
        let (code, out, _) = call(&["--version"]);
        assert_eq!(code, 0);
        assert!(out.contains(&isa_table_hash()));
    }

    #[test]
    fn fixed_dims() {
        assert_eq!(parse_fixed("m=4, p=9").unwrap(), Dims::new(128, 4, 9));
        assert!(parse_fixed("q=1").is_err());
        assert!(parse_fixed("m").is_err());
    }

    #[test]
    fn block_paths() {
        assert_eq!(block_path(Path::new("a/prog.bin"), 0, 1), Path::new("a/prog.bin"));
        assert_eq!(block_path(Path::new("a/prog.bin"), 2, 3), Path::new("a/prog.2.bin"));
        assert_eq!(block_path(Path::new("prog"), 1, 3), Path::new("prog.1"));
    }
}
