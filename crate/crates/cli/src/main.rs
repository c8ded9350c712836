use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use crossinspect::evm::{assemble, decode_hex, lift_bytecode, LiftInput, SignatureTable};
use crossinspect::graphs::GraphFormat;
use crossinspect::ir::{serialize_ir, Universe};
use crossinspect::pipeline::{render_report, run_pipeline, Config, ExitPolicy, GraphKind, Manifest, SemanticsMode};

#[derive(Parser)]
#[command(name = "crossinspect", version, about = "Cross-contract vulnerability detection for EVM contracts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze the contracts of a deployment manifest.
    Analyze(AnalyzeArgs),
    /// Assemble a `.easm` fixture to hex.
    Assemble { source: PathBuf },
    /// Lift runtime bytecode (hex) to IR.
    Lift {
        bytecode: PathBuf,
        #[arg(long, default_value = "Contract")]
        name: String,
        /// Function signature such as `transfer(address,uint256)`; repeatable.
        #[arg(long = "sig")]
        signatures: Vec<String>,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Single-threaded search and taint without memoization.
    #[arg(long)]
    serial: bool,
    /// Worker cap; 0 means one per entry.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// off, heuristic, or file:<path> for a prediction sidecar.
    #[arg(long, default_value = "heuristic", value_parser = parse_from::<SemanticsMode>)]
    semantics: SemanticsMode,
    /// Ignore heuristic labels (only sidecar or IR labels apply).
    #[arg(long)]
    no_heuristics: bool,
    #[arg(long)]
    threshold: Option<f64>,
    /// Include the lifted and labeled IR in the output.
    #[arg(long)]
    emit_ir: bool,
    /// callgraph, icfg or sdg, optionally with `:dot`.
    #[arg(long, value_parser = parse_graph)]
    emit_graph: Option<(GraphKind, GraphFormat)>,
    #[arg(long, default_value = "text")]
    format: String,
    /// Drop state-variable read/write/revert edges from the SDG.
    #[arg(long)]
    no_sd_edges: bool,
    /// Report overflow indicators without requiring tainted operands.
    #[arg(long)]
    overflow_any: bool,
    /// any, confirmed or never: which findings make the exit code 1.
    #[arg(long, default_value = "any", value_parser = parse_from::<ExitPolicy>)]
    fail_on: ExitPolicy,
    #[arg(long)]
    max_paths: Option<usize>,
    /// Add wall-clock stage timings to the report.
    #[arg(long)]
    timing: bool,
}

fn parse_from<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, String> {
    s.parse()
}

fn parse_graph(s: &str) -> Result<(GraphKind, GraphFormat), String> {
    let (kind, format) = match s.split_once(':') {
        Some((k, "dot")) => (k, GraphFormat::Dot),
        Some((k, "edges")) => (k, GraphFormat::Edges),
        Some((_, f)) => return Err(format!("unknown graph format `{f}` (edges, dot)")),
        None => (s, GraphFormat::Edges),
    };
    Ok((kind.parse()?, format))
}

fn analyze(args: AnalyzeArgs) -> ExitCode {
    let manifest = match Manifest::load(&args.manifest) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut config = Config {
        serial: args.serial,
        workers: args.workers,
        semantics: args.semantics,
        heuristics: !args.no_heuristics,
        no_sd_edges: args.no_sd_edges,
        overflow_requires_taint: !args.overflow_any,
        emit_ir: args.emit_ir,
        emit_graph: args.emit_graph,
        timing: args.timing,
        ..Config::default()
    };
    if let Some(t) = args.threshold {
        config.threshold = t;
    }
    if let Some(n) = args.max_paths {
        config.max_paths_per_pair = n;
    }
    let report = match run_pipeline(&manifest, &config) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match render_report(&report, &args.format) {
        Ok(text) => print!("{text}"),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    ExitCode::from(report.exit_code(args.fail_on) as u8)
}

fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Analyze(args) => return Ok(analyze(args)),
        Command::Assemble { source } => {
            let text = std::fs::read_to_string(&source).with_context(|| format!("reading {}", source.display()))?;
            let code = assemble(&text)?;
            println!("0x{}", hex::encode(code));
        }
        Command::Lift {
            bytecode,
            name,
            signatures,
        } => {
            let text = std::fs::read_to_string(&bytecode).with_context(|| format!("reading {}", bytecode.display()))?;
            let code = decode_hex(&text)?;
            let mut table = SignatureTable::default();
            for s in &signatures {
                table.add(s).with_context(|| format!("bad signature `{s}`"))?;
            }
            let storage = Default::default();
            let input = LiftInput {
                name: &name,
                address: None,
                signatures: &table,
                storage_names: &storage,
            };
            let lifted = lift_bytecode(&code, &input)?;
            for d in &lifted.diagnostics {
                eprintln!("{d}");
            }
            print!("{}", serialize_ir(&Universe::new(vec![lifted.contract])));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("CROSSINSPECT_LOG")).init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
