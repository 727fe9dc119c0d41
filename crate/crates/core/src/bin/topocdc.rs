use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use topocdc::experiment::{
    emit, emit_ledgers, report_csv, report_json, run_sweep, summary_lines, theory_csv, ExperimentConfig, Format,
    Sizing, TopologyKind,
};

/// Simulate coded MapReduce shuffling on a star or fat-tree network and
/// check the measured per-link loads against the optimal tradeoff.
#[derive(Debug, Parser)]
#[command(name = "topocdc", version)]
struct Args {
    /// Number of servers K.
    #[arg(long = "servers", short = 'K')]
    servers: usize,

    /// Computation load r; repeat for a sweep.
    #[arg(long = "computation-load", short = 'r', required = true)]
    loads: Vec<usize>,

    /// Servers reducing each output function.
    #[arg(long = "reducers-per-function", short = 's', default_value_t = 1)]
    reducers: usize,

    /// Number of input files, or `auto` / `auto:M` for the smallest valid count times M.
    #[arg(long, default_value = "auto")]
    files: Sizing,

    /// Number of output functions, or `auto` / `auto:M`.
    #[arg(long, default_value = "auto")]
    functions: Sizing,

    /// Bits per intermediate value.
    #[arg(long = "iv-bits", short = 'T', default_value_t = 64)]
    value_bits: usize,

    #[arg(long, default_value = "star")]
    topology: TopologyKind,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Write the network as JSON.
    #[arg(long)]
    dump_topology: Option<PathBuf>,

    /// Write per-link bit counts as CSV (one file per run in a sweep).
    #[arg(long)]
    ledger: Option<PathBuf>,

    /// Write the run report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,

    #[arg(long, default_value = "csv")]
    format: Format,

    /// Write the theoretical tradeoff curve and its convex envelope as CSV.
    #[arg(long)]
    theory: Option<PathBuf>,
}

fn run(args: Args) -> anyhow::Result<bool> {
    let config = ExperimentConfig {
        servers: args.servers,
        loads: args.loads,
        reducers: args.reducers,
        files: args.files,
        functions: args.functions,
        value_bits: args.value_bits,
        topology: args.topology,
        seed: args.seed,
    };

    if let Some(path) = &args.dump_topology {
        let topology = config.build_topology()?;
        fs::write(path, topology.to_json()?).with_context(|| format!("writing {}", path.display()))?;
    }

    let report = run_sweep(&config)?;
    for row in &report.rows {
        eprintln!("run {} finished in {:.3}s", row.run_id, row.wall_time.as_secs_f64());
    }
    for line in summary_lines(&report) {
        eprintln!("{line}");
    }

    match &args.out {
        Some(path) => emit(&report, args.format, path).with_context(|| format!("writing {}", path.display()))?,
        None => print!(
            "{}",
            match args.format {
                Format::Csv => report_csv(&report)?,
                Format::Json => report_json(&report)?,
            }
        ),
    }
    if let Some(path) = &args.ledger {
        emit_ledgers(&report, path).with_context(|| format!("writing ledger {}", path.display()))?;
    }
    if let (Some(path), Some(theory)) = (&args.theory, &report.theory) {
        fs::write(path, theory_csv(theory)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report.pass())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
