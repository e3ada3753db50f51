//! `risbr`: solve single recovery instances and run the seeded experiment
//! suites from the command line.
//!
//! Every subcommand reads the same JSON config (defaults apply when a key or
//! the whole file is omitted), then a handful of flags override individual
//! fields. Exit codes: 0 success, 1 I/O failure, 2 invalid input, 3 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use risbr_core::config::{OutputFormat, RunConfig};
use risbr_core::harness::{
    export_table, run_antenna_sweep, run_convergence, run_snapshot, run_traffic_sweep,
    write_manifest,
};
use risbr_core::optimizer::{check_feasibility, run_algorithm, SelectionStrategy};
use risbr_core::scenario::build_scenario;
use risbr_core::validate::{all_passed, run_all};
use risbr_core::{configure_threads, Error, Result};

#[derive(Parser)]
#[command(
    name = "risbr",
    version,
    about = "RIS-assisted recovery of a disconnected base station: solver and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario at the base seed and print a summary.
    Solve(CommonArgs),
    /// Record per-round objective traces over seeded trials.
    Convergence(CommonArgs),
    /// Solve one instance and tabulate the per-BS operating point.
    Snapshot(CommonArgs),
    /// Sweep traffic intensity over load patterns, RIS on and off.
    SweepTraffic(CommonArgs),
    /// Sweep the per-BS antenna count, RIS on and off.
    SweepAntennas(CommonArgs),
    /// Run the numerical self-checks and report pass/fail.
    Validate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; built-in defaults when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override experiment.base_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Remove the RIS (sets system.ris_elements to 0).
    #[arg(long)]
    no_ris: bool,
    /// Override solver.strategy.
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Override output.dir.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override output.format for exported tables.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Outer,
    PerIter,
    Greedy,
}

impl From<StrategyArg> for SelectionStrategy {
    fn from(value: StrategyArg) -> Self {
        match value {
            StrategyArg::Outer => SelectionStrategy::OuterEnumeration,
            StrategyArg::PerIter => SelectionStrategy::PerIterationEnumeration,
            StrategyArg::Greedy => SelectionStrategy::Greedy,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(value: FormatArg) -> Self {
        match value {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::Json(_) => 2,
        Error::NumericalFailure(_) => 3,
        Error::Io(_) => 1,
    }
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Solve(args) => cmd_solve(&load_config(args)?, args.out.is_some()),
        Command::Convergence(args) => cmd_convergence(&load_config(args)?),
        Command::Snapshot(args) => cmd_snapshot(&load_config(args)?),
        Command::SweepTraffic(args) => cmd_sweep_traffic(&load_config(args)?),
        Command::SweepAntennas(args) => cmd_sweep_antennas(&load_config(args)?),
        Command::Validate(args) => cmd_validate(&load_config(args)?),
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("RISBR_THREADS") else {
        configure_threads(None);
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            Error::invalid(format!(
                "RISBR_THREADS must be a positive integer, got {raw:?}"
            ))
        })?;
    configure_threads(Some(threads));
    Ok(())
}

fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.experiment.base_seed = seed;
    }
    if args.no_ris {
        config.system.ris_elements = 0;
    }
    if let Some(strategy) = args.strategy {
        config.solver.strategy = strategy.into();
    }
    if let Some(out) = &args.out {
        config.output.dir = out.display().to_string();
    }
    if let Some(format) = args.format {
        config.output.format = format.into();
    }
    config.validate()?;
    Ok(config)
}

fn cmd_solve(config: &RunConfig, write_output: bool) -> Result<()> {
    let scenario = build_scenario(config, config.experiment.base_seed)?;
    let result = run_algorithm(&scenario, &config.solver_config())?;
    check_feasibility(&scenario, &result)?;
    println!("selection:     {:?}", result.selection.indices());
    println!("objective:     {:.6e} bit/s", result.redistribution.total);
    println!(
        "survivability: {:.6}",
        result.redistribution.survivability
    );
    println!("trace rows:    {}", result.trace.len());
    println!("candidates:    {}", result.candidates_evaluated);
    println!("wall time:     {:.3} s", result.wall_time.as_secs_f64());
    if write_output {
        let dir = PathBuf::from(&config.output.dir);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("solve.json");
        std::fs::write(&path, serde_json::to_string_pretty(&result)? + "\n")?;
        write_manifest(&dir, "solve", "solve", config)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_convergence(config: &RunConfig) -> Result<()> {
    let rows = run_convergence(config)?;
    let dir = PathBuf::from(&config.output.dir);
    let path = export_table(&dir, "convergence", config.output.format, &rows)?;
    write_manifest(&dir, "convergence", "convergence", config)?;
    println!(
        "{} trace rows over {} trials",
        rows.len(),
        config.experiment.trials
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_snapshot(config: &RunConfig) -> Result<()> {
    let (rows, result) = run_snapshot(config)?;
    let dir = PathBuf::from(&config.output.dir);
    let path = export_table(&dir, "snapshot", config.output.format, &rows)?;
    write_manifest(&dir, "snapshot", "snapshot", config)?;
    println!("selection:     {:?}", result.selection.indices());
    println!(
        "survivability: {:.6}",
        result.redistribution.survivability
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep_traffic(config: &RunConfig) -> Result<()> {
    let rows = run_traffic_sweep(config)?;
    let dir = PathBuf::from(&config.output.dir);
    let path = export_table(&dir, "sweep_traffic", config.output.format, &rows)?;
    write_manifest(&dir, "sweep_traffic", "sweep-traffic", config)?;
    println!("{} sweep rows", rows.len());
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep_antennas(config: &RunConfig) -> Result<()> {
    let rows = run_antenna_sweep(config)?;
    let dir = PathBuf::from(&config.output.dir);
    let path = export_table(&dir, "sweep_antennas", config.output.format, &rows)?;
    write_manifest(&dir, "sweep_antennas", "sweep-antennas", config)?;
    println!("{} sweep rows", rows.len());
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_validate(config: &RunConfig) -> Result<()> {
    let reports = run_all(config.experiment.base_seed);
    for r in &reports {
        println!(
            "{} {:<24} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    if all_passed(&reports) {
        Ok(())
    } else {
        Err(Error::numerical("one or more self-checks failed"))
    }
}
