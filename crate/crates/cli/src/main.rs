use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qnem::experiment::{self, CalibrationMode, ExperimentConfig, ResultTable, CONFUSION_FILE};

#[derive(Parser)]
#[command(name = "qnem", version, about = "Depolarizing-noise mitigation experiments on a simulated XX chain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) the sweep and write records and tables.
    Run(RunArgs),
    /// Measure the readout confusion matrix through the simulator.
    Calibrate(CalibrateArgs),
    /// Rebuild the tables of an existing run directory.
    Report(ReportArgs),
    /// Run built-in checks against exact references.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML); defaults apply to missing keys.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory (falls back to `output_dir` in the config, then `run`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(short, long)]
    workers: Option<usize>,
    /// Exact expectation values instead of sampled shots.
    #[arg(long, conflicts_with = "shots")]
    exact: bool,
    /// Sampled mode with this many shots per circuit.
    #[arg(long)]
    shots: Option<u64>,
    /// Randomized instances per circuit.
    #[arg(long)]
    instances: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    PerQubit,
    Full,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Output file or directory for the confusion matrix JSON.
    #[arg(short, long, default_value = CONFUSION_FILE)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    shots: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory holding `config.toml` and `records.jsonl`.
    dir: PathBuf,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(short, long)]
    workers: Option<usize>,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, String> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    Ok(config)
}

fn summarize(table: &ResultTable) {
    for row in &table.rows {
        if !row.failures.is_empty() {
            eprintln!("step {}: {}", row.step, row.failures.join("; "));
        }
    }
    let done = table.rows.iter().filter(|r| r.is_complete()).count();
    println!("{done}/{} steps complete", table.rows.len());
}

fn run(args: RunArgs) -> Result<bool, String> {
    let mut config = load_config(&args.common)?;
    if args.exact {
        config.exact = true;
    }
    if let Some(shots) = args.shots {
        config.exact = false;
        config.shots = shots;
    }
    if let Some(n) = args.instances {
        config.instances = n;
    }
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("run"));
    let outcome = experiment::run(&config, &out, args.workers).map_err(|e| e.to_string())?;
    println!("computed {} cells into {}", outcome.computed_cells, out.display());
    summarize(&outcome.table);
    Ok(outcome.table.is_complete())
}

fn calibrate(args: CalibrateArgs) -> Result<bool, String> {
    let mut config = load_config(&args.common)?;
    if let Some(mode) = args.mode {
        config.calibration.mode = match mode {
            ModeArg::PerQubit => CalibrationMode::PerQubit,
            ModeArg::Full => CalibrationMode::Full,
        };
    }
    if let Some(shots) = args.shots {
        config.calibration.shots = shots;
    }
    let confusion = experiment::calibrate(&config).map_err(|e| e.to_string())?;
    let path = if args.out.is_dir() {
        args.out.join(CONFUSION_FILE)
    } else {
        args.out
    };
    std::fs::write(&path, confusion.to_json()).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(true)
}

fn report(dir: &Path) -> Result<bool, String> {
    let table = experiment::report(dir).map_err(|e| e.to_string())?;
    summarize(&table);
    Ok(table.is_complete())
}

fn selftest(args: SelftestArgs) -> Result<bool, String> {
    let checks = experiment::selftest(args.workers);
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Report(a) => report(&a.dir),
        Command::Selftest(a) => selftest(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
