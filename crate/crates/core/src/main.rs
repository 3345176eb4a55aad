use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ecasim::bounds::bounds_table;
use ecasim::engine;
use ecasim::experiment::{self, parse_bounds_params, parse_config, run_matrix};
use ecasim::replicate::{replication_configs, Execution};
use ecasim::{BackoffParams, PhyParams};

#[derive(Parser)]
#[command(name = "ecasim", version, about = "Slot-level CSMA/CA and CSMA/ECA contention simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment file and write one summary row per cell.
    Simulate {
        config: PathBuf,
        /// Base seed; replication i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        /// Replications per cell.
        #[arg(long)]
        runs: Option<u32>,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Also write a per-slot log of every run to this file. Meant for
        /// short runs.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Run replications one after another on the calling thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Analytic throughput bounds for 1..=n-max contenders.
    Bounds {
        #[arg(long)]
        n_max: usize,
        /// Experiment file supplying PHY, MAC and payload settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn simulate(
    config: &Path,
    seed: Option<u64>,
    runs: Option<u32>,
    out: Option<&Path>,
    format: Format,
    trace: Option<&Path>,
    sequential: bool,
) -> Result<bool, String> {
    let text = std::fs::read_to_string(config).map_err(|e| format!("{}: {e}", config.display()))?;
    let mut matrix = parse_config(&text).map_err(|e| format!("{}: {e}", config.display()))?;
    if let Some(seed) = seed {
        matrix = matrix.with_seed(seed);
    }
    if let Some(runs) = runs {
        if runs == 0 {
            return Err("--runs must be at least 1".into());
        }
        matrix = matrix.with_runs(runs);
    }
    log::info!("{} cells x {} runs", matrix.cells.len(), matrix.runs);

    let execution = if sequential { Execution::Sequential } else { Execution::Parallel };
    let (results, errors) = run_matrix(&matrix, execution);
    for e in &errors {
        eprintln!("error: {e}");
    }

    let mut w = output(out).map_err(|e| format!("cannot open output: {e}"))?;
    match format {
        Format::Csv => experiment::write_csv(&results, &mut w).map_err(|e| e.to_string())?,
        Format::Json => experiment::write_json(&results, &mut w).map_err(|e| e.to_string())?,
    }
    w.flush().map_err(|e| e.to_string())?;

    if let Some(path) = trace {
        let file = File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut tw = csv::Writer::from_writer(BufWriter::new(file));
        for (i, cell) in matrix.cells.iter().enumerate() {
            for cfg in replication_configs(&cell.scenario, matrix.runs) {
                let (_, log) = engine::run_with_trace(&cfg).map_err(|e| e.to_string())?;
                experiment::write_trace(&mut tw, i, cfg.seed, &log).map_err(|e| e.to_string())?;
            }
        }
        tw.flush().map_err(|e| e.to_string())?;
    }
    Ok(errors.is_empty())
}

fn bounds(n_max: usize, config: Option<&Path>, out: Option<&Path>, format: Format) -> Result<(), String> {
    let (phy, backoff, payload) = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_bounds_params(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => (PhyParams::default(), BackoffParams::default(), 8192),
    };
    if n_max == 0 {
        return Err("--n-max must be at least 1".into());
    }
    let rows = bounds_table(1..=n_max, &backoff, &phy, payload).map_err(|e| e.to_string())?;
    let mut w = output(out).map_err(|e| format!("cannot open output: {e}"))?;
    match format {
        Format::Csv => experiment::write_bounds_csv(&rows, &mut w).map_err(|e| e.to_string())?,
        Format::Json => serde_json::to_writer_pretty(&mut w, &rows).map_err(|e| e.to_string())?,
    }
    w.flush().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            config,
            seed,
            runs,
            out,
            format,
            trace,
            sequential,
        } => simulate(&config, seed, runs, out.as_deref(), format, trace.as_deref(), sequential),
        Command::Bounds {
            n_max,
            config,
            out,
            format,
        } => bounds(n_max, config.as_deref(), out.as_deref(), format).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
