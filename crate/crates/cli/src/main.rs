use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use sitechan::link::{run_simulation, sweep_snapshot, write_metrics, LinkError};
use sitechan::scenario::{ConfigError, Scenario, TraceSource};
use sitechan::trace::{parse_trace, validate_trace, write_trace, PathType, TraceError, TraceSet};

#[derive(Parser)]
#[command(name = "sitechan", version, about = "Trace-driven site-specific channel simulator")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ray-trace a generative scenario into a trace CSV.
    GenerateTrace {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a trace CSV for consistency violations.
    Validate {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run the end-to-end link simulation and write per-snapshot metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use this trace instead of the one the config names or generates.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Write the power of every beam pair at one snapshot.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Seconds; the nearest snapshot within half an interval is used.
        #[arg(long, allow_negative_numbers = true)]
        time: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

enum Failure {
    Findings,
    Config(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Findings => 1,
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

impl From<LinkError> for Failure {
    fn from(e: LinkError) -> Self {
        match e {
            LinkError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

fn read_trace(path: &Path) -> Result<TraceSet, Failure> {
    let file = File::open(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_trace(BufReader::new(file)).map_err(|e| match e {
        TraceError::Io(_) => Failure::Io(format!("{}: {e}", path.display())),
        _ => Failure::Config(format!("{}: {e}", path.display())),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn write_failed(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("cannot write {}: {e}", path.display()))
}

fn load_trace(scenario: &Scenario, override_path: Option<&Path>) -> Result<TraceSet, Failure> {
    match override_path {
        Some(p) => read_trace(p),
        None => Ok(scenario.trace()?),
    }
}

fn generate_trace(config: &Path, out: &Path) -> Result<(), Failure> {
    let scenario = Scenario::load(config)?;
    if !matches!(scenario.source, TraceSource::Generated(_)) {
        return Err(Failure::Config(format!(
            "{}: generate-trace needs `trajectory` and `environment` sections, not `trace_path`",
            config.display()
        )));
    }
    let trace = scenario.trace()?;
    write_trace(&trace, create(out)?).map_err(|e| write_failed(out, e))?;
    let count = |kind: PathType| trace.records().filter(|r| r.path_type == kind).count();
    println!(
        "wrote {}: {} snapshots, {} paths (LOS {}, REFL {}, DIFF {})",
        out.display(),
        trace.snapshots().len(),
        trace.record_count(),
        count(PathType::Los),
        count(PathType::Reflection),
        count(PathType::Diffraction),
    );
    Ok(())
}

fn validate(path: &Path) -> Result<(), Failure> {
    let trace = read_trace(path)?;
    let report = validate_trace(&trace);
    println!(
        "{}: {} snapshots, {} records",
        path.display(),
        trace.snapshots().len(),
        trace.record_count()
    );
    if report.is_empty() {
        println!("no violations");
        Ok(())
    } else {
        print!("{report}");
        Err(Failure::Findings)
    }
}

fn simulate(config: &Path, out: &Path, trace_path: Option<&Path>) -> Result<(), Failure> {
    let scenario = Scenario::load(config)?;
    let trace = load_trace(&scenario, trace_path)?;
    info!("simulating {} snapshots", trace.snapshots().len());
    let rows = run_simulation(&trace, &scenario.setup)?;
    write_metrics(&rows, create(out)?).map_err(|e| write_failed(out, e))?;

    let n = rows.len() as f64;
    let mean_sinr = rows.iter().map(|r| r.sinr_db).sum::<f64>() / n;
    let mean_tput = rows.iter().map(|r| r.delivered_bps).sum::<f64>() / n;
    let los = rows.iter().filter(|r| r.los).count() as f64 / n;
    println!(
        "wrote {}: {} snapshots, mean SINR {:.2} dB, mean throughput {:.2} Mb/s, LoS fraction {:.3}",
        out.display(),
        rows.len(),
        mean_sinr,
        mean_tput / 1e6,
        los
    );
    Ok(())
}

fn sweep(config: &Path, time: f64, out: &Path, trace_path: Option<&Path>) -> Result<(), Failure> {
    let scenario = Scenario::load(config)?;
    let trace = load_trace(&scenario, trace_path)?;
    let snapshot = scenario.snapshot_near(&trace, time)?;
    let table = sweep_snapshot(&snapshot, &scenario.setup)?;
    table.write(create(out)?).map_err(|e| write_failed(out, e))?;
    let best = table.best_row();
    println!(
        "wrote {}: t = {} s, {} pairs, best tx ({:.1}, {:.1}) rx ({:.1}, {:.1}) at {:.2} dBm",
        out.display(),
        snapshot.t,
        table.rows.len(),
        best.tx_direction.azimuth_deg(),
        best.tx_direction.zenith_deg(),
        best.rx_direction.azimuth_deg(),
        best.rx_direction.zenith_deg(),
        best.power_dbm()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match &cli.command {
        Command::GenerateTrace { config, out } => generate_trace(config, out),
        Command::Validate { trace } => validate(trace),
        Command::Simulate { config, out, trace } => simulate(config, out, trace.as_deref()),
        Command::Sweep {
            config,
            time,
            out,
            trace,
        } => sweep(config, *time, out, trace.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Findings => {}
                Failure::Config(m) | Failure::Io(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
