use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stairprune::advisor::{LinearOracle, Objective};
use stairprune::dispatch::Method;
use stairprune::io;
use stairprune::model::{builtin_network, NetworkModel, BUILTIN_NETWORKS};
use stairprune::pipeline::{self, EmulateOptions};
use stairprune::profile::Profile;
use stairprune::report::{emit_heatmap, HeatmapFormat, DEFAULT_DISTANCES};
use stairprune::staircase::DEFAULT_REL_TOL;
use stairprune::{Error, Result};

/// Latency staircase analysis and latency-aware pruning advice for
/// convolution layers.
#[derive(Debug, Parser)]
#[command(name = "stairprune", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the pruned configurations of one layer as a config CSV.
    Sweep(SweepArgs),
    /// Synthesize a measurement file from a config CSV and a device profile.
    Emulate(EmulateArgs),
    /// Reduce a measurement file to per-layer median curves.
    Ingest(IngestArgs),
    /// Detect plateaus, optimal points, speedups and (optionally) regimes.
    Analyze(AnalyzeArgs),
    /// Recommend a channel count per layer.
    Advise(AdviseArgs),
    /// Render a speedup heatmap from an analysis speedup CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Built-in network name or path to a network JSON file.
    #[arg(long)]
    network: String,
    #[arg(long)]
    layer: String,
    #[arg(long, default_value_t = 1)]
    min_channels: u32,
    #[arg(long, default_value_t = 1)]
    step: u32,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmulateArgs {
    /// Config CSV produced by `sweep`.
    #[arg(long)]
    input: PathBuf,
    /// Device profile TOML; the bundled layer-16 profile when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value = "gemm")]
    method: Method,
    #[arg(long, default_value_t = 10)]
    runs: u32,
    /// Relative run-to-run noise amplitude.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Measurement CSV.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Curve CSV produced by `ingest`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_REL_TOL)]
    rel_tol: f64,
    /// Also split each curve into K latency regimes.
    #[arg(long, value_name = "K")]
    regimes: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AdviseArgs {
    /// Curve CSV produced by `ingest`.
    #[arg(long)]
    input: PathBuf,
    /// Report layers in this network's order.
    #[arg(long)]
    network: Option<String>,
    /// Fastest-fit objective: the most channels whose latency fits the budget.
    #[arg(long, conflicts_with = "min_accuracy")]
    budget_ms: Option<f64>,
    /// Accuracy-floor objective, scored by the kept-channel fraction.
    #[arg(long)]
    min_accuracy: Option<f64>,
    /// Output directory for recommendations.csv and report.txt; the text
    /// report goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// speedups.csv written by `analyze`.
    #[arg(long)]
    input: PathBuf,
    /// Order rows by this network's layers.
    #[arg(long)]
    network: Option<String>,
    #[arg(long, default_value = "svg")]
    format: HeatmapFormat,
    /// Comma-separated prune distances for the columns.
    #[arg(long, value_delimiter = ',')]
    distances: Option<Vec<u32>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_network(spec: &str) -> Result<NetworkModel> {
    if BUILTIN_NETWORKS.contains(&spec.to_ascii_lowercase().as_str()) {
        builtin_network(spec)
    } else if Path::new(spec).is_file() {
        NetworkModel::from_json(&std::fs::read_to_string(spec)?)
    } else {
        Err(Error::UnknownNetwork(spec.to_string()))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_or_print(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, body)?;
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sweep(a) => {
            let net = load_network(&a.network)?;
            let configs = pipeline::sweep(&net, &a.layer, a.min_channels, a.step)?;
            write_or_print(a.out.as_deref(), &io::configs_to_csv(&configs))
        }
        Command::Emulate(a) => {
            let configs = io::parse_configs_str(&read(&a.input)?)?;
            let profile = match &a.profile {
                Some(p) => Profile::from_toml_str(&read(p)?)?,
                None => Profile::layer16(),
            };
            let opts = EmulateOptions { method: a.method, runs: a.runs, jitter: a.jitter, seed: a.seed };
            let file = pipeline::emulate(&configs, &profile, &opts)?;
            write_or_print(a.out.as_deref(), &file.to_csv())
        }
        Command::Ingest(a) => {
            let file = io::parse_measurements_str(&read(&a.input)?)?;
            let curves = pipeline::ingest(&file)?;
            write_or_print(a.out.as_deref(), &io::curves_to_csv(&curves))
        }
        Command::Analyze(a) => {
            let curves = io::parse_curves_str(&read(&a.input)?)?;
            let analyses = pipeline::analyze(&curves, a.rel_tol, a.regimes)?;
            for path in pipeline::write_analysis(&a.out, &analyses)? {
                eprintln!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Advise(a) => {
            let curves = io::parse_curves_str(&read(&a.input)?)?;
            let net = a.network.as_deref().map(load_network).transpose()?;
            let oracle = LinearOracle::from_curves(&curves);
            let objective = match (a.budget_ms, a.min_accuracy) {
                (Some(b), _) => Objective::Budget(b),
                (None, Some(m)) => Objective::Accuracy { oracle: &oracle, min_accuracy: m },
                (None, None) => Objective::ParetoEdge,
            };
            let reports = pipeline::advise(&curves, net.as_ref(), objective)?;
            let title = match &net {
                Some(n) => format!("{} pruning advice", n.name()),
                None => "pruning advice".to_string(),
            };
            match &a.out {
                Some(dir) => {
                    for path in pipeline::write_advice(dir, &title, &reports)? {
                        eprintln!("wrote {}", path.display());
                    }
                }
                None => print!("{}", io::recommendations_to_text(&title, &reports)),
            }
            Ok(())
        }
        Command::Report(a) => {
            let speedups = io::parse_speedups_str(&read(&a.input)?)?;
            let net = a.network.as_deref().map(load_network).transpose()?;
            let distances = a.distances.unwrap_or_else(|| DEFAULT_DISTANCES.to_vec());
            let grid = pipeline::heatmap(&speedups, net.as_ref(), &distances)?;
            write_or_print(a.out.as_deref(), &emit_heatmap(&grid, a.format)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
