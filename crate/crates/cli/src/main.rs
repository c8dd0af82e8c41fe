use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod error;

#[derive(Parser, Debug)]
#[command(name = "patchflow", version, about = "Multi-patch age-of-infection epidemic toolkit")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PATCHFLOW_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run replications of the stochastic simulator.
    Simulate(SimulateArgs),
    /// Solve the deterministic limit (lln) or the boundary/PDE system (pde).
    Solve(SolveArgs),
    /// Run a validation study and write report.json / report.csv.
    Validate(ValidateArgs),
    /// Reshape output CSVs into long-format plot tables.
    Plotdata(PlotdataArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Population size.
    #[arg(long, default_value_t = 10_000)]
    pub n: u64,
    #[arg(long, default_value_t = 1)]
    pub reps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (default: $PATCHFLOW_OUT/simulate).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub output_dt: f64,
    /// Comma-separated upper edges of the cumulative age bins.
    #[arg(long, value_delimiter = ',')]
    pub age_edges: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub hist_every: usize,
    /// Tau-leaping step; results are APPROXIMATE.
    #[arg(long)]
    pub approximate: Option<f64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum EngineArg {
    Lln,
    Pde,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub engine: EngineArg,
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    pub h: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Spacing of the stored surface grid (lln); 0 disables the surface.
    #[arg(long, default_value_t = 0.1)]
    pub surface_dt: f64,
    /// Density probes `t:a` (pde); repeatable.
    #[arg(long = "probe")]
    pub probes: Vec<String>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Study {
    Flln,
    Refine,
    Crosscheck,
    #[value(name = "reduce-q0")]
    ReduceQ0,
    #[value(name = "reduce-sir")]
    ReduceSir,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[arg(value_enum)]
    pub study: Study,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid step (crosscheck, reduce-q0, reduce-sir, flln reference).
    #[arg(long, allow_negative_numbers = true)]
    pub h: Option<f64>,
    /// Comma-separated decreasing steps (refine).
    #[arg(long, value_delimiter = ',')]
    pub h_list: Vec<f64>,
    /// Restrict refine to one engine (default: both).
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,
    #[arg(long, default_value_t = 1.8)]
    pub min_order: f64,
    /// Comma-separated population sizes (flln).
    #[arg(long, value_delimiter = ',')]
    pub n_list: Vec<u64>,
    /// Replications per population size (flln).
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of random probes (crosscheck, reduce-q0).
    #[arg(long)]
    pub probes: Option<usize>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum KindArg {
    Timeseries,
    AgeDensity,
    Heatmap,
}

#[derive(Args, Debug)]
pub struct PlotdataArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Output CSV (default: $PATCHFLOW_OUT/plotdata/<kind>.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = commands::thread_pool(cli.threads).and_then(|pool| {
        let threads = pool.current_num_threads();
        pool.install(|| match &cli.command {
            Command::Simulate(a) => commands::simulate(a, threads),
            Command::Solve(a) => commands::solve(a, threads),
            Command::Validate(a) => commands::validate(a, threads),
            Command::Plotdata(a) => commands::plotdata(a, threads),
        })
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

