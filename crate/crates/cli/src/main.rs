//! `wavemg` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wavemg::fnpf::UpdateStrategy;
use wavemg::solvers::Method;
use wavemg::Error;

use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "wavemg", version, about = "p-multigrid spectral element wave simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// One steady Laplace solve; writes report.json and solution.csv.
    Solve(RunArgs),
    /// Time-domain run; writes gauges.csv, solver_stats.csv and summary.json.
    Simulate(RunArgs),
    /// Element/order sweep; writes scaling.csv.
    Scaling(ScalingArgs),
    /// Writes the mesh of a case in the text mesh format, or checks a file.
    Mesh(MeshArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Built-in case name or path of a config file with a `preset` table.
    #[arg(long)]
    case: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    imax: Option<usize>,
    /// Operator update strategy: 1, 2 or 3.
    #[arg(long)]
    strategy: Option<UpdateStrategy>,
    #[arg(long)]
    nu1: Option<usize>,
    #[arg(long)]
    nu2: Option<usize>,
    /// `fixed:N`, `refined` or `refined:CAP`.
    #[arg(long)]
    overlap: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    /// Number of time steps (overrides the case duration).
    #[arg(long)]
    steps: Option<usize>,
    /// Comma-separated tolerances; simulate runs once per entry.
    #[arg(long, value_delimiter = ',')]
    tolerances: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Elements in x of the first point; doubled for every further point.
    #[arg(long)]
    n_x0: Option<usize>,
    #[arg(long)]
    n_sigma: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    /// Order pairs such as `5x3,9x7`.
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<String>>,
    /// Overlap modes such as `fixed:1,refined`.
    #[arg(long, value_delimiter = ',')]
    overlaps: Option<Vec<String>>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MeshArgs {
    #[arg(long)]
    case: Option<String>,
    /// Output mesh file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parse and validate an existing mesh file instead.
    #[arg(long)]
    check: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            method: self.method,
            rtol: self.rtol,
            atol: self.atol,
            imax: self.imax,
            strategy: self.strategy,
            overlap: self.overlap.clone(),
            nu1: self.nu1,
            nu2: self.nu2,
            dt: self.dt,
            steps: self.steps,
            tolerances: self.tolerances.clone(),
        }
    }

    fn config(&self) -> wavemg::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig {
                version: config::CONFIG_VERSION,
                ..Default::default()
            },
        };
        cfg.overrides = cfg.overrides.merge(self.overrides());
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        Ok(cfg)
    }
}

fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("WAVEMG_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("WAVEMG_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> wavemg::Result<commands::Outcome> {
    init_threads()?;
    match cli.command {
        Command::Solve(a) => {
            let cfg = a.config()?;
            let out = a.out.clone().or(cfg.out.clone()).unwrap_or_else(|| "out".into());
            commands::solve(&cfg.case(a.case.as_deref())?, &out)
        }
        Command::Simulate(a) => {
            let cfg = a.config()?;
            let out = a.out.clone().or(cfg.out.clone()).unwrap_or_else(|| "out".into());
            let tolerances = cfg.overrides.tolerances.clone();
            commands::simulate(&cfg.case(a.case.as_deref())?, tolerances.as_deref(), &out)
        }
        Command::Scaling(a) => commands::scaling(&a),
        Command::Mesh(a) => commands::mesh(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(commands::Outcome::Converged) => ExitCode::SUCCESS,
        Ok(commands::Outcome::NotConverged) => {
            eprintln!("wavemg: solver did not converge");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("wavemg: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
