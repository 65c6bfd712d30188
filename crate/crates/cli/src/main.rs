use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "sharpflow", version, about = "Propagation symbols and the curve flows they drive")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print σ, δ, ω, η, α(1) and σ/δ as JSON.
    Constants {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve one mode problem and write the profile CSV plus a JSON sidecar.
    Mode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 2048)]
        nodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate a law on a log grid, verify it and fit exponents.
    Symbol {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        law: String,
        #[arg(long)]
        lmin: f64,
        #[arg(long)]
        lmax: f64,
        #[arg(long, default_value_t = 61)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the ε-family with intermediate surface diffusion.
    LimitIsd {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        /// Largest admissible λ.
        #[arg(long, default_value_t = 1e4)]
        lambda_max: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evolve a closed curve and write frames, diagnostics and a report.
    Flow {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        law: String,
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long)]
        tend: f64,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        enforce_area: bool,
        /// Fixed time step; adaptive when absent.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = sharpflow::flow::DEFAULT_TOLERANCE)]
        tol: f64,
        #[arg(long)]
        svg: bool,
    },
    /// Run the invariant suite and print a pass/fail matrix.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2048)]
        nodes: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = commands::configure_threads() {
        return e.report();
    }
    let result = match cli.command {
        Command::Constants { config } => commands::constants(&config),
        Command::Mode { config, lambda, nodes, out } => commands::mode(&config, lambda, nodes, &out),
        Command::Symbol { config, law, lmin, lmax, points, out } => {
            commands::symbol(config.as_deref(), &law, lmin, lmax, points, &out)
        }
        Command::LimitIsd { config, eps, lambdas, lambda_max, out } => {
            commands::limit_isd(config.as_deref(), &eps, &lambdas, lambda_max, &out)
        }
        Command::Flow { config, law, shape, n, tend, frames, out_dir, enforce_area, dt, tol, svg } => {
            commands::flow(commands::FlowArgs {
                config: config.as_deref(),
                law: &law,
                shape: &shape,
                n,
                t_end: tend,
                frames,
                out_dir: &out_dir,
                enforce_area,
                dt,
                tol,
                svg,
            })
        }
        Command::Verify { config, nodes } => commands::verify(&config, nodes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
