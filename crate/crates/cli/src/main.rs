//! `navipath`: generate, score, serve, simulate and evaluate slides.
//!
//! Machine-readable JSON goes to stdout, human summaries to stderr. Exit codes:
//! 0 success, 1 invalid input or usage, 2 filesystem errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use navipath_core::evaluate::AgentKind;
use navipath_core::recommend::Weights;

use commands::CliError;

#[derive(Parser)]
#[command(name = "navipath", version, about = "Whole-slide recommendation, navigation and evaluation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic slide pyramid with ground truth from a JSON spec.
    GenSlide {
        #[arg(long)]
        spec: PathBuf,
        /// Parent directory; the slide lands in `<out>/<id>`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every HPF of a slide and write `scores.json`.
    Score {
        #[arg(long)]
        slide: PathBuf,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Detection file replacing the built-in mitosis detector.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, env = "NAVIPATH_DATA_DIR")]
        data_dir: PathBuf,
        /// 0 picks a free port; the bound address is printed as JSON.
        #[arg(long, default_value_t = navipath_service::DEFAULT_PORT)]
        port: u16,
    },
    /// Run a simulated reader and write its trace and report.
    Simulate {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long, value_parser = parse_agent)]
        agent: AgentKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum number of events.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        w_cell: f64,
        #[arg(long, default_value_t = 1.0)]
        w_prolif: f64,
        #[arg(long, default_value_t = 1.0)]
        w_mitosis: f64,
        #[arg(long, default_value_t = navipath_core::recommend::DEFAULT_SENSITIVITY)]
        sensitivity: f64,
        /// Output directory (defaults to `<slide>/simulations`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute trial metrics for a trace and report.
    Eval {
        #[arg(long)]
        slide: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Match radius in level-0 pixels.
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

fn parse_agent(s: &str) -> Result<AgentKind, String> {
    s.parse().map_err(|e: navipath_core::evaluate::EvalError| e.to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSlide { spec, out } => commands::gen_slide(&spec, &out),
        Command::Score { slide, jobs, detections } => commands::score(&slide, jobs, detections.as_deref()),
        Command::Serve { data_dir, port } => commands::serve(data_dir, port),
        Command::Simulate { slide, agent, seed, budget, w_cell, w_prolif, w_mitosis, sensitivity, out } => {
            let weights = Weights::new(w_cell, w_prolif, w_mitosis, sensitivity).map_err(|e| CliError::Invalid(e.to_string()))?;
            commands::simulate(commands::SimulateArgs { slide: &slide, agent, seed, budget, weights, out: out.as_deref() })
        }
        Command::Eval { slide, trace, report, epsilon } => commands::eval(&slide, &trace, &report, epsilon),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
