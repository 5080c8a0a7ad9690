//! `pavg`: averaged-function, root, certificate, verification and resonance
//! runs from a JSON config plus flags.
//!
//! Exit codes: 0 ok, 2 config or usage error, 3 empty result, 4 numerical
//! failure.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{parse_param, parse_system, Overrides, RunConfig, SystemSpec};

#[derive(Debug, Parser)]
#[command(
    name = "pavg",
    version,
    about = "Averaging analysis of periodic solutions of x' = eps g(t, x, eps)"
)]
struct Cli {
    /// JSON run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Builtin system (linear, nonsmooth_vdp, classical_vdp) or path to a JSON field spec.
    #[arg(long, global = true, value_parser = parse_system)]
    system: Option<SystemSpec>,
    /// Parameter binding `name=value`; repeatable.
    #[arg(long = "param", global = true, value_parser = parse_param)]
    params: Vec<(String, f64)>,
    /// Quadrature nodes (even, at least 16).
    #[arg(long, global = true)]
    nodes: Option<usize>,
    #[arg(long, global = true)]
    root_tol: Option<f64>,
    #[arg(long, global = true)]
    residual_tol: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Main output file (stdout if absent).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Averaged function (and optionally its Jacobian) at a point, as JSON.
    Avg {
        /// Comma-separated coordinates.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Option<Vec<f64>>,
        #[arg(long)]
        jacobian: bool,
    },
    /// Zeros of the averaged function in a box, as CSV.
    Roots {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        lo: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        hi: Vec<f64>,
        /// Grid cells per axis.
        #[arg(long, default_value_t = 24)]
        grid: usize,
    },
    /// Hypothesis report at a point, as JSON.
    Certify {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Option<Vec<f64>>,
        /// Sampling radius of the diagnostics.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        lipschitz_samples: Option<usize>,
        #[arg(long)]
        pairwise_samples: Option<usize>,
    },
    /// Periodic orbits along decreasing eps: CSV rows plus a JSON summary.
    Verify {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        point: Option<Vec<f64>>,
        /// Comma-separated, strictly decreasing.
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        /// JSON summary file (default: stdout when --out is given, else omitted).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Resonance curve of a forced van der Pol model, as CSV (+ SVG).
    Resonance {
        #[arg(long, value_enum)]
        model: Model,
        #[arg(long)]
        lambda: f64,
        /// Detuning range `LO HI`.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
        a: Vec<f64>,
        /// Number of detuning values (1 to 100000).
        #[arg(long)]
        n: usize,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    Nonsmooth,
    Classical,
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: e.into(),
        }
    }
    pub fn empty(msg: impl fmt::Display) -> Self {
        Self {
            code: 3,
            error: anyhow::anyhow!("{msg}"),
        }
    }
    pub fn numerical(e: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 4,
            error: e.into(),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::usage)?,
        None => RunConfig::default(),
    };
    let mut o = Overrides {
        system: cli.system,
        params: cli.params,
        quadrature_nodes: cli.nodes,
        root_tol: cli.root_tol,
        residual_tol: cli.residual_tol,
        seed: cli.seed,
        output: cli.out,
        ..Default::default()
    };
    match cli.command {
        Command::Avg { point, jacobian } => {
            o.point = point;
            commands::avg(&resolve(base, o)?, jacobian)
        }
        Command::Roots { lo, hi, grid } => commands::roots(&resolve(base, o)?, &lo, &hi, grid),
        Command::Certify {
            point,
            delta,
            lipschitz_samples,
            pairwise_samples,
        } => {
            o.point = point;
            o.delta = delta;
            o.lipschitz_samples = lipschitz_samples;
            o.pairwise_samples = pairwise_samples;
            commands::certify(&resolve(base, o)?)
        }
        Command::Verify { point, eps, summary } => {
            o.point = point;
            o.eps = eps;
            o.summary = summary;
            commands::verify(&resolve(base, o)?)
        }
        Command::Resonance {
            model,
            lambda,
            a,
            n,
            svg,
        } => {
            o.svg = svg;
            let model = match model {
                Model::Nonsmooth => pavg_core::vdp::VdpModel::Nonsmooth,
                Model::Classical => pavg_core::vdp::VdpModel::Classical,
            };
            commands::resonance(&resolve(base, o)?, model, lambda, [a[0], a[1]], n)
        }
    }
}

fn resolve(base: RunConfig, o: Overrides) -> Result<RunConfig, Failure> {
    let cfg = base.apply(o);
    cfg.validate().map_err(Failure::usage)?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pavg: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
