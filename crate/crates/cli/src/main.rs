//! `ssl-nmar`: efficiency tables, simulations, fitting, data generation and
//! missingness diagnostics for two-class normal discrimination with
//! partially labelled data.
//!
//! Exit codes: 0 ok, 1 output could not be written, 2 quadrature failure,
//! 3 simulation failure, 4 bad input or arguments, 5 fit failure,
//! 6 diagnostics failure.

mod commands;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ssl-nmar", version, about)]
struct Cli {
    /// Worker threads for parallel work (default: all cores).
    #[arg(long, global = true, env = "SSL_NMAR_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    /// Closed form from a fully labelled sample.
    Cc,
    /// EM ignoring the missing-label mechanism.
    Ig,
    /// Full likelihood including the missing-label model.
    Full,
    /// Classification ML with hard assignment.
    Cml,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recompute an asymptotic relative efficiency table.
    Tables {
        /// 1: ignore-mechanism efficiency, all labels missing at random;
        /// 2: full-likelihood efficiency; 3: ignore relative to full.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        which: u8,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Monte Carlo relative efficiency of the ignore-mechanism rule.
    Simulate {
        #[arg(long, default_value_t = 500)]
        n: usize,
        /// Replications.
        #[arg(long = "reps", short = 'B', default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        delta: f64,
        #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
        xi0: f64,
        #[arg(long, default_value_t = -5.0, allow_negative_numbers = true)]
        xi1: f64,
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long, default_value_t = 0.5)]
        pi1: f64,
        #[arg(long, default_value_t = 1000)]
        bootstrap_reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Sweep the whole grid at the table's sample size (4: n = 500,
        /// 5: n = 100) instead of a single setting.
        #[arg(long, value_parser = clap::value_parser!(u8).range(4..=5))]
        table: Option<u8>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit a model to a sample file.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Starting missingness intercept for the full fit.
        #[arg(long, allow_negative_numbers = true)]
        init_xi0: Option<f64>,
        /// Starting missingness slope for the full fit.
        #[arg(long, allow_negative_numbers = true)]
        init_xi1: Option<f64>,
        #[arg(long, default_value_t = ssl_nmar::estimate::DEFAULT_MAX_ITER)]
        max_iter: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a partially labelled sample.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        p: usize,
        #[arg(long, allow_negative_numbers = true)]
        delta: f64,
        #[arg(long, default_value_t = 0.5)]
        pi1: f64,
        #[arg(long, allow_negative_numbers = true)]
        xi0: f64,
        #[arg(long, allow_negative_numbers = true)]
        xi1: f64,
        #[arg(long)]
        seed: u64,
        /// CSV destination; the manifest goes next to it.
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare labelled and unlabelled rows by posterior entropy.
    Diagnose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

pub const EXIT_IO: u8 = 1;
pub const EXIT_QUADRATURE: u8 = 2;
pub const EXIT_SIMULATION: u8 = 3;
pub const EXIT_INPUT: u8 = 4;
pub const EXIT_FIT: u8 = 5;
pub const EXIT_DIAGNOSTICS: u8 = 6;

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Tables { which, format, output } => commands::tables(which, format, output.as_deref()),
        Command::Simulate {
            n,
            reps,
            delta,
            xi0,
            xi1,
            p,
            pi1,
            bootstrap_reps,
            seed,
            table,
            format,
            output,
        } => match table {
            Some(t) => commands::simulate_table(t, reps, bootstrap_reps, seed, format, output.as_deref()),
            None => commands::simulate(
                commands::SimArgs { n, reps, delta, xi0, xi1, p, pi1, bootstrap_reps, seed },
                format,
                output.as_deref(),
            ),
        },
        Command::Fit { input, method, init_xi0, init_xi1, max_iter, output } => {
            commands::fit(&input, method, init_xi0, init_xi1, max_iter, output.as_deref())
        }
        Command::Gen { n, p, delta, pi1, xi0, xi1, seed, output } => {
            commands::gen(n, p, delta, pi1, xi0, xi1, seed, &output)
        }
        Command::Diagnose { input, output } => commands::diagnose(&input, output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_INPUT);
        }
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
