//! `lipbound` command-line tool.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lipbound_cli::error::CliError;
use lipbound_cli::{commands, repro};

#[derive(Parser)]
#[command(name = "lipbound", version, about = "Certified spectral-norm and Lipschitz bounds")]
struct Cli {
    /// Seed for every random stream (power-iteration start, simulations).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write output here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral norm of a dense matrix (2-D .npy).
    SpecnormDense(commands::DenseArgs),
    /// Spectral-norm bound of a convolution filter (4-D .npy).
    SpecnormConv(commands::ConvArgs),
    /// Diagonal rescaling that makes a dense layer 1-Lipschitz.
    Rescale(commands::RescaleArgs),
    /// Product upper bound over a JSON layer manifest.
    Pub(commands::PubArgs),
    /// Certified radius from Monte-Carlo score samples.
    Certify(commands::CertifyArgs),
    /// Lipschitz bounds of Gaussian-smoothed functions.
    Smoothbound(commands::SmoothArgs),
    /// CSV data for desk-scale versions of the convergence and coverage figures.
    Repro(ReproArgs),
}

#[derive(clap::Args)]
struct ReproArgs {
    #[arg(long, value_enum)]
    figure: repro::Figure,
}

fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.cmd {
        Command::SpecnormDense(a) => commands::specnorm_dense(a, cli.seed),
        Command::SpecnormConv(a) => commands::specnorm_conv(a),
        Command::Rescale(a) => commands::rescale(a),
        Command::Pub(a) => commands::pub_bound(a),
        Command::Certify(a) => commands::certify(a),
        Command::Smoothbound(a) => commands::smoothbound(a),
        Command::Repro(a) => repro::run(a.figure, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match run(&cli) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("lipbound: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let written = match &cli.output {
        Some(p) => std::fs::write(p, out.as_bytes()),
        None => std::io::stdout().lock().write_all(out.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("lipbound: cannot write output: {e}");
        return ExitCode::from(2);
    }
    ExitCode::SUCCESS
}
