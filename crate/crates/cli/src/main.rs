use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use mobps_cli::{parse_file, run, Command, Exit, Format, ModelKind, Overrides};

/// Exact solves, balance fixed points, sweeps and coupled simulation of a
/// two-class processor-sharing cell with mobile class-2 users.
///
/// Exit status: 0 success, 1 configuration error, 2 no solution, 3
/// truncation failure, 4 audit failure.
#[derive(Debug, Parser)]
#[command(name = "mobps", version)]
struct Cli {
    /// Command to run; may instead come from `command` in the config file.
    #[arg(value_enum)]
    command: Option<Command>,
    /// Key=value config file with [model], [solver], [sweep], [sim] and [output] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda_net: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    /// Imbalance factor of the balance equation.
    #[arg(long)]
    beta: Option<f64>,
    /// Chain for `stationary` and `simulate`.
    #[arg(long, value_enum)]
    model: Option<ModelKind>,
    /// Shift of the Z process; defaults to ceil(mu / theta).
    #[arg(long)]
    k: Option<u64>,
    /// Comma-separated loads in (0, 1).
    #[arg(long, value_delimiter = ',')]
    rho_grid: Option<Vec<f64>>,
    /// Comma-separated increasing values of lambda_tot.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Class-1 share rho1 / rho along `sweep-rho`.
    #[arg(long)]
    mix: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Events per path (event cap for `cycles`).
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    batches: Option<u64>,
    /// Number of consecutive seeds for `couple`.
    #[arg(long)]
    seeds: Option<u64>,
    /// Number of cycles for `cycles`.
    #[arg(long)]
    cycles: Option<u64>,
    /// Event-by-event dump for `simulate` and `couple`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl Cli {
    fn overrides(self) -> Overrides {
        Overrides {
            command: self.command,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda_net: self.lambda_net,
            mu: self.mu,
            theta: self.theta,
            beta: self.beta,
            model: self.model,
            k: self.k,
            tol: self.tol,
            rho_grid: self.rho_grid,
            lambda_grid: self.lambda_grid,
            mix: self.mix,
            seed: self.seed,
            horizon: self.horizon,
            warmup: self.warmup,
            batches: self.batches,
            seeds: self.seeds,
            epsilon: self.epsilon,
            cycles: self.cycles,
            out: self.out,
            format: self.format,
            trace: self.trace,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { Exit::Config.code() as u8 } else { 0 });
        }
    };
    let file = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => parse_file(&text, &path.display().to_string()),
            Err(e) => {
                eprintln!("config error: cannot read {}: {e}", path.display());
                return ExitCode::from(Exit::Config.code() as u8);
            }
        },
        None => Ok(Overrides::default()),
    };
    let file = match file {
        Ok(o) => o,
        Err(errors) => {
            eprintln!("{errors}");
            return ExitCode::from(Exit::Config.code() as u8);
        }
    };
    let cfg = match file.merge(cli.overrides()).resolve() {
        Ok(c) => c,
        Err(errors) => {
            eprintln!("{errors}");
            return ExitCode::from(Exit::Config.code() as u8);
        }
    };
    let exit = match run(&cfg) {
        Ok(exit) => exit,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.exit
        }
    };
    ExitCode::from(exit.code() as u8)
}
