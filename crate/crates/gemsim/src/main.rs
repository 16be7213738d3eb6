use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gemsim::commands::{self, CapacityArgs, Failure, SweepParam};

/// Gradient echo memory simulator.
///
/// A scenario is a file path or the name of a shipped preset.
#[derive(Parser)]
#[command(name = "gemsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its tables.
    Run {
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a scenario for each value of one parameter.
    Sweep {
        scenario: String,
        /// storage_time, control_rabi, recall_slope_ratio or offset.
        #[arg(long, value_parser = parse_param)]
        param: SweepParam,
        /// Comma-separated values; units as in scenario files.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: PathBuf,
        /// Concurrent runs.
        #[arg(long, env = "GEMSIM_JOBS")]
        jobs: Option<usize>,
    },
    /// Steady-state absorption line with and without the gradient.
    Spectrum {
        scenario: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the decay model to a `t_us,eta` CSV.
    Fit {
        data: PathBuf,
        /// Hold the diffusion time at this value, µs.
        #[arg(long)]
        fix_tau_d: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Capacity of the memory against storage time.
    Capacity {
        #[arg(long, default_value_t = 0.98)]
        eta0: f64,
        /// µs.
        #[arg(long, default_value_t = 22.0)]
        tau_d: f64,
        /// µs.
        #[arg(long, default_value_t = 60.0)]
        tau0: f64,
        /// µs.
        #[arg(long, default_value_t = 30.0)]
        t_max: f64,
        #[arg(long, default_value_t = 301)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a scenario without running it.
    Validate { scenario: String },
}

fn parse_param(name: &str) -> Result<SweepParam, String> {
    SweepParam::from_name(name).ok_or_else(|| {
        let names: Vec<&str> = SweepParam::ALL.iter().map(|p| p.as_str()).collect();
        format!("unknown parameter `{name}` (expected one of {})", names.join(", "))
    })
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { scenario, out } => commands::run(&commands::load(&scenario)?, &out),
        Command::Sweep {
            scenario,
            param,
            values,
            out,
            jobs,
        } => {
            let values = param.parse_values(&values)?;
            commands::sweep(&commands::load(&scenario)?, param, &values, jobs, &out)
        }
        Command::Spectrum { scenario, out } => commands::spectrum(&commands::load(&scenario)?, &out),
        Command::Fit { data, fix_tau_d, out } => commands::fit(&data, fix_tau_d, &out),
        Command::Capacity {
            eta0,
            tau_d,
            tau0,
            t_max,
            points,
            out,
        } => commands::capacity(
            &CapacityArgs {
                eta0,
                tau_d,
                tau0,
                t_max,
                points,
            },
            &out,
        ),
        Command::Validate { scenario } => {
            let summary = commands::validate(&commands::load(&scenario)?)?;
            println!("{summary}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("gemsim: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
