use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use retarded_parabolic::harness::{self, exit_code, Outcome, SweepAxis};
use retarded_parabolic::{Error, Result};

#[derive(Parser)]
#[command(name = "rpde", version, about = "Retarded parabolic equation simulator and envelope checker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to [output] dir, then ./rpde-out)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the summary on stdout
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the problem and write the norm table
    Simulate(Common),
    /// Check every envelope against a simulated trajectory
    Envelope(Common),
    /// Repeat runs over one parameter
    Sweep {
        #[command(flatten)]
        common: Common,
        /// q, r, dt, n_modes or gain
        #[arg(long)]
        axis: String,
        /// Comma-separated values
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Compare against the finite-difference solver
    Oracle(Common),
    /// Sample the structure conditions on f and g
    CheckStructure(Common),
}

fn execute(cli: Cli) -> (Result<Outcome>, bool) {
    let (common, job): (&Common, Box<dyn Fn(&harness::RunConfig) -> Result<Outcome>>) = match &cli.command {
        Command::Simulate(c) => (c, Box::new(harness::run_simulate)),
        Command::Envelope(c) => (c, Box::new(harness::run_envelope)),
        Command::Oracle(c) => (c, Box::new(harness::run_oracle)),
        Command::CheckStructure(c) => (c, Box::new(harness::run_check_structure)),
        Command::Sweep { common, axis, values } => {
            let values = values.clone();
            let axis: Result<SweepAxis> = axis.parse();
            (
                common,
                Box::new(move |cfg| harness::run_sweep(cfg, axis.as_ref().map_err(|e| Error::Config(e.to_string())).copied()?, &values)),
            )
        }
    };
    let quiet = common.quiet;
    let res = harness::load_config(&common.config).and_then(|cfg| {
        let out = job(&cfg)?;
        let dir = common
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("rpde-out"));
        harness::write_outcome(&dir, &out)?;
        Ok(out)
    });
    (res, quiet)
}

fn main() -> ExitCode {
    let (res, quiet) = execute(Cli::parse());
    match &res {
        Ok(o) if !quiet => print!("{}", o.summary),
        Ok(_) => {}
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&res) as u8)
}
