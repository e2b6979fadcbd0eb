//! Command-line front end: configuration parsing, runners and report output.

pub mod config;
pub mod oracle;
pub mod run;

use std::fs;
use std::path::Path;

pub use config::{parse_config, RunConfig};
pub use run::{
    exit_code, run_check_structure, run_envelope, run_oracle, run_simulate, run_sweep, Outcome, Status, SweepAxis,
};

use crate::error::Result;

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&fs::read_to_string(path)?)
}

/// Writes every file of `outcome` into `dir` (created if missing).
pub fn write_outcome(dir: &Path, outcome: &Outcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, content) in &outcome.files {
        fs::write(dir.join(name), content)?;
    }
    Ok(())
}
