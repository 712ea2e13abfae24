pub mod gmm;
pub mod identity;
pub mod klproj;
pub mod vae;
pub mod vaegan;

use crate::error::CliError;
use crate::output::OutDir;

/// A validated subcommand ready to run.
pub enum Plan {
    Gmm(gmm::GmmSettings),
    Klproj(klproj::KlprojSettings),
    Vae(vae::VaeSettings),
    Vaegan(vaegan::VaeganSettings),
    Identity(identity::IdentitySettings),
}

impl Plan {
    /// Runs the plan and returns the written file names and a one-line summary.
    pub fn execute(self, seed: u64, out: &OutDir) -> Result<(Vec<String>, String), CliError> {
        match self {
            Plan::Gmm(s) => gmm::execute(&s, seed, out),
            Plan::Klproj(s) => klproj::execute(&s, out),
            Plan::Vae(s) => vae::execute(&s, seed, out),
            Plan::Vaegan(s) => vaegan::execute(&s, seed, out),
            Plan::Identity(s) => identity::execute(&s, seed, out),
        }
    }
}

pub(crate) fn require(cond: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Validation(msg()))
    }
}

pub(crate) fn names(files: &[&str]) -> Vec<String> {
    files.iter().map(|s| s.to_string()).collect()
}
