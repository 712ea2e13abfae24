//! Seeded experiment runner: each subcommand generates its data, runs one
//! algorithm and writes plain CSV/JSON artifacts that are a pure function of
//! the resolved configuration.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod error;
pub mod output;
pub mod settings;

pub use error::CliError;

use output::OutDir;
use settings::{echo_to_string, read_config, Settings};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "varinfer", version, about = "Seeded variational inference experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// RNG seed; falls back to VARINFER_SEED, then 42.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for output files, created if missing.
    #[arg(long, default_value = "varinfer-out")]
    pub out_dir: PathBuf,
    /// Flat key=value file of settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// CAVI on a synthetic Bayesian Gaussian mixture.
    Gmm(commands::gmm::GmmArgs),
    /// Forward and reverse KL Gaussian fits to a 1-D mixture.
    Klproj(commands::klproj::KlprojArgs),
    /// Train a VAE on binary 8x8 two-pattern images.
    Vae(commands::vae::VaeArgs),
    /// Train a VAE-GAN on 2-D two-moons data.
    Vaegan(commands::vaegan::VaeganArgs),
    /// Check ELBO + KL = log evidence and ELBO <= log evidence on random models.
    IdentityCheck(commands::identity::IdentityArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gmm(_) => "gmm",
            Command::Klproj(_) => "klproj",
            Command::Vae(_) => "vae",
            Command::Vaegan(_) => "vaegan",
            Command::IdentityCheck(_) => "identity-check",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Gmm(a) => &a.common,
            Command::Klproj(a) => &a.common,
            Command::Vae(a) => &a.common,
            Command::Vaegan(a) => &a.common,
            Command::IdentityCheck(a) => &a.common,
        }
    }
}

/// What a finished run reports back to the caller.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub summary: String,
}

/// Resolves settings, validates them, then runs the subcommand. The resolved
/// settings are written to `config.txt`, which can be passed back through
/// `--config` to repeat the run.
pub fn run(cli: &Cli) -> Result<RunReport, CliError> {
    let common = cli.command.common();
    let file = match &common.config {
        Some(path) => read_config(path)?,
        None => Default::default(),
    };
    let mut settings = Settings::new(file);
    let seed = settings.seed(common.seed)?;
    let plan = match &cli.command {
        Command::Gmm(a) => commands::Plan::Gmm(commands::gmm::resolve(a, &mut settings)?),
        Command::Klproj(a) => commands::Plan::Klproj(commands::klproj::resolve(a, &mut settings)?),
        Command::Vae(a) => commands::Plan::Vae(commands::vae::resolve(a, &mut settings)?),
        Command::Vaegan(a) => commands::Plan::Vaegan(commands::vaegan::resolve(a, &mut settings)?),
        Command::IdentityCheck(a) => commands::Plan::Identity(commands::identity::resolve(a, &mut settings)?),
    };
    let echo = settings.finish()?;

    let out = OutDir::create(&common.out_dir)?;
    out.write("config.txt", &echo_to_string(cli.command.name(), &echo))?;
    let (mut files, summary) = plan.execute(seed, &out)?;
    files.insert(0, "config.txt".to_string());
    Ok(RunReport {
        out_dir: common.out_dir.clone(),
        files,
        summary,
    })
}

/// Parses `args`, runs, reports to stdout/stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let start = Instant::now();
    match run(&cli) {
        Ok(report) => {
            println!("{}", report.summary);
            println!("wrote {} files to {}", report.files.len(), report.out_dir.display());
            eprintln!("wall time: {:.3}s", start.elapsed().as_secs_f64());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
