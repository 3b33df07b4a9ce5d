//! `nvsic` command-line front end.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod cache;
pub mod commands;
pub mod config;
pub mod plot;
pub mod reference;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    /// Some runs or fits failed; outputs for the rest were written.
    #[error("{0} of the requested runs failed")]
    Partial(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Partial(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nvsic", version, about = "Collection efficiency, spectra and lifetimes of NV centers in SiC nanopillars")]
pub struct Cli {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Reuse cached solver runs with an identical configuration.
    #[arg(long, global = true)]
    pub resume: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// FDTD sweep over bulk and pillar diameters for both dipole orientations.
    CollectionSweep,
    /// Fits bulk and pillar spectra and tabulates per-line enhancement.
    Fig4,
    /// Width ratios and center shifts from the same fits.
    Fig5,
    /// Filtered lifetime measurements across pillar diameters.
    Fig6,
    /// Confocal scan image of a pillar array beside bulk.
    Scan,
    /// One synthetic spectrum.
    SynthSpectrum {
        /// Pillar diameter; bulk when omitted.
        #[arg(long)]
        diameter: Option<f64>,
    },
    /// Fits seven Lorentzians to a spectrum CSV.
    FitSpectrum {
        #[arg(long)]
        input: PathBuf,
    },
    /// Fits a decay histogram CSV.
    FitLifetime {
        #[arg(long)]
        input: PathBuf,
    },
}

pub struct Context {
    pub config: RunConfig,
    pub out: PathBuf,
    pub resume: bool,
}

impl Context {
    pub fn dir(&self, sub: &str) -> Result<PathBuf, CliError> {
        let d = self.out.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| CliError::Io { path: d.clone(), source: e })?;
        Ok(d)
    }
}

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })
}

/// Writes through `f` and maps any library error to an I/O failure on
/// `path`.
pub fn write_with<E: std::fmt::Display>(path: &Path, f: impl FnOnce(BufWriter<File>) -> Result<(), E>) -> Result<(), CliError> {
    let w = create(path)?;
    f(w).map_err(|e| CliError::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) })
}

pub fn context(cli: &Cli) -> Result<Context, CliError> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let out = cli.out.clone().unwrap_or_else(|| config.out_dir.clone());
    Ok(Context { config, out, resume: cli.resume })
}

pub fn run(cli: Cli) -> ExitCode {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = context(&cli).and_then(|ctx| match &cli.command {
        Command::CollectionSweep => commands::sweep::run(&ctx),
        Command::Fig4 => commands::spectra::fig4(&ctx),
        Command::Fig5 => commands::spectra::fig5(&ctx),
        Command::Fig6 => commands::lifetime::fig6(&ctx),
        Command::Scan => commands::scan::run(&ctx),
        Command::SynthSpectrum { diameter } => commands::spectra::synth(&ctx, *diameter),
        Command::FitSpectrum { input } => commands::spectra::fit(&ctx, input),
        Command::FitLifetime { input } => commands::lifetime::fit(&ctx, input),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
