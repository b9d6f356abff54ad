//! Command-line pipeline: build the training ensemble, fit emulators,
//! calibrate, sample, run studies and verify output provenance.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{cmd_calibrate, cmd_design, cmd_emulate, cmd_mcmc, cmd_study, cmd_verify, Context, VerifyReport};
pub use config::{Problem, RunConfig};

/// Names of the files written into the output directory.
pub mod files {
    pub const PARAMETERS: &str = "ensemble_parameters.csv";
    pub const OUTPUTS: &str = "ensemble_outputs.csv";
    pub const MANIFEST: &str = "design_manifest.json";
    pub const BANK: &str = "bank.json";
    pub const EMULATION_REPORT: &str = "emulation_report.json";
    pub const OBSERVATIONS: &str = "observations.json";
    pub const ENKF_RESULT: &str = "enkf_result.json";
    pub const POSTERIOR_ENSEMBLE: &str = "posterior_ensemble.csv";
    pub const MCMC_SAMPLES: &str = "mcmc_samples.csv";
    pub const MCMC_DIAGNOSTICS: &str = "mcmc_diagnostics.json";
    pub const STUDY_REPORT: &str = "study_report.json";
    pub const STUDY_SCATTER: &str = "study_scatter.csv";
    pub const STUDY_BOXPLOT: &str = "study_boxplot.csv";

    pub const ALL: [&str; 13] = [
        PARAMETERS,
        OUTPUTS,
        MANIFEST,
        BANK,
        EMULATION_REPORT,
        OBSERVATIONS,
        ENKF_RESULT,
        POSTERIOR_ENSEMBLE,
        MCMC_SAMPLES,
        MCMC_DIAGNOSTICS,
        STUDY_REPORT,
        STUDY_SCATTER,
        STUDY_BOXPLOT,
    ];
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("design failed ({}): {0}", .0.kind())]
    Design(emucal_core::Error),
    #[error("emulation failed: {0}")]
    Emulation(String),
    #[error("calibration failed ({}): {0}", .0.kind())]
    Calibration(emucal_core::Error),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Verify(_) | CliError::Io { .. } => 1,
            CliError::Design(_) => 2,
            CliError::Emulation(_) => 3,
            CliError::Calibration(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "emucal", version, about = "Emulator-based calibration of cardiac tissue models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample, screen and simulate the training ensemble.
    Design(CommonArgs),
    /// Fit one Gaussian-process emulator per output and score it on held-out data.
    Emulate(CommonArgs),
    /// Calibrate with the ensemble Kalman filter.
    Calibrate(CommonArgs),
    /// Sample the emulator posterior with random-walk Metropolis.
    Mcmc(CommonArgs),
    /// Run the synthetic calibration study.
    Study(CommonArgs),
    /// Re-check the config hash stamped into every output file.
    Verify(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Validate the config and report what would run, without writing.
    #[arg(long)]
    pub dry_run: bool,
    /// Overrides `output_dir`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Design(a)
            | Command::Emulate(a)
            | Command::Calibrate(a)
            | Command::Mcmc(a)
            | Command::Study(a)
            | Command::Verify(a) => a,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Design(_) => "design",
            Command::Emulate(_) => "emulate",
            Command::Calibrate(_) => "calibrate",
            Command::Mcmc(_) => "mcmc",
            Command::Study(_) => "study",
            Command::Verify(_) => "verify",
        }
    }
}

/// Load the config named by `args` and apply the command-line overrides.
pub fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.resolve_seeds();
    cfg.check_paths()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let args = cli.command.args();
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // Fails only if a global pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = load_config(args)?;
    let ctx = Context::new(&cfg);
    if args.dry_run {
        println!("{}: config ok (hash {}), output directory {}", cli.command.name(), ctx.hash, cfg.output_dir.display());
        return Ok(());
    }
    match &cli.command {
        Command::Design(_) => cmd_design(&cfg, &ctx).map(drop),
        Command::Emulate(_) => cmd_emulate(&cfg, &ctx).map(drop),
        Command::Calibrate(_) => cmd_calibrate(&cfg, &ctx).map(drop),
        Command::Mcmc(_) => cmd_mcmc(&cfg, &ctx).map(drop),
        Command::Study(_) => cmd_study(&cfg, &ctx).map(drop),
        Command::Verify(_) => {
            let report = cmd_verify(&cfg, &ctx)?;
            for f in &report.checked {
                println!("ok       {f}");
            }
            Ok(())
        }
    }
}
