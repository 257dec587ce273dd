use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chda_workbench::commands::{self, AnalyticSpec, SampleMode, SampleOptions, TrainOptions};
use chda_workbench::{Error, ExperimentConfig, Result};

/// Diffusion-prior and proxy-localized ESMDA history-matching experiments.
#[derive(Parser)]
#[command(name = "chda", version)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the geostatistical prior ensemble.
    GeneratePrior {
        /// Members to draw (default: the largest configured ensemble size).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the score network by denoising score matching.
    TrainScore {
        /// Ensemble file or directory of field files.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many epochs, leaving a checkpoint.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Generate fields from a trained or analytic score model.
    Sample {
        /// Number of fields to draw.
        #[arg(long)]
        n: usize,
        /// Sampler (default: the configured sampler kind).
        #[arg(long, value_enum)]
        mode: Option<SampleMode>,
        /// Trained score weights (default: diffusion.weights).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// `gaussian:MEAN:VAR` or `point-mass:VALUE`.
        #[arg(long, conflicts_with = "weights")]
        analytic: Option<AnalyticSpec>,
        /// Field supplying hard data in posterior mode.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run the full localization sweep and write the report.
    RunExperiment,
    /// Rebuild the report of a finished run.
    Report {
        /// Run directory (default: --out).
        run_dir: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Runtime(e.to_string()))?;
    }
    if let Command::Report { run_dir } = &cli.command {
        let dir = run_dir.as_ref().unwrap_or(&cli.out);
        for p in chda_workbench::report::write_report(dir)? {
            println!("{}", p.display());
        }
        return Ok(());
    }
    let cfg = load_config(&cli)?;
    let out = &cli.out;
    let manifest = match cli.command {
        Command::GeneratePrior { n } => commands::generate_prior(&cfg, out, n)?,
        Command::TrainScore {
            dataset,
            resume,
            stop_after,
        } => commands::train_score(
            &cfg,
            out,
            &TrainOptions {
                dataset,
                resume,
                stop_after,
            },
        )?,
        Command::Sample {
            n,
            mode,
            weights,
            analytic,
            truth,
        } => commands::sample(
            &cfg,
            out,
            &SampleOptions {
                n,
                mode,
                weights,
                analytic,
                truth,
            },
        )?,
        Command::RunExperiment => commands::run_experiment(&cfg, out)?,
        Command::Report { .. } => unreachable!(),
    };
    eprintln!(
        "{}: {} files in {} (config {})",
        manifest.command,
        manifest.files.len(),
        out.display(),
        &manifest.config_hash[..12]
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
