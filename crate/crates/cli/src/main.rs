//! `metachex`: split preparation, two-phase training, prediction,
//! evaluation, post-hoc analyses and figures, all driven by one TOML
//! configuration file.

mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::plot::ColorBy;
use commands::synth::SynthArgs;
use commands::train::Init;
use config::Loaded;
use error::{ErrorRecord, Result};

#[derive(Parser)]
#[command(name = "metachex", version, about = "Multi-task chest X-ray training and TB transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override one configuration key, e.g. `--set train.phase1.max_epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<Loaded> {
        Loaded::from_file(&self.config, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write patient-disjoint ChestXray14 splits and the fixed TB splits.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train phase 1 (multi-task) or phase 2 (TB fine-tuning).
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        phase: u8,
        /// imagenet | random | checkpoint:PATH. Defaults to imagenet for
        /// phase 1 and the phase-1 checkpoint for phase 2.
        #[arg(long)]
        init: Option<Init>,
        /// Output directory (default `<output_dir>/phase1` or
        /// `<output_dir>/phase2-<init>`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a checkpoint over a manifest and write a prediction table.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score prediction tables against their manifests' labels.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Prediction file; repeat for several sets.
        #[arg(long = "predictions", required = true)]
        predictions: Vec<PathBuf>,
        /// Manifest each prediction file was produced from, in the same order.
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
        /// Also pool all TB sets into one combined AUC.
        #[arg(long)]
        combine: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Post-hoc analyses.
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
    /// Emit a figure (SVG).
    Plot {
        #[command(subcommand)]
        what: Figure,
    },
    /// Write a small synthetic corpus and a matching configuration.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        patients: usize,
        #[arg(long, default_value_t = 2)]
        images_per_patient: usize,
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        /// Shenzhen-style negatives,positives.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [30, 30])]
        shenzhen: Vec<usize>,
        /// Montgomery-style negatives,positives.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [10, 8])]
        montgomery: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum Analysis {
    /// Logistic regression of TB on the 14 pathology log-odds.
    TbLogit {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Pathology predictions over TB images.
        #[arg(long, conflicts_with_all = ["checkpoint", "manifest"])]
        predictions: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "checkpoint")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export backbone features, optionally with t-SNE coordinates.
    Embed {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        project: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Figure {
    /// Overlaid ROC curves with AUCs in the legend.
    Roc {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "predictions", required = true)]
        predictions: Vec<PathBuf>,
        /// Output to score for non-TB predictions: a pathology, gender or position.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predicted vs labelled age with bias and limits of agreement.
    BlandAltman {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Projected embeddings coloured by a sidecar label.
    Tsne {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        color_by: ColorBy,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Prepare { .. } => "prepare",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Analyze { .. } => "analyze",
            Command::Plot { .. } => "plot",
            Command::Synth { .. } => "synth",
        }
    }
}

fn dispatch(command: Command) -> Result<commands::Outcome> {
    match command {
        Command::Prepare { cfg } => commands::prepare::run(&cfg.load()?),
        Command::Train { cfg, phase, init, out } => commands::train::run(&cfg.load()?, phase, init, out),
        Command::Predict {
            cfg,
            checkpoint,
            manifest,
            out,
        } => commands::predict::run(&cfg.load()?, &checkpoint, &manifest, out),
        Command::Evaluate {
            cfg,
            predictions,
            manifests,
            combine,
            out,
        } => commands::evaluate::run(&cfg.load()?, &predictions, &manifests, combine, out),
        Command::Analyze { what } => match what {
            Analysis::TbLogit {
                cfg,
                predictions,
                checkpoint,
                manifest,
                out,
            } => commands::analyze::tb_logit(&cfg.load()?, predictions, checkpoint, manifest, out),
            Analysis::Embed {
                cfg,
                checkpoint,
                manifest,
                project,
                out,
            } => commands::analyze::embed(&cfg.load()?, &checkpoint, &manifest, project, out),
        },
        Command::Plot { what } => match what {
            Figure::Roc {
                cfg,
                predictions,
                label,
                out,
            } => commands::plot::roc(&cfg.load()?, &predictions, label.as_deref(), out),
            Figure::BlandAltman { cfg, predictions, out } => commands::plot::bland_altman_plot(&cfg.load()?, &predictions, out),
            Figure::Tsne {
                cfg,
                embeddings,
                color_by,
                out,
            } => commands::plot::tsne(&cfg.load()?, &embeddings, color_by, out),
        },
        Command::Synth {
            out,
            patients,
            images_per_patient,
            image_size,
            shenzhen,
            montgomery,
            seed,
        } => commands::synth::run(
            &out,
            &SynthArgs {
                patients,
                images_per_patient,
                image_size,
                shenzhen: [shenzhen[0], shenzhen[1]],
                montgomery: [montgomery[0], montgomery[1]],
                seed,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let name = cli.command.name();
    match dispatch(cli.command) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&ErrorRecord::new(name, &e)).expect("error record serializes"));
            ExitCode::FAILURE
        }
    }
}
