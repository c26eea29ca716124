//! `pddwi`: phantom generation, decomposition, feature extraction, training,
//! prediction, evaluation and ablation from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data or format error, 3 numeric failure.
//! Failures print a single `error[<kind>]: <message>` line to stderr.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pddwi_core::dwi::TimePoint;
use pddwi_core::Error;

#[derive(Parser, Debug)]
#[command(name = "pddwi", version, about = "Physiologically decomposed DWI pCR prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled synthetic cohort from a cohort spec JSON.
    Phantom {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write ADC_0_100, ADC_100_800, ADC_0_800 and F volumes per study.
    Decompose {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the feature matrix for the configured maps and time points.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse a fitted clinical encoder instead of fitting on this cohort.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Also write the fitted clinical encoder here.
        #[arg(long)]
        save_encoder: Option<PathBuf>,
    },
    /// Select features and fit the booster; runs grid CV when configured.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict pCR probabilities for every row of a feature table.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// AUC, F1 and Cohen's kappa of predictions against labels.
    Evaluate {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Cross-validated metrics per map configuration and time-point prefix.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// SVG of ROI-mean log signal against b with the three subset fits.
    PlotDecay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        patient: String,
        #[arg(long, default_value = "T0")]
        timepoint: TimePoint,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid usage");
            eprintln!("error[usage]: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(1);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), one_line(&e.to_string()));
            ExitCode::from(exit_code(&e))
        }
    }
}
