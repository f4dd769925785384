//! `vtrack`: synthesize scenarios, track vessels, predict trajectories and
//! score them.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! Set `VTRACK_LOG=quiet` to silence progress output on stderr.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vessel_track::ingest::FrameSize;

use commands::{EvalLabels, UsageError};

#[derive(Parser)]
#[command(name = "vtrack", version, about = "Multi-vessel tracking and trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground truth and corrupted detections from a scenario file.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track vessels through a detection stream (MOT text, or JSON by extension).
    Track {
        #[arg(long)]
        det: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1280)]
        frame_width: u32,
        #[arg(long, default_value_t = 720)]
        frame_height: u32,
    },
    /// Predict future anchor points from every observation of every track.
    Predict {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's horizon.
        #[arg(long)]
        horizon: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Tracks used to map track ids to ground-truth identities and to
        /// count id switches; without it track ids are taken as identities.
        #[arg(long)]
        tracks: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        video: Option<String>,
        #[arg(long)]
        tracker: Option<String>,
        #[arg(long = "config-label")]
        config_label: Option<String>,
        #[arg(long)]
        category: Option<String>,
    },
    /// Collect report.csv rows from run directories into one table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { scenario, out, seed } => commands::synth(&scenario, &out, seed),
        Command::Track {
            det,
            config,
            out,
            frame_width,
            frame_height,
        } => commands::track(
            &det,
            config.as_deref(),
            &out,
            FrameSize {
                width: frame_width,
                height: frame_height,
            },
        ),
        Command::Predict {
            tracks,
            config,
            horizon,
            out,
        } => commands::predict(&tracks, config.as_deref(), horizon, &out),
        Command::Eval {
            pred,
            gt,
            tracks,
            out,
            video,
            tracker,
            config_label,
            category,
        } => commands::eval(
            &pred,
            &gt,
            tracks.as_deref(),
            &out,
            EvalLabels {
                video,
                tracker,
                config: config_label,
                category,
            },
        ),
        Command::Report { runs, out } => commands::report(&runs, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
