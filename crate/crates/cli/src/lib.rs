//! Command-line front end: argument parsing, configuration layering and
//! exit codes.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 algorithmic failure such as a failed localization.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use gsreloc_core::data::frames::load_intrinsics;
use gsreloc_core::Error;

use config::Config;

#[derive(Parser, Debug)]
#[command(name = "gsreloc", version, about = "Gaussian splatting maps and visual relocalization on the CPU")]
#[command(after_long_help = Config::help_text())]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 = one per core. Overrides the configured value.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Sets one configuration key, e.g. `--set iterations=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes a synthetic scene: frames, depths, point cloud, ground-truth map and manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Builds a Gaussian map from a point cloud and posed frames.
    BuildMap {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the map submap by submap along the frame trajectory.
    Train {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Renders color (PPM) and depth (16-bit PGM) from one pose.
    Render {
        #[arg(long)]
        map: PathBuf,
        /// Pose file, camera-to-world.
        #[arg(long)]
        pose: PathBuf,
        #[arg(long, default_value_t = 0)]
        pose_index: usize,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        out_image: PathBuf,
        #[arg(long)]
        out_depth: Option<PathBuf>,
    },
    /// Localizes one image from a coarse pose.
    Localize {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Pose file holding the coarse camera-to-world pose.
        #[arg(long)]
        pose: PathBuf,
        #[arg(long, default_value_t = 0)]
        pose_index: usize,
        /// Defaults to `frames/intrinsics.txt` next to the map.
        #[arg(long)]
        intrinsics: Option<PathBuf>,
        /// Candidate trace CSV, one row per visited candidate.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Writes the refined pose in pose-file format.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tracks every frame of a directory and writes the trajectory.
    Track {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Pose file holding the coarse pose of the first frame.
        #[arg(long)]
        pose: PathBuf,
        #[arg(long, default_value_t = 0)]
        pose_index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// APE/RPE statistics and x, y, yaw error histograms.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Metrics CSV; printed when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for `hist_x.csv`, `hist_y.csv` and `hist_yaw.csv`.
        #[arg(long)]
        hist_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Frame gap for RPE.
        #[arg(long, default_value_t = 1)]
        delta: usize,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::InvalidInput(_)
        | Error::BehindCamera { .. }
        | Error::IndexOutOfRange { .. }
        | Error::Format { .. }
        | Error::Parse { .. }
        | Error::Truncated { .. }
        | Error::DegenerateImage
        | Error::Io(_) => 2,
        Error::EmptySubmap
        | Error::InsufficientCorrespondences { .. }
        | Error::UnreliablePose { .. }
        | Error::Localization { .. }
        | Error::Training(_) => 3,
    }
}

/// Defaults, then the config file, then `--set`, then the dedicated flags.
pub fn resolve_config(cli: &Cli) -> gsreloc_core::Result<Config> {
    let mut cfg = Config::default();
    if let Some(p) = &cli.config {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(Error::Config)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.finalize()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli, cfg: &Config, out: &mut dyn Write) -> gsreloc_core::Result<()> {
    match &cli.command {
        Command::Synth { out: dir } => commands::synth(cfg, dir, out),
        Command::BuildMap { points, frames, out: o } => commands::build_map(cfg, points, frames, o, out),
        Command::Train { map, frames, out: o, report } => {
            commands::train(cfg, map, frames, o, report.as_deref(), out)
        }
        Command::Render { map, pose, pose_index, intrinsics, out_image, out_depth } => {
            let k = load_intrinsics(intrinsics)?;
            let p = commands::read_pose(pose, *pose_index)?;
            commands::render_view(cfg, map, &k, &p, out_image, out_depth.as_deref())
        }
        Command::Localize { map, image, pose, pose_index, intrinsics, trace, out: o } => {
            let k = commands::resolve_intrinsics(intrinsics.as_deref(), map)?;
            let p = commands::read_pose(pose, *pose_index)?;
            commands::localize(cfg, map, k, image, &p, trace.as_deref(), o.as_deref(), out)
        }
        Command::Track { map, frames, pose, pose_index, out: o } => {
            let p = commands::read_pose(pose, *pose_index)?;
            commands::track(cfg, map, frames, &p, o, out)
        }
        Command::Eval { est, reference, out: o, hist_dir, bins, delta } => commands::evaluate(
            est,
            reference,
            &commands::EvalOutputs {
                metrics: o.as_deref(),
                hist_dir: hist_dir.as_deref(),
                bins: *bins,
                delta: *delta,
            },
            out,
        ),
    }
}

/// Runs the tool on `args` and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 1;
        }
    };
    let stdout = std::io::stdout();
    let result = pool.install(|| dispatch(&cli, &cfg, &mut stdout.lock()));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
