//! Command-line pipeline around the `ebm3d` library: synthetic data
//! generation, training, refinement, evaluation, and the two analysis sweeps.

pub mod analysis;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::Paths;
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "ebm3d", version, about = "Energy-based refinement of oriented 3D boxes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory (scene files plus manifest).
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Network checkpoint.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// KITTI result files holding refined detections (eval).
    #[arg(long, global = true)]
    pub dets: Option<PathBuf>,
    /// KITTI result files holding baseline detections (eval with --labels).
    #[arg(long, global = true)]
    pub baseline: Option<PathBuf>,
    /// KITTI label files used as ground truth (eval).
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    SynthGen,
    /// Train the energy network with NCE.
    Train,
    /// Refine detections by gradient ascent.
    Refine,
    /// Evaluate initial and refined detections.
    Eval,
    /// Sweep the number of refinement iterations.
    #[command(name = "sweep-T")]
    SweepT,
    /// Scan the energy over heading offsets.
    AngleScan,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SynthGen => "synth-gen",
            Command::Train => "train",
            Command::Refine => "refine",
            Command::Eval => "eval",
            Command::SweepT => "sweep-T",
            Command::AngleScan => "angle-scan",
        }
    }
}

/// Resolves defaults, config file and overrides (in that order).
pub fn resolve_config(common: &Common) -> ebm3d::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &common.config {
        cfg.apply_file(p)?;
    }
    if let Some(s) = common.seed {
        cfg.set("seed", &s.to_string())?;
    }
    for pair in &common.set {
        cfg.set_pair(pair)?;
    }
    Ok(cfg)
}

/// Runs one command; returns the summary text.
pub fn run(command: Command, common: &Common) -> ebm3d::Result<String> {
    let cfg = resolve_config(common)?;
    let paths = Paths {
        dataset: common.dataset.clone(),
        checkpoint: common.checkpoint.clone(),
        out: common.out.clone(),
        dets: common.dets.clone(),
        baseline: common.baseline.clone(),
        labels: common.labels.clone(),
    };
    log::info!("resolved config for {}:\n{}", command.name(), cfg.render());
    match command {
        Command::SynthGen => commands::cmd_synth_gen(&cfg, &paths),
        Command::Train => commands::cmd_train(&cfg, &paths),
        Command::Refine => commands::cmd_refine(&cfg, &paths),
        Command::Eval => commands::cmd_eval(&cfg, &paths),
        Command::SweepT => commands::cmd_sweep_t(&cfg, &paths),
        Command::AngleScan => commands::cmd_angle_scan(&cfg, &paths),
    }
}
