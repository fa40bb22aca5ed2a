//! `gspr`: batch driver for scene preparation, training, evaluation and
//! ablations.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numeric failure,
//! 4 empty evaluation set.

mod commands;
mod index;
mod run;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use gspr_core::{PipelineConfig, Variant};

use commands::{AblateKind, EmptyEval};

#[derive(Parser)]
#[command(name = "gspr", version, about = "Place recognition over Gaussian-splat scenes")]
struct Cli {
    /// Pipeline config (TOML); every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training, voxel sampling and preparation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Cylindrical grid range in meters.
    #[arg(long, global = true)]
    max_range: Option<f64>,
    /// Use the hardest positive and negative in the triplet loss.
    #[arg(long, global = true)]
    hard_mining: bool,
    /// Run directory (overrides paths.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SceneArgs {
    /// Scene index (overrides paths.scenes).
    #[arg(long)]
    scenes: Option<PathBuf>,
    /// Comma-separated traversal indices to use; all when omitted.
    #[arg(long, value_delimiter = ',')]
    traversals: Vec<u32>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and a desk-scale config for it.
    Synth {
        #[arg(long, default_value_t = 16)]
        places: usize,
        #[arg(long, default_value_t = 3)]
        traversals: u32,
        /// Gaussians per scene.
        #[arg(long, default_value_t = 2000)]
        count: usize,
        /// Also write calibrated frame sequences of this many frames per traversal.
        #[arg(long, default_value_t = 0)]
        frames: usize,
    },
    /// Assemble sliding 3-frame windows into initialisation priors, masks and scenes.
    Prep,
    /// Train the descriptor network; writes checkpoint.bin and loss.csv.
    Train(SceneArgs),
    /// Score Recall@K of a checkpoint.
    Eval {
        #[command(flatten)]
        scenes: SceneArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also evaluate every range in eval.max_ranges.
        #[arg(long)]
        sweep: bool,
    },
    /// Retrain and evaluate per input-feature or preparation configuration.
    Ablate {
        #[arg(long, value_enum, default_value_t = AblateKind::Features)]
        kind: AblateKind,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        train_traversals: Vec<u32>,
        #[arg(long, value_delimiter = ',')]
        eval_traversals: Vec<u32>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.prep.seed = seed;
    }
    if let Some(v) = cli.variant {
        cfg.variant = v;
    }
    if let Some(r) = cli.max_range {
        cfg.grid.max_range = r;
    }
    if cli.hard_mining {
        cfg.train.hard_mining = true;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn desk_config(scenes: PathBuf, manifests: Vec<PathBuf>) -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.paths.scenes = Some(scenes);
    c.paths.manifests = manifests;
    c.paths.out_dir = PathBuf::from("run");
    c.voxels.train = 2048;
    c.voxels.infer = 2048;
    c.net.j = 8;
    c.net.widths = vec![16, 32, 64];
    c.net.d_pe = 32;
    c.net.d_model = 32;
    c.net.d_ffn = 64;
    c.net.n_head = 4;
    c.net.clusters = 8;
    c.train.lr = 1e-3;
    c.train.decay = 1.0;
    c.train.k_pos = 1;
    c.train.batch_triplets = 16;
    c.train.epochs = 100;
    c.train.hard_mining = true;
    c
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth {
            places,
            traversals,
            count,
            frames,
        } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
            let seed = cli.seed.unwrap_or(0);
            let mut dir = run::RunDir::create(&out)?;
            let spec = synth::SceneSpec {
                places: *places,
                traversals: *traversals,
                count: *count,
                seed,
            };
            let entries = synth::write_scenes(&mut dir, &spec)?;
            dir.write("scenes.tsv", index::index_text(&entries, dir.root()).as_bytes())?;
            let mut manifests = Vec::new();
            if *frames > 0 {
                let fspec = synth::FrameSpec {
                    frames: *frames,
                    traversals: *traversals,
                    seed,
                    ..Default::default()
                };
                for m in synth::write_frames(&mut dir, &fspec)? {
                    manifests.push(m.strip_prefix(dir.root()).unwrap_or(&m).to_path_buf());
                }
            }
            let cfg = desk_config(PathBuf::from("scenes.tsv"), manifests);
            dir.write("config.toml", cfg.to_toml_string().as_bytes())?;
            println!("wrote {} scenes and {} under {}", entries.len(), "config.toml", out.display());
            dir.finish()
        }
        Command::Prep => commands::cmd_prep(&load_config(cli)?),
        Command::Train(a) => commands::cmd_train(&load_config(cli)?, &a.scenes, &a.traversals),
        Command::Eval {
            scenes,
            checkpoint,
            sweep,
        } => commands::cmd_eval(&load_config(cli)?, checkpoint, &scenes.scenes, &scenes.traversals, *sweep),
        Command::Ablate {
            kind,
            scenes,
            train_traversals,
            eval_traversals,
        } => commands::cmd_ablate(&load_config(cli)?, *kind, scenes, train_traversals, eval_traversals),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<EmptyEval>().is_some() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<gspr_core::Error>() {
            return match e {
                gspr_core::Error::Numeric(_) => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
