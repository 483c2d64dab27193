mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Preset, RunConfig};

#[derive(Debug, Args)]
struct Common {
    /// Base seed for data, initialisation and shuffling [default: 7]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file overriding preset values; flags override the file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parameter preset
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: Preset,
    /// Manifest path [default: <main output>.manifest.toml]
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
struct DataFlags {
    /// upc, uc or nd [default: upc]
    #[arg(long)]
    setting: Option<String>,
    /// consistent or partial [default: consistent]
    #[arg(long)]
    pairing: Option<String>,
    /// modelnet or 7scenes [default: modelnet]
    #[arg(long)]
    regime: Option<String>,
    /// Points per cloud [default: 256 (desk), 1024 (full)]
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Debug, Args, Default)]
struct ModelFlags {
    /// Invariant feature kind, e.g. distance, ppf, spfh, pfh [default: distance]
    #[arg(long)]
    features: Option<String>,
    /// euler, quaternion, 6d or matrix [default: euler]
    #[arg(long)]
    rotation: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a generated dataset of cloud pairs to a directory
    Gen {
        #[command(flatten)]
        data: DataFlags,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the generated training split
    Train {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model: ModelFlags,
        /// Checkpoint to write
        #[arg(long)]
        out: PathBuf,
        /// Epochs [default: 30 (desk), 500 (full)]
        #[arg(long)]
        epochs: Option<usize>,
        /// Learning rate [default: 0.001]
        #[arg(long)]
        lr: Option<f64>,
        /// Batch size [default: 8 (desk), 26 (full)]
        #[arg(long)]
        batch_size: Option<usize>,
        /// Global gradient-norm clip [default: off]
        #[arg(long)]
        clip_norm: Option<f64>,
        /// Loss curve CSV [default: <out>.loss.csv]
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint on the clouds of the test split
    Finetune {
        #[command(flatten)]
        data: DataFlags,
        #[command(flatten)]
        model_flags: ModelFlags,
        /// Checkpoint to start from
        #[arg(long)]
        model: PathBuf,
        /// Checkpoint to write
        #[arg(long)]
        out: PathBuf,
        /// Epochs [default: 10]
        #[arg(long)]
        epochs: Option<usize>,
        /// Learning rate [default: 0.0001]
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Register two cloud files and print the 3×4 transform
    Register {
        /// Source cloud (.xyz, .off or .ply)
        #[arg(long)]
        source: PathBuf,
        /// Target cloud (.xyz, .off or .ply)
        #[arg(long)]
        target: PathBuf,
        /// Trained checkpoint
        #[arg(long)]
        model: PathBuf,
        /// Also write the transformed source here [default: not written]
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a model and the ICP baselines on generated test pairs
    Bench {
        #[command(flatten)]
        data: DataFlags,
        /// Checkpoint to evaluate [default: baselines only]
        #[arg(long)]
        model: Option<PathBuf>,
        /// Number of test pairs [default: 50]
        #[arg(long)]
        pairs: Option<usize>,
        /// Add the ICP row initialised by PFH feature matching
        #[arg(long)]
        feature_icp: bool,
        /// CSV output [default: table only]
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate robustness to outliers at several ratios
    SweepOutliers {
        #[command(flatten)]
        data: DataFlags,
        /// Checkpoint to evaluate
        #[arg(long)]
        model: PathBuf,
        /// Outlier percentages
        #[arg(long, value_delimiter = ',', default_value = "0,10,20,30")]
        ratios: Vec<f64>,
        /// Number of test pairs [default: 50]
        #[arg(long)]
        pairs: Option<usize>,
        /// CSV output [default: printed]
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Time single-threaded inference on one pair
    Time {
        #[command(flatten)]
        model_flags: ModelFlags,
        /// Checkpoint to time [default: freshly initialised model]
        #[arg(long)]
        model: Option<PathBuf>,
        /// Points per cloud
        #[arg(long, default_value_t = 1024)]
        points: usize,
        /// Timed repetitions after one warm-up
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// CSV output [default: printed]
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Debug, Parser)]
#[command(name = "upcr", version, about = "Correspondence-free unsupervised point-cloud registration")]
struct Root {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

impl DataFlags {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(s) = &self.setting {
            c.data.setting = s.to_ascii_lowercase();
        }
        if let Some(s) = &self.pairing {
            c.data.pairing = s.to_ascii_lowercase();
        }
        if let Some(s) = &self.regime {
            c.data.pose_regime = s.to_ascii_lowercase();
        }
        if let Some(n) = self.points {
            c.data.n_points = n;
            c.data.partial_keep = n * 3 / 4;
        }
    }
}

impl ModelFlags {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(s) = &self.features {
            c.model.features = s.to_ascii_lowercase();
        }
        if let Some(s) = &self.rotation {
            c.model.rotation = s.to_ascii_lowercase();
        }
    }
}

fn resolve(common: &Common) -> anyhow::Result<RunConfig> {
    let mut c = RunConfig::load(common.preset, common.config.as_deref())?;
    if let Some(seed) = common.seed {
        c.seed = seed;
    }
    Ok(c)
}

fn run(root: Root) -> anyhow::Result<()> {
    let mut cfg = resolve(&root.common)?;
    let manifest = root.common.manifest.clone();
    match root.command {
        Command::Gen { data, out } => {
            data.apply(&mut cfg);
            commands::gen(&cfg, &out, manifest)
        }
        Command::Train {
            data,
            model,
            out,
            epochs,
            lr,
            batch_size,
            clip_norm,
            loss_csv,
        } => {
            data.apply(&mut cfg);
            model.apply(&mut cfg);
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(l) = lr {
                cfg.train.lr = l;
            }
            if let Some(b) = batch_size {
                cfg.train.batch_size = b;
            }
            if clip_norm.is_some() {
                cfg.train.clip_norm = clip_norm;
            }
            commands::train(&cfg, &out, loss_csv, manifest)
        }
        Command::Finetune {
            data,
            model_flags,
            model,
            out,
            epochs,
            lr,
        } => {
            data.apply(&mut cfg);
            model_flags.apply(&mut cfg);
            if let Some(e) = epochs {
                cfg.train.finetune_epochs = e;
            }
            if let Some(l) = lr {
                cfg.train.finetune_lr = l;
            }
            commands::finetune(&cfg, &model, &out, manifest)
        }
        Command::Register {
            source,
            target,
            model,
            output,
        } => commands::register(&cfg, &source, &target, &model, output.as_deref(), manifest),
        Command::Bench {
            data,
            model,
            pairs,
            feature_icp,
            csv,
        } => {
            data.apply(&mut cfg);
            if let Some(p) = pairs {
                cfg.data.n_test = p;
            }
            commands::bench(&cfg, model.as_deref(), feature_icp, csv.as_deref(), manifest)
        }
        Command::SweepOutliers {
            data,
            model,
            ratios,
            pairs,
            csv,
        } => {
            data.apply(&mut cfg);
            if let Some(p) = pairs {
                cfg.data.n_test = p;
            }
            commands::sweep(&cfg, &model, &ratios, csv.as_deref(), manifest)
        }
        Command::Time {
            model_flags,
            model,
            points,
            reps,
            csv,
        } => {
            model_flags.apply(&mut cfg);
            commands::time(&cfg, model.as_deref(), points, reps, csv.as_deref(), manifest)
        }
    }
}

fn main() -> ExitCode {
    let root = match Root::try_parse() {
        Ok(r) => r,
        Err(e) => e.exit(),
    };
    match run(root) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
