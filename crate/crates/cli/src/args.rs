//! Command-line arguments. Every struct is also the record stored in a run
//! manifest, so a manifest replays with exactly the resolved values.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "dalign", version, about = "Dense text-to-patch alignment trained from captions, with zero-shot segmentation evaluation")]
#[command(after_help = "Machine-readable JSON goes to stdout, logs to stderr (RUST_LOG sets the level).\n\
DALIGN_THREADS caps the worker threads.\n\
Exit codes: 0 success, 2 usage or input error, 3 numerical failure, 1 internal error.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Train the text encoder and alignment head.
    Train(TrainArgs),
    /// Zero-shot segmentation mIoU of a checkpoint or of ground-truth means.
    Eval(EvalArgs),
    /// Concept statistics of a caption store, counted as the trainer counts them.
    Stats(StatsArgs),
    /// Generate a synthetic world with features, captions and masks.
    Synth(SynthArgs),
    /// Drop noun-phrase mentions from captions at random.
    Degrade(DegradeArgs),
    /// Patch similarity of one image to a concept, as a PGM heatmap.
    Heatmap(HeatmapArgs),
    /// Top three principal components of an image's patches, as a PPM.
    Pca(PcaArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Stats(_) => "stats",
            Command::Synth(_) => "synth",
            Command::Degrade(_) => "degrade",
            Command::Heatmap(_) => "heatmap",
            Command::Pca(_) => "pca",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Feature store; repeat to merge several.
    #[arg(long, default_value = "world/train/features.dvf")]
    pub features: Vec<PathBuf>,
    /// Caption store (JSONL); repeat to merge several.
    #[arg(long, default_value = "world/train/captions.jsonl")]
    pub captions: Vec<PathBuf>,
    /// Output directory for checkpoint, metrics, vocabularies and manifest.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Continue from this checkpoint; its stored hyperparameters win over the flags except --epochs [default: none]
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    /// Weight of the concept loss.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Visual concept pooling temperature.
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum global gradient norm.
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    /// Cosine learning-rate decay to zero [default: false]
    #[arg(long)]
    pub cosine: bool,
    /// L2-normalize visual concepts and classifier rows [default: false]
    #[arg(long)]
    pub normalize_concepts: bool,
    /// L2-normalize patches inside the pooling similarity [default: false]
    #[arg(long)]
    pub normalize_patches: bool,
    /// Classifier rows are the encoded concept names [default: false]
    #[arg(long)]
    pub tie_head: bool,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Token budget per caption, BOS and EOS included.
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1)]
    pub vocab_min_freq: usize,
    /// Regular tokens kept, specials not counted.
    #[arg(long, default_value_t = 20_000)]
    pub vocab_max_size: usize,
    #[arg(long, default_value_t = 1)]
    pub concept_min_freq: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolArg {
    /// Background pixels are ignored.
    #[value(alias = "foreground")]
    Fg,
    /// Low-scoring pixels become a background class.
    #[value(alias = "whole-image")]
    Whole,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Trained checkpoint whose encoder embeds the class prompts [default: none]
    #[arg(long, conflicts_with = "prototypes", required_unless_present = "prototypes")]
    pub checkpoint: Option<PathBuf>,
    /// Class means JSON used directly as prototypes [default: none]
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    #[arg(long, default_value = "world/eval/features.dvf")]
    pub features: PathBuf,
    /// Directory of <image_id>.pgm masks.
    #[arg(long, default_value = "world/eval/masks")]
    pub masks: PathBuf,
    /// Class set JSON: names, templates and an optional background threshold.
    #[arg(long, default_value = "world/classes.json")]
    pub classes: PathBuf,
    #[arg(long, value_enum, default_value = "fg")]
    pub protocol: ProtocolArg,
    /// Background threshold of the whole-image protocol [default: none]
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    /// Pick the whole-image threshold that maximizes mIoU on the validation split [default: false]
    #[arg(long)]
    pub calibrate: bool,
    /// Validation features for --calibrate [default: none]
    #[arg(long)]
    pub val_features: Option<PathBuf>,
    /// Validation masks for --calibrate [default: none]
    #[arg(long)]
    pub val_masks: Option<PathBuf>,
    /// Calibration grid: -inf plus this many steps over [-1, 1].
    #[arg(long, default_value_t = 200)]
    pub threshold_steps: usize,
    /// Sliding window side, in patches.
    #[arg(long, default_value_t = 32)]
    pub window: usize,
    /// Sliding window stride, in patches.
    #[arg(long, default_value_t = 16)]
    pub stride: usize,
    /// Resample the patch grid so its shorter side has this many patches [default: none]
    #[arg(long)]
    pub short_side: Option<usize>,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct StatsArgs {
    #[arg(long, default_value = "world/train/captions.jsonl")]
    pub captions: PathBuf,
    /// Concept list: concepts.txt from a run or a class set JSON; built from the captions when absent [default: none]
    #[arg(long)]
    pub concepts: Option<PathBuf>,
    /// Minimum count when the concept list is built from the captions.
    #[arg(long, default_value_t = 1)]
    pub concept_min_freq: usize,
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Seed of the (first-epoch) batch shuffle.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "stats.json")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub num_concepts: usize,
    /// Visual feature width.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 16)]
    pub grid_h: usize,
    #[arg(long, default_value_t = 16)]
    pub grid_w: usize,
    /// Mask pixels per patch side.
    #[arg(long, default_value_t = 4)]
    pub patch_px: usize,
    #[arg(long, default_value_t = 3)]
    pub max_regions: usize,
    /// Patch noise standard deviation.
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    /// Caption template with one {} slot; repeat for several.
    #[arg(long = "template", default_values_t = ["there is {}.".to_string(), "we can see {}.".to_string()])]
    pub templates: Vec<String>,
    #[arg(long, default_value_t = 512)]
    pub train_images: usize,
    #[arg(long, default_value_t = 64)]
    pub eval_images: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Chance that a multi-region image pairs a concept with its fixed partner.
    #[arg(long, default_value_t = 0.0)]
    pub pair_prob: f64,
    #[arg(long, default_value = "world")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct DegradeArgs {
    #[arg(long, default_value = "world/train/captions.jsonl")]
    pub captions: PathBuf,
    /// Probability of deleting each noun-phrase mention.
    #[arg(long, default_value_t = 0.9)]
    pub drop_prob: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "degraded.jsonl")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct HeatmapArgs {
    /// Checkpoint whose encoder embeds the concept prompt [default: none]
    #[arg(long, conflicts_with = "prototypes", required_unless_present = "prototypes")]
    pub checkpoint: Option<PathBuf>,
    /// Class means JSON; the concept's mean is the query [default: none]
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    #[arg(long, default_value = "world/eval/features.dvf")]
    pub features: PathBuf,
    /// Record to visualize; the first record when absent [default: none]
    #[arg(long)]
    pub image_id: Option<String>,
    /// Concept name to query (required)
    #[arg(long)]
    pub concept: String,
    /// Prompt template for --checkpoint queries.
    #[arg(long, default_value = "{}")]
    pub template: String,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value = "heatmap.pgm")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct PcaArgs {
    #[arg(long, default_value = "world/eval/features.dvf")]
    pub features: PathBuf,
    /// Record to visualize; the first record when absent [default: none]
    #[arg(long)]
    pub image_id: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value = "pca.ppm")]
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run (required)
    #[arg(long)]
    pub manifest: PathBuf,
}
