use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Shaped adversarial stickers against white-box face recognizers.
#[derive(Parser, Debug)]
#[command(name = "stickerlab", version)]
pub struct Cli {
    /// Base seed for every random draw of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` file overriding the command's configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Shape-template corpus.
    Corpus {
        #[command(subcommand)]
        verb: CorpusVerb,
    },
    /// Face assets and synthetic datasets.
    Asset {
        #[command(subcommand)]
        verb: AssetVerb,
    },
    /// Target face recognizers.
    Fr {
        #[command(subcommand)]
        verb: FrVerb,
    },
    /// Saliency maps and sticker regions.
    Saliency {
        #[command(subcommand)]
        verb: SaliencyVerb,
    },
    /// Sticker generator training and crafting.
    Attack {
        #[command(subcommand)]
        verb: AttackVerb,
    },
    /// Digital success rates and sweeps.
    Eval {
        #[command(subcommand)]
        verb: EvalVerb,
    },
    /// Printable sticker files.
    Export {
        #[command(subcommand)]
        verb: ExportVerb,
    },
}

#[derive(Subcommand, Debug)]
pub enum CorpusVerb {
    /// Builds the five-kind shape corpus and its manifest.
    Build {
        #[arg(long)]
        per_kind: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
pub enum AssetVerb {
    /// Writes one synthetic face asset, or a labeled dataset with `--identities`.
    Make {
        #[arg(long, default_value_t = 0)]
        identity: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        yaw: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        pitch: f64,
        /// Ambient light level.
        #[arg(long, default_value_t = 1.0)]
        brightness: f64,
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        per_identity: Option<usize>,
    },
    /// Checks an asset directory and reports the first broken field.
    Validate { dir: PathBuf },
}

#[derive(Subcommand, Debug)]
pub enum FrVerb {
    /// Trains and freezes a recognizer on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        extractor: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Accuracy of a recognizer on one split.
    Eval {
        #[arg(long)]
        frs: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

#[derive(Subcommand, Debug)]
pub enum SaliencyVerb {
    /// Saliency map of one asset for one class.
    Map {
        #[arg(long)]
        frs: PathBuf,
        #[arg(long)]
        asset: PathBuf,
        /// Class index or name; defaults to the asset's label.
        #[arg(long)]
        class: Option<String>,
        /// grad-cam, guided or guided-grad-cam.
        #[arg(long, default_value = "guided-grad-cam")]
        method: String,
    },
    /// Ranks the five sticker regions by mean saliency over a label's images.
    Regions {
        #[arg(long)]
        frs: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 8)]
        limit: usize,
    },
}

/// Who attacks whom and where.
#[derive(Args, Debug, Clone)]
pub struct SpecArgs {
    /// dodge or impersonate.
    #[arg(long, default_value = "dodge")]
    pub mode: String,
    /// Label index or class name.
    #[arg(long)]
    pub attacker: String,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub combo: usize,
}

/// Training overrides applied after the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Shape corpus; a small one is built from the seed when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Shape-pretrained generator and critics.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum AttackVerb {
    /// Trains generator shape heads and critics on the corpus alone.
    Pretrain {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        arch: Option<String>,
    },
    /// Trains a sticker generator against a frozen recognizer.
    Train {
        #[arg(long)]
        frs: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Slot size in template pixels.
        #[arg(long)]
        size: Option<usize>,
        /// Continue from the newest state checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Crafts sticker sets from a trained generator and exports them.
    Craft {
        #[arg(long)]
        gen: PathBuf,
        /// Asset whose regions anchor the stickers.
        #[arg(long)]
        asset: PathBuf,
        #[arg(long, default_value_t = 8)]
        combo: usize,
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[arg(long)]
    pub frs: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated pairs: `A` dodges, `A-B` impersonates.
    #[arg(long, value_delimiter = ',', required = true)]
    pub pairs: Vec<String>,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 5)]
    pub count: usize,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Subcommand, Debug)]
pub enum EvalVerb {
    /// Success rate of crafted stickers on held-out frames.
    Run {
        #[arg(long)]
        frs: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        /// Dataset directory (attacker's test split) or a directory of assets.
        #[arg(long)]
        frames: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        /// Candidates crafted; the best on the attacker's training frames is kept.
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Trains and scores every region combination.
    SweepCombos {
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, value_delimiter = ',')]
        combos: Vec<usize>,
    },
    /// Trains and scores several slot sizes.
    SweepSizes {
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [80, 90, 100])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        combo: usize,
    },
    /// Scores one trained attack under distance, brightness or pose changes.
    SweepConditions {
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long)]
        condition: String,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        frames_per_value: usize,
        #[arg(long, default_value_t = 8)]
        combo: usize,
    },
}

#[derive(Subcommand, Debug)]
pub enum ExportVerb {
    /// RGBA stickers (alpha is the binarized mask) plus a placement sheet.
    Stickers {
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        asset: PathBuf,
        #[arg(long, default_value_t = 8)]
        combo: usize,
        /// Which crafted set to export.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
