use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "tactilekit", version, about = "Touch, slip and contact processing for vision-based tactile sensors")]
pub struct Cli {
    /// Master seed for data generation, splits and training.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for dataset generation.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,

    /// Model cache directory; overrides TACTILEKIT_CACHE.
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,

    /// Also write the JSON report to this path.
    #[arg(long, global = true, value_name = "PATH")]
    pub report: Option<PathBuf>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic labeled dataset.
    Gen(GenArgs),
    /// Train a touch or slip detector.
    Train(TrainArgs),
    /// k-fold cross-validation of the touch detector.
    Crossval(CrossvalArgs),
    /// Cross-validated accuracy over training-set fractions.
    Ablate(AblateArgs),
    /// Continue training a touch model with frozen layers.
    Finetune(FinetuneArgs),
    /// Run a model on frames or frame windows, one JSON line per input.
    Infer(InferArgs),
    /// Contact regions of a frame against a reference.
    Contacts(ContactsArgs),
    /// Single-frame latency of a touch model.
    Bench(BenchArgs),
    /// Inspect and fetch registered models.
    #[command(subcommand)]
    Registry(RegistryCommand),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskArg {
    Touch,
    Slip,
}

/// Cross-validation and ablation exist for touch detection only.
#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TouchOnlyArg {
    Touch,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModalityArg {
    /// With reference when every sample has one.
    Auto,
    WithReference,
    NoReference,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchArg {
    Frames2d,
    Conv3d,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    BySequence,
    ByObject,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    pub kind: TaskArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "digit")]
    pub profiles: Vec<String>,
    /// Defaults to 500 for touch and 10 for slip.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub per_class: Option<u64>,
    /// Devices per profile (touch).
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub serials: u64,
    /// Objects (slip); per-class counts are per object.
    #[arg(long, default_value_t = 40, value_parser = clap::value_parser!(u64).range(1..))]
    pub objects: u64,
    /// Frames per sequence (slip).
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(2..))]
    pub length: u64,
    /// Monochromatic lighting.
    #[arg(long)]
    pub mono: bool,
}

/// Training budget and optimizer settings shared by the training commands.
#[derive(Args, Debug, Clone)]
pub struct BudgetArgs {
    /// Optimizer steps.
    #[arg(long, conflicts_with = "seconds")]
    pub steps: Option<u64>,
    /// Wall-clock budget in seconds.
    #[arg(long, value_parser = positive_seconds)]
    pub seconds: Option<f64>,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub task: TaskArg,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Where to write the model artifact.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub budget: BudgetArgs,
    /// Model input side in pixels (default 64 for touch, 112 for slip).
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModalityArg::Auto)]
    pub modality: ModalityArg,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    #[arg(long, value_enum, default_value_t = ArchArg::Frames2d)]
    pub arch: ArchArg,
    #[arg(long, default_value_t = 12)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::BySequence)]
    pub split: SplitArg,
}

#[derive(Args, Debug)]
pub struct CrossvalArgs {
    #[arg(value_enum)]
    pub task: TouchOnlyArg,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, default_value_t = 64)]
    pub input_size: usize,
    #[arg(long, value_enum, default_value_t = ModalityArg::Auto)]
    pub modality: ModalityArg,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(value_enum)]
    pub task: TouchOnlyArg,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0")]
    pub fractions: Vec<f64>,
    /// Seeds; each draws its own subsample and folds. Defaults to the global seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, default_value_t = 64)]
    pub input_size: usize,
    #[arg(long, value_enum, default_value_t = ModalityArg::Auto)]
    pub modality: ModalityArg,
    /// Curve CSV; defaults to the report path with a .csv extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    /// Base touch model.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// none, all, or last:N
    #[arg(long, default_value = "last:3")]
    pub freeze: String,
    #[command(flatten)]
    pub budget: BudgetArgs,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub task: TaskArg,
    /// Sensor profile of the inputs; defaults to the model's.
    #[arg(long)]
    pub profile: Option<String>,
    /// Reference PNG for models that take one.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// PNG frames (touch), or sequence files / PNG directories (slip).
    pub inputs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ContactsArgs {
    #[arg(long)]
    pub frame: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value = "digit")]
    pub profile: String,
    /// `otsu` or a fixed diff magnitude in (0, 1).
    #[arg(long, default_value = "otsu")]
    pub threshold: String,
    #[arg(long, default_value_t = 25)]
    pub min_area: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(30..))]
    pub iterations: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(5..))]
    pub warmup: u64,
}

#[derive(Subcommand, Debug)]
pub enum RegistryCommand {
    /// Registered models.
    List {
        /// Index file; defaults to the bundled one.
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Download (or reuse) a model and print its cached path.
    Fetch {
        sensor: String,
        /// touch_detect or slip_detect
        task: String,
        #[arg(long)]
        version: Option<u32>,
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Artifact metadata without loading the weights.
    Inspect { path: PathBuf },
}

fn positive_seconds(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(_) => Err("must be a positive number of seconds".into()),
        Err(e) => Err(e.to_string()),
    }
}
