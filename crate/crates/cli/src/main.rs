//! `csg`: corpus generation, training, link evaluation, search episodes and
//! plots for commonsense-scene-graph object search.

mod commands;
mod common;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csg_core::defaults;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "csg", version, about = "Object search with commonsense scene graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded corpus of household scenes with a train/test split.
    Generate(GenerateArgs),
    /// Train the link-prediction model on a corpus.
    Train(TrainArgs),
    /// Score link predictions against the statistical baseline.
    EvalLink(EvalArgs),
    /// Run seeded search episodes and report SR and SPL.
    Search(SearchArgs),
    /// Export the likelihood heatmap and top candidates for one target.
    Plot(PlotArgs),
    /// Print every default hyperparameter and where it comes from.
    Defaults(DefaultsArgs),
}

#[derive(Args, Clone, Debug)]
pub struct Runtime {
    /// Knowledge backend.
    #[arg(long, value_enum, default_value_t = BackendArg::Offline)]
    pub backend: BackendArg,
    /// Response cache for the external backend.
    #[arg(long, default_value = ".csg-cache")]
    pub cache_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Offline,
    External,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Output directory for scenes and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = defaults::SEED)]
    pub seed: u64,
    /// Train fraction of the seeded split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    /// Generator config (csg-gen/1 JSON); the bundled one by default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Only single-room layouts.
    #[arg(long)]
    pub single_room: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct LinkArgs {
    /// Edge distance threshold in meters [paper-default: 1.0].
    #[arg(long, default_value_t = defaults::D_THRE)]
    pub d_thre: f64,
    /// Link probability threshold [paper-default: 0.5].
    #[arg(long, default_value_t = defaults::LINK_THRESHOLD)]
    pub threshold: f64,
    /// Comma-separated movable categories withheld from training; evaluation
    /// then scores only these categories.
    #[arg(long, value_delimiter = ',')]
    pub held_out: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus directory containing manifest.json.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint to write; its metadata goes to a .json sidecar.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint; epoch numbering continues.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSONL training log (default: <out>.log.jsonl).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Graphs per minibatch [paper-default: 32].
    #[arg(long, default_value_t = defaults::BATCH_GRAPHS)]
    pub batch: usize,
    #[arg(long, default_value_t = defaults::EPOCHS)]
    pub epochs: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = defaults::LEARNING_RATE)]
    pub lr: f64,
    #[arg(long, default_value_t = defaults::SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub link: LinkArgs,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Model checkpoint (default: the bundled one).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Split to score; the baseline is always fitted on the train split.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub link: LinkArgs,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    SingleRoom,
    MultiRoom,
    RealWorld,
}

#[derive(Args, Debug, Clone)]
pub struct PlannerArgs {
    /// Planner weight preset.
    #[arg(long, value_enum, default_value_t = PresetArg::SingleRoom)]
    pub preset: PresetArg,
    /// Likelihood spread radius in meters; regions are 2r squares.
    #[arg(long, default_value_t = defaults::SPREAD_RADIUS)]
    pub r: f64,
    /// Award per correlated object [paper-default: 0.05].
    #[arg(long)]
    pub w: Option<f64>,
    /// Cost weight on likelihood [paper-default: 0.4 single-room, 0.6 multi-room].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Cost weight on distance [paper-default: 0.6 single-room, 0.4 multi-room].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Edge distance threshold in meters [paper-default: 1.0].
    #[arg(long, default_value_t = defaults::D_THRE)]
    pub d_thre: f64,
    /// Link probability threshold [paper-default: 0.5].
    #[arg(long, default_value_t = defaults::LINK_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    CsgOs,
    Random,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    /// A single scene file.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    pub scene: Option<PathBuf>,
    /// A corpus directory; episodes cycle through the chosen split.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Model checkpoint (default: the bundled one).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory for traces/ and metrics.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyArg::CsgOs)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 30)]
    pub episodes: usize,
    /// Action budget per episode.
    #[arg(long, default_value_t = defaults::MAX_STEPS)]
    pub max_steps: usize,
    #[arg(long, default_value_t = defaults::SEED)]
    pub seed: u64,
    /// Minimum start-to-target distance in meters.
    #[arg(long, default_value_t = csg_core::sim::MIN_START_DISTANCE)]
    pub min_start: f64,
    #[command(flatten)]
    pub planner: PlannerArgs,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Target description, e.g. "cup" or "cup in living room".
    #[arg(long)]
    pub target: String,
    /// Robot position "x,y" in meters (default: free cell nearest the centre).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub start: Option<Vec<f64>>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub planner: PlannerArgs,
    #[command(flatten)]
    pub runtime: Runtime,
}

#[derive(Args, Debug)]
pub struct DefaultsArgs {
    /// Machine-readable output.
    #[arg(long)]
    pub json: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::EvalLink(a) => commands::eval_link(a),
        Command::Search(a) => commands::search(a),
        Command::Plot(a) => commands::plot(a),
        Command::Defaults(a) => commands::print_defaults(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit as u8)
        }
    }
}
