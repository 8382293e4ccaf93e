//! `tkge` — temporal knowledge graph embeddings on products of
//! constant-curvature manifolds.
//!
//! Exit codes: 0 success, 2 usage or configuration problem, 3 numeric
//! failure during computation.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tkge::curvature::{Aggregation, PsiFormula};
use tkge::data::{Split, TimeScale};
use tkge::eval::{FilterMode, TieMode};
use tkge::model::{ReprVariant, ScoreVariant};

/// Parse a kebab-case enum value through its canonical serialized name.
fn kebab<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .map_err(|_| format!("unrecognized value '{s}'"))
}

#[derive(Parser)]
#[command(
    name = "tkge",
    version,
    about = "Temporal knowledge graph completion with time-evolving embeddings \
             on products of constant-curvature manifolds"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Force one worker and suppress timing notes, so identical inputs and
    /// seed give byte-identical outputs.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate per-timestamp graph curvature; prints a JSON summary and
    /// optionally writes curvature.csv.
    EstimateCurvature(EstimateArgs),
    /// Estimate curvature, then print a product signature matching the
    /// observed sign mix.
    ProposeSignature(ProposeArgs),
    /// Train a model and write a checkpoint, training log, and metrics.
    Train(TrainArgs),
    /// Rank held-out queries with a checkpoint and print MRR/Hits metrics.
    Evaluate(EvaluateArgs),
    /// Score one query 's,p,?,t' or '?,p,o,t' and print the top entities.
    Predict(PredictArgs),
    /// Dump per-entity figures data (degrees vs distances, velocity norms)
    /// from a checkpoint as CSV.
    Export(ExportArgs),
    /// Compare analytic gradients against central finite differences on a
    /// randomly initialized model.
    FdCheck(FdCheckArgs),
    /// Train several candidate signatures and rank them by validation MRR.
    SignatureSearch(SearchArgs),
}

#[derive(Args, Clone)]
pub struct EstimateArgs {
    /// Training TSV: subject<TAB>predicate<TAB>object<TAB>timestamp.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation TSV (optional; extends the timestamp vocabulary).
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Test TSV (optional; extends the timestamp vocabulary).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sampled parallelogram configurations per node (default 1000).
    #[arg(long)]
    pub n_iter: Option<usize>,
    /// Enumerate every valid configuration instead of sampling.
    #[arg(long)]
    pub exhaustive: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Aggregation over samples: mean or paper-sum.
    #[arg(long, value_parser = kebab::<Aggregation>)]
    pub mode: Option<Aggregation>,
    /// Deviation expression: canonical or paper-literal.
    #[arg(long, value_parser = kebab::<PsiFormula>)]
    pub formula: Option<PsiFormula>,
    /// Directory for curvature.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ProposeArgs {
    #[command(flatten)]
    pub estimate: EstimateArgs,
    /// Total embedding dimension to distribute across components.
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Maximum number of product components.
    #[arg(long, default_value_t = 3)]
    pub max_components: usize,
}

#[derive(Args, Clone)]
pub struct TrainArgs {
    /// Training TSV: subject<TAB>predicate<TAB>object<TAB>timestamp.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation TSV (required by training for early stopping).
    #[arg(long)]
    pub valid: Option<PathBuf>,
    /// Test TSV (optional; completes the filter index).
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory: checkpoint files, train.log, metrics.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Product signature, e.g. 'P20@-1,S10@0.5,E10@0'.
    #[arg(long)]
    pub signature: Option<String>,
    /// Entity dynamics: linear, periodic, linear-plus-periodic, or static.
    #[arg(long, value_parser = kebab::<ReprVariant>)]
    pub repr: Option<ReprVariant>,
    /// Score form: stretch-translate, cosh-stretch-translate, stretch-both,
    /// stretch-both-translate, stretch-only, or translate-only.
    #[arg(long, value_parser = kebab::<ScoreVariant>)]
    pub score: Option<ScoreVariant>,
    /// Time mapping: normalized or raw.
    #[arg(long, value_parser = kebab::<TimeScale>)]
    pub time_scale: Option<TimeScale>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Negative samples per training quadruple.
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epoch budget; 0 evaluates the initialization only.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Validate every this many epochs.
    #[arg(long)]
    pub validate_every: Option<usize>,
    /// Consecutive non-improving validations tolerated before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Candidate filtering during validation: raw, triple, or time-aware.
    #[arg(long, value_parser = kebab::<FilterMode>)]
    pub filter: Option<FilterMode>,
    /// Tied-score handling: optimistic, pessimistic, or mean.
    #[arg(long, value_parser = kebab::<TieMode>)]
    pub tie: Option<TieMode>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training TSV the checkpoint was built from.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Which split to rank: train, valid, or test.
    #[arg(long, value_parser = kebab::<Split>, default_value = "test")]
    pub split: Split,
    /// Candidate filtering: raw, triple, or time-aware.
    #[arg(long, value_parser = kebab::<FilterMode>, default_value = "time-aware")]
    pub filter: FilterMode,
    /// Tied-score handling: optimistic, pessimistic, or mean.
    #[arg(long, value_parser = kebab::<TieMode>, default_value = "mean")]
    pub tie: TieMode,
    /// Write per-query ranks as CSV (query_id,direction,rank).
    #[arg(long)]
    pub per_query: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Query with exactly one hole: 's,p,?,t' or '?,p,o,t' (labels).
    #[arg(long)]
    pub query: String,
    /// Rows to print.
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    /// Candidate filtering: raw, triple, or time-aware. Filtering needs the
    /// dataset flags below.
    #[arg(long, value_parser = kebab::<FilterMode>, default_value = "raw")]
    pub filter: FilterMode,
    /// Training TSV, for building the filter index.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ExportKind {
    /// Per entity: train degree and distance-to-origin statistics.
    DegreeDistance,
    /// Per entity: Euclidean norm of the velocity vector.
    VelocityNorms,
}

#[derive(Args)]
pub struct ExportArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// What to export.
    #[arg(long, value_enum)]
    pub kind: ExportKind,
    /// Training TSV (required for degree-distance).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Output CSV file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FdCheckArgs {
    /// Product signature, e.g. 'P3@-1,S2@0.7,E2@0'.
    #[arg(long)]
    pub signature: String,
    /// Entity dynamics: linear, periodic, linear-plus-periodic, or static.
    #[arg(long, value_parser = kebab::<ReprVariant>)]
    pub repr: Option<ReprVariant>,
    /// Score form (see `train --help`).
    #[arg(long, value_parser = kebab::<ScoreVariant>)]
    pub score: Option<ScoreVariant>,
    /// Time mapping: normalized or raw.
    #[arg(long, value_parser = kebab::<TimeScale>)]
    pub time_scale: Option<TimeScale>,
    #[arg(long, default_value_t = 30)]
    pub entities: usize,
    /// Raw predicate count (doubled internally for reciprocals).
    #[arg(long, default_value_t = 3)]
    pub predicates: usize,
    #[arg(long, default_value_t = 8)]
    pub timestamps: usize,
    /// Quadruples in the probe batch.
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    /// Negative samples per quadruple.
    #[arg(long, default_value_t = 3)]
    pub negatives: usize,
    /// Random coordinates probed per parameter block.
    #[arg(long, default_value_t = 4)]
    pub probes: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    pub h: f64,
    /// Relative error bound.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub train_args: TrainArgs,
    /// Candidate signature; repeatable. Without it, one candidate is
    /// proposed from the estimated curvature histogram.
    #[arg(long)]
    pub candidate: Vec<String>,
    /// Total dimension for the proposed candidate.
    #[arg(long, default_value_t = 100)]
    pub dim: usize,
    /// Component cap for the proposed candidate.
    #[arg(long, default_value_t = 3)]
    pub max_components: usize,
    /// Curvature sampling budget for the proposal (default 1000).
    #[arg(long)]
    pub n_iter: Option<usize>,
    /// Configurations to train (default: one per candidate).
    #[arg(long)]
    pub budget: Option<usize>,
}

impl Cmd {
    /// Config file of the subcommand, for resolving the worker count before
    /// the pool is built.
    fn config_path(&self) -> Option<&PathBuf> {
        match self {
            Cmd::EstimateCurvature(a) => a.config.as_ref(),
            Cmd::ProposeSignature(a) => a.estimate.config.as_ref(),
            Cmd::Train(a) => a.config.as_ref(),
            Cmd::SignatureSearch(a) => a.train_args.config.as_ref(),
            Cmd::Evaluate(_) | Cmd::Predict(_) | Cmd::Export(_) | Cmd::FdCheck(_) => None,
        }
    }
}

fn run(cli: Cli) -> tkge::Result<()> {
    let file_workers = match cli.cmd.config_path() {
        Some(p) => tkge::config::load_config(p)?.workers,
        None => None,
    };
    let threads = if cli.deterministic {
        1
    } else {
        match cli.workers.or(file_workers) {
            Some(0) => return Err(tkge::Error::Config("workers must be positive".into())),
            Some(n) => n,
            None => 0,
        }
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| tkge::Error::Config(format!("worker pool: {e}")))?;

    let det = cli.deterministic;
    match cli.cmd {
        Cmd::EstimateCurvature(a) => commands::estimate_curvature(a, det),
        Cmd::ProposeSignature(a) => commands::propose(a.estimate, a.dim, a.max_components, det),
        Cmd::Train(a) => commands::train(a, det),
        Cmd::Evaluate(a) => commands::evaluate(a, det),
        Cmd::Predict(a) => commands::predict(a),
        Cmd::Export(a) => commands::export(a),
        Cmd::FdCheck(a) => commands::fd_check_cmd(a),
        Cmd::SignatureSearch(a) => commands::search(a, det),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_usage() { 2 } else { 3 });
    }
}
