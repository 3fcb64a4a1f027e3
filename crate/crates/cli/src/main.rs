mod commands;
mod report;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use comatch_core::Error;

/// Exit status for a failed gradient check.
pub const EXIT_CHECK: u8 = 1;
/// Exit status for bad usage, invalid input, I/O and checkpoint errors.
pub const EXIT_USAGE: u8 = 2;
/// Exit status when a non-finite value aborts a run.
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "comatch",
    version,
    about = "Train and run the co-matching reader"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on <data>/train, keep the best checkpoint on <data>/dev.
    Train(TrainArgs),
    /// Accuracy on a labeled split, overall and per bucket.
    Eval(EvalArgs),
    /// Scores, probabilities and the chosen answer for every question of one article.
    Predict(PredictArgs),
    /// Dump the attention maps of one question/option pair as JSON.
    InspectAttention(InspectArgs),
    /// Finite-difference check of every parameter gradient on a tiny instance.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArg {
    /// `key=value` file applied before the flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ShapeArgs {
    /// Word-vector size.
    #[arg(long)]
    pub d: Option<usize>,
    /// Recurrent hidden size (both directions together).
    #[arg(long)]
    pub l: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VariantArg {
    Full,
    SingleMatch,
    Flat,
}

impl VariantArg {
    pub fn name(self) -> &'static str {
        match self {
            VariantArg::Full => "full",
            VariantArg::SingleMatch => "single-match",
            VariantArg::Flat => "flat",
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Directory with train/ and dev/ article trees.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Pretrained word vectors, `token v1 ... vd` per line.
    #[arg(long, value_name = "FILE")]
    pub emb: PathBuf,
    /// Where the best checkpoint is written.
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    /// Metrics log, one JSON record per epoch. Defaults to <out>.metrics.jsonl.
    #[arg(long, value_name = "FILE")]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Update the word vectors as well.
    #[arg(long)]
    pub trainable_emb: bool,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub clip: Option<f64>,
    /// Dropout rate on embedded inputs.
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Split {
    Test,
    Dev,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Test => "test",
            Split::Dev => "dev",
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    /// Directory holding the split subdirectory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub shape: ShapeArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    /// One article file; the answers field is optional.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub shape: ShapeArgs,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, value_name = "FILE")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Zero-based question index.
    #[arg(long)]
    pub question: usize,
    /// Zero-based option index.
    #[arg(long)]
    pub option: usize,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[command(flatten)]
    pub shape: ShapeArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FaultArg {
    /// Scale the right-operand gradient of matrix products.
    MatmulRhs,
    /// Drop the forget-gate term of the cell-state recurrence.
    LstmCarry,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Central-difference step.
    #[arg(long, default_value_t = comatch_core::model::GRADCHECK_EPS)]
    pub eps: f64,
    /// Only this variant; all three by default.
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Corrupt one backward rule; the check must then fail.
    #[arg(long, value_enum)]
    pub inject_fault: Option<FaultArg>,
}

fn error_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::InspectAttention(a) => commands::inspect_attention(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}
