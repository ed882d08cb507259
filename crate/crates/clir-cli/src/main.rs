//! `clir-lab`: one binary wiring the whole pipeline — dedup, mine, permute,
//! eval, merge, sweep, report and embed — over shared file formats.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 transport
//! error against the embedding service.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "clir-lab", version, about = "Cross-lingual retrieval data and evaluation toolkit")]
pub struct Cli {
    /// RNG seed used by seeded stages (min-hash permutations).
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Worker threads [default: all logical CPUs].
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case", tag = "subcommand")]
pub enum Command {
    /// Drop near-duplicate triples by min-hash over English queries.
    Dedup(DedupArgs),
    /// Mine hard negatives from a document embedding matrix.
    Mine(MineArgs),
    /// Expand triples into per-language-combination training files.
    Permute(PermuteArgs),
    /// Evaluate retrieval NDCG@k for one dataset and direction.
    Eval(EvalArgs),
    /// Weight-average two checkpoint archives.
    Merge(MergeArgs),
    /// Merge and evaluate every model pair.
    Sweep(SweepArgs),
    /// Render AVG/OVR score tables from evaluation results.
    Report(ReportArgs),
    /// Embed texts through the remote embedding service into an EMB1 file.
    Embed(EmbedArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DedupArgs {
    /// Triples JSONL to deduplicate.
    #[arg(long)]
    pub input: PathBuf,
    /// Kept triples JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Dropped-triple report JSONL ({id, duplicate_of}).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Estimated-Jaccard drop threshold in (0, 1].
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Min-hash permutations (>= 16).
    #[arg(long, default_value_t = 128)]
    pub num_perms: usize,
    /// Character n-gram width for shingling.
    #[arg(long, default_value_t = 5)]
    pub shingle: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct MineArgs {
    /// Deduplicated triples JSONL; ids must match query-embedding ids and
    /// each record needs a "positive_doc_id" field.
    #[arg(long)]
    pub triples: PathBuf,
    /// EMB1 matrix over the document pool.
    #[arg(long)]
    pub doc_embeddings: PathBuf,
    /// EMB1 matrix over the triple queries.
    #[arg(long)]
    pub query_embeddings: PathBuf,
    /// Candidate rank window "lo:hi", 1-indexed inclusive.
    #[arg(long, default_value = "50:300")]
    pub rank_window: String,
    /// Absolute similarity cap.
    #[arg(long, default_value_t = 0.8)]
    pub abs_cap: f64,
    /// Relative margin against the positive's similarity.
    #[arg(long, default_value_t = 0.95)]
    pub rel_margin: f64,
    /// Negatives to mine per query.
    #[arg(long, default_value_t = 5)]
    pub count: usize,
    /// Keep the query's own positive in the ranking when windowing.
    #[arg(long, default_value_t = false)]
    pub include_own_positive: bool,
    /// Mining results JSONL.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PermuteArgs {
    /// Deduplicated triples JSONL.
    #[arg(long)]
    pub triples: PathBuf,
    /// Mining results JSONL from `mine`.
    #[arg(long)]
    pub negatives: PathBuf,
    /// Parallel corpus JSONL resolving mined doc ids to both languages.
    #[arg(long)]
    pub corpus: PathBuf,
    /// "all" or a comma-separated subset like "koenen,enkoko".
    #[arg(long, default_value = "all")]
    pub combos: String,
    /// Directory for the train_{combo}.jsonl files.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Dataset name recorded in the result.
    #[arg(long)]
    pub dataset: String,
    /// Task direction, e.g. "en-ko".
    #[arg(long)]
    pub direction: String,
    /// Queries JSONL.
    #[arg(long)]
    pub queries: PathBuf,
    /// Parallel corpus JSONL (the document pool).
    #[arg(long)]
    pub corpus: PathBuf,
    /// TREC qrels file.
    #[arg(long)]
    pub qrels: PathBuf,
    /// EMB1 matrix for the direction's query-language texts.
    #[arg(long)]
    pub query_embeddings: PathBuf,
    /// EMB1 matrix for the direction's document-language texts.
    #[arg(long)]
    pub doc_embeddings: PathBuf,
    /// NDCG cutoff.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Result JSON path.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MergeArgs {
    /// Anchor checkpoint archive.
    #[arg(long)]
    pub anchor: PathBuf,
    /// Pair checkpoint archive.
    #[arg(long)]
    pub pair: PathBuf,
    /// Weight on the anchor, in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Merged archive path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    /// Model list: one "label path" (or bare path) per line.
    #[arg(long)]
    pub models: PathBuf,
    /// Weight on the anchor of every pair.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Evaluation manifest JSON mapping merged pairs to embedding files.
    #[arg(long)]
    pub eval_manifest: Option<PathBuf>,
    /// Directory to write each merged archive into.
    #[arg(long)]
    pub merge_dir: Option<PathBuf>,
    /// Sweep report JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Results directory (per-model files or subdirectories) or one file.
    #[arg(long)]
    pub results: PathBuf,
    /// Baseline results entry; enables delta annotations.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    /// Output format: markdown, csv or json.
    #[arg(long, default_value = "markdown")]
    pub format: String,
    /// Delta bin thresholds "light,strong" in percentage points.
    #[arg(long, default_value = "0.5,1.5")]
    pub bins: String,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    /// Input JSONL with {"id", "text"} records.
    #[arg(long)]
    pub input: PathBuf,
    /// Output EMB1 path.
    #[arg(long)]
    pub output: PathBuf,
    /// Embedding service base URL (POST {endpoint}/embed).
    #[arg(long, env = "CLIR_EMBED_ENDPOINT")]
    pub endpoint: String,
    /// Texts per request.
    #[arg(long, env = "CLIR_EMBED_BATCH", default_value_t = 32)]
    pub batch_size: usize,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
    /// L2-normalize rows before writing.
    #[arg(long, default_value_t = false)]
    pub normalize: bool,
}

/// Errors split by exit-code class.
pub enum CliError {
    Usage(String),
    Core(clir_core::Error),
}

impl From<clir_core::Error> for CliError {
    fn from(e: clir_core::Error) -> Self {
        CliError::Core(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CLIR_LOG", "warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let parallelism = cli
        .parallelism
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if parallelism == 0 {
        eprintln!("error: --parallelism must be positive");
        return ExitCode::from(1);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(parallelism).build_global() {
        eprintln!("error: cannot configure thread pool: {e}");
        return ExitCode::from(1);
    }

    // Reproducibility echo: the resolved configuration on one line.
    let mut echo = serde_json::to_value(&cli.command).expect("serializable command");
    echo["seed"] = cli.seed.into();
    echo["parallelism"] = parallelism.into();
    eprintln!("config: {echo}");

    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_remote() { 3 } else { 2 })
        }
    }
}
