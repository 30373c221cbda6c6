mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Aggregation, EmbedderKind, Layer, ProviderKind};
use error::CliError;
use hiertree_core::eval::SweepParam;

/// Zero-shot classification with LLM-built knowledge trees.
#[derive(Debug, Parser)]
#[command(name = "hiertree", version, about)]
struct Cli {
    /// Config file: TOML, or JSON when the extension is .json.
    /// Flags and environment variables override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random choice (k-means, synthetic encoders). Default 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scoring; also the default gateway concurrency.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a knowledge tree for a label set.
    BuildTree(BuildTreeArgs),
    /// Predict a class for every image in an embedding file.
    Classify(ClassifyArgs),
    /// Accuracy and confusion matrices over a labelled manifest.
    Evaluate(EvaluateArgs),
    /// Per-level score trace for one image.
    Explain(ExplainArgs),
    /// Accuracy over a range of one hyperparameter.
    Sweep(SweepArgs),
    /// Inspect or clear the response cache.
    #[command(subcommand)]
    Cache(CacheCommand),
}

#[derive(Debug, Args)]
struct ProviderArgs {
    /// Where descriptions come from.
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    /// Recorded responses for --provider replay (a cache directory).
    #[arg(long, value_name = "DIR")]
    fixtures: Option<PathBuf>,
    /// Response cache for live providers.
    #[arg(long, env = "HIERTREE_CACHE_DIR", value_name = "DIR")]
    cache_dir: Option<PathBuf>,
    /// Chat-completion endpoint. The bearer token is read from HIERTREE_API_KEY.
    #[arg(long, env = "HIERTREE_API_URL")]
    api_url: Option<String>,
    /// Chat model name (default gpt-4o-mini).
    #[arg(long)]
    model: Option<String>,
    /// Sampling temperature (default 0).
    #[arg(long)]
    temperature: Option<f64>,
    /// Response length cap per request (default 1024).
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Concurrent provider requests (default 4).
    #[arg(long)]
    gateway_jobs: Option<usize>,
    /// Prompt templates (TOML or JSON) replacing the built-in ones.
    #[arg(long, value_name = "PATH")]
    templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EmbedderArgs {
    /// Text encoder used for descriptions.
    #[arg(long, value_enum)]
    embedder: Option<EmbedderKind>,
    /// JSON spec for --embedder synthetic.
    #[arg(long, value_name = "PATH")]
    embedder_spec: Option<PathBuf>,
    /// Embedding file keyed by text, for --embedder file.
    #[arg(long, value_name = "PATH")]
    text_embeddings: Option<PathBuf>,
    /// Encoder endpoint for --embedder http.
    #[arg(long)]
    embed_url: Option<String>,
    /// Vector dimension expected from --embedder http.
    #[arg(long)]
    embed_dim: Option<usize>,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Clusters per class when choosing k.
    #[arg(long)]
    group_ratio: Option<f64>,
    /// Largest group compared directly without another split (default 2).
    #[arg(long)]
    leaf_threshold: Option<usize>,
    /// Groups above this size are summarized and split again (default 10).
    #[arg(long)]
    direct_threshold: Option<usize>,
    /// Deepest node level (default 6).
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    kmeans_max_iters: Option<usize>,
}

#[derive(Debug, Args)]
struct FusionArgs {
    /// Weight of the description score (default 0.9).
    #[arg(long)]
    lambda: Option<f64>,
    /// Minimum rise between level scores (default 0).
    #[arg(long)]
    tau: Option<f64>,
    /// Use only the first N description levels.
    #[arg(long)]
    max_depth_used: Option<usize>,
    /// One row per level (mean) or per description line (flatten; needs an embedder).
    #[arg(long, value_enum)]
    aggregation: Option<Aggregation>,
}

#[derive(Debug, Args)]
struct ScoringInputs {
    /// Image embedding file keyed by image id.
    #[arg(long, value_name = "PATH")]
    images: PathBuf,
    /// Label embedding file keyed by class id.
    #[arg(long, value_name = "PATH")]
    label_embeddings: PathBuf,
}

#[derive(Debug, Args)]
struct BuildTreeArgs {
    /// JSON array of class names, or an object with a class_ids array.
    #[arg(long, value_name = "PATH")]
    labels: PathBuf,
    /// Tree JSON to write.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Also embed "a photo of a <class>." for every class and write the vectors here.
    #[arg(long, value_name = "PATH")]
    write_label_embeddings: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    embedder: EmbedderArgs,
    #[command(flatten)]
    build: BuildArgs,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[command(flatten)]
    inputs: ScoringInputs,
    /// Knowledge tree; required unless --baseline.
    #[arg(long, value_name = "PATH")]
    tree: Option<PathBuf>,
    /// Label-embedding argmax only.
    #[arg(long)]
    baseline: bool,
    /// Predictions JSON to write.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[command(flatten)]
    fusion: FusionArgs,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Dataset manifest JSON.
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    #[command(flatten)]
    inputs: ScoringInputs,
    /// Knowledge tree; without it only the baseline is evaluated.
    #[arg(long, value_name = "PATH")]
    tree: Option<PathBuf>,
    /// Directory for eval.json and confusion CSVs.
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    /// Most-changed confusion cells to report.
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    #[command(flatten)]
    fusion: FusionArgs,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    inputs: ScoringInputs,
    #[arg(long, value_name = "PATH")]
    tree: PathBuf,
    /// Image to explain.
    #[arg(long)]
    image_id: String,
    /// Classes to show, highest fused score first.
    #[arg(long, default_value_t = 5)]
    top: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(flatten)]
    fusion: FusionArgs,
    #[command(flatten)]
    embedder: EmbedderArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// lambda, tau, depth or group_ratio.
    #[arg(long, value_parser = parse_param)]
    param: SweepParam,
    /// Ascending comma-separated values.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    values: Vec<f64>,
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    #[command(flatten)]
    inputs: ScoringInputs,
    /// Knowledge tree; group_ratio sweeps rebuild it from its stored initial descriptions.
    #[arg(long, value_name = "PATH")]
    tree: PathBuf,
    /// sweep.csv to write.
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    #[command(flatten)]
    fusion: FusionArgs,
    #[command(flatten)]
    provider: ProviderArgs,
    #[command(flatten)]
    embedder: EmbedderArgs,
    #[command(flatten)]
    build: BuildArgs,
}

fn parse_param(s: &str) -> Result<SweepParam, String> {
    s.parse()
        .map_err(|e: hiertree_core::eval::EvalError| e.to_string())
}

#[derive(Debug, Subcommand)]
enum CacheCommand {
    /// Entry count and total size.
    Stats(CacheArgs),
    /// Delete every cached response.
    Clear(CacheArgs),
}

#[derive(Debug, Args)]
struct CacheArgs {
    #[arg(long, env = "HIERTREE_CACHE_DIR", value_name = "DIR")]
    cache_dir: Option<PathBuf>,
}

impl ProviderArgs {
    fn fill(&self, l: &mut Layer) {
        l.provider = self.provider;
        l.fixtures = self.fixtures.clone();
        l.cache_dir = self.cache_dir.clone();
        l.api_url = self.api_url.clone();
        l.model = self.model.clone();
        l.temperature = self.temperature;
        l.max_tokens = self.max_tokens;
        l.gateway_jobs = self.gateway_jobs;
        l.templates = self.templates.clone();
    }
}

impl EmbedderArgs {
    fn fill(&self, l: &mut Layer) {
        l.embedder = self.embedder;
        l.embedder_spec = self.embedder_spec.clone();
        l.text_embeddings = self.text_embeddings.clone();
        l.embed_url = self.embed_url.clone();
        l.embed_dim = self.embed_dim;
    }
}

impl BuildArgs {
    fn fill(&self, l: &mut Layer) {
        l.group_ratio = self.group_ratio;
        l.leaf_threshold = self.leaf_threshold;
        l.direct_threshold = self.direct_threshold;
        l.max_depth = self.max_depth;
        l.kmeans_max_iters = self.kmeans_max_iters;
    }
}

impl FusionArgs {
    fn fill(&self, l: &mut Layer) {
        l.lambda = self.lambda;
        l.tau = self.tau;
        l.max_depth_used = self.max_depth_used;
        l.aggregation = self.aggregation;
    }
}

fn flag_layer(cli: &Cli) -> Layer {
    let mut l = Layer {
        seed: cli.seed,
        jobs: cli.jobs,
        ..Layer::default()
    };
    match &cli.command {
        Command::BuildTree(a) => {
            a.provider.fill(&mut l);
            a.embedder.fill(&mut l);
            a.build.fill(&mut l);
        }
        Command::Classify(a) => {
            a.fusion.fill(&mut l);
            a.embedder.fill(&mut l);
        }
        Command::Evaluate(a) => {
            a.fusion.fill(&mut l);
            a.embedder.fill(&mut l);
        }
        Command::Explain(a) => {
            a.fusion.fill(&mut l);
            a.embedder.fill(&mut l);
        }
        Command::Sweep(a) => {
            a.fusion.fill(&mut l);
            a.provider.fill(&mut l);
            a.embedder.fill(&mut l);
            a.build.fill(&mut l);
        }
        Command::Cache(CacheCommand::Stats(a) | CacheCommand::Clear(a)) => {
            l.cache_dir = a.cache_dir.clone();
        }
    }
    l
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => Layer::load(path)?,
        None => Layer::default(),
    };
    let settings = config::resolve(flag_layer(&cli), file)?;
    if let Some(n) = settings.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::other(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::BuildTree(a) => commands::build_tree(
            &settings,
            &a.labels,
            &a.out,
            a.write_label_embeddings.as_deref(),
        ),
        Command::Classify(a) => commands::classify(
            &settings,
            &a.inputs.images,
            &a.inputs.label_embeddings,
            a.tree.as_deref(),
            a.baseline,
            &a.out,
        ),
        Command::Evaluate(a) => commands::evaluate(
            &settings,
            &a.manifest,
            &a.inputs.images,
            &a.inputs.label_embeddings,
            a.tree.as_deref(),
            &a.out_dir,
            a.top_k,
        ),
        Command::Explain(a) => commands::explain(
            &settings,
            &a.inputs.images,
            &a.inputs.label_embeddings,
            &a.tree,
            &a.image_id,
            a.top,
            a.format == Format::Json,
            a.out.as_deref(),
        ),
        Command::Sweep(a) => commands::sweep(
            &settings,
            a.param,
            a.values,
            &a.manifest,
            &a.inputs.images,
            &a.inputs.label_embeddings,
            &a.tree,
            &a.out,
        ),
        Command::Cache(CacheCommand::Stats(_)) => commands::cache_stats(&settings),
        Command::Cache(CacheCommand::Clear(_)) => commands::cache_clear(&settings),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
