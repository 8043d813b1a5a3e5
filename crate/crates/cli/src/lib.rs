//! Command-line driver: dataset generation, detection, evaluation, ablation
//! and prompt sweeps.

pub mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use autohall::backend::{build_backend, BackendConfig, BackendKind, RetryPolicy};
use autohall::detect::{self, Aggregate, DetectionRecord, Detector, Exemplars, Method, UnigramOptions};
use autohall::evalreport::{self, MethodMetrics, ReportFormat, ReportInputs, SweepConfig, SweepPair};
use autohall::ingest::{self, CorpusFormat, CorpusManifest, ExpectedCounts};
use autohall::pipeline::{self, AutoHallConfig, PipelineError, RefusalFilter, RunManifest};
use autohall::prompts::{self, PromptRegistry};
use autohall::records;
use autohall::{
    BackendError, BalancedDataset, ChatBackend, DatasetKind, DetectConfig, DetectError, EvalError, IngestError,
    PromptError, RecordError, DEFAULT_K,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{FileConfig, CACHE_DIR_ENV};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_BACKEND: i32 = 4;
pub const EXIT_INVARIANT: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, kind: "usage", message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INPUT, kind: "input", message: message.into() }
    }

    fn backend(message: impl Into<String>) -> Self {
        CliError { code: EXIT_BACKEND, kind: "backend", message: message.into() }
    }

    fn invariant(message: impl Into<String>) -> Self {
        CliError { code: EXIT_INVARIANT, kind: "invariant", message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.kind, self.message)
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<RecordError> for CliError {
    fn from(e: RecordError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Config(m) => CliError::usage(m),
            BackendError::Script(m) => CliError::input(m),
            e => CliError::backend(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Backend(e) => e.into(),
            PipelineError::Prompt(e) => e.into(),
            PipelineError::Records(e) => e.into(),
            PipelineError::TooManyFailures { .. } => CliError::backend(e.to_string()),
            PipelineError::EmptyCorpus | PipelineError::Patterns { .. } => CliError::input(e.to_string()),
            e => CliError::invariant(e.to_string()),
        }
    }
}

impl From<DetectError> for CliError {
    fn from(e: DetectError) -> Self {
        match e {
            DetectError::Backend(e) => e.into(),
            DetectError::Prompt(e) => e.into(),
            DetectError::Exemplars(_) => CliError::input(e.to_string()),
            DetectError::Config(_) => CliError::usage(e.to_string()),
            e => CliError::backend(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Backend(e) => e.into(),
            EvalError::Prompt(e) => e.into(),
            e => CliError::input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "autohall", version, about = "Build model-specific hallucination datasets and detect hallucinations")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a balanced hallucination dataset from a claim corpus.
    Generate(GenerateArgs),
    /// Run a detection method over a dataset.
    Detect(DetectArgs),
    /// Score detection outputs and write reports.
    Eval(EvalArgs),
    /// Accuracy and F1 for K = 1..KMAX from stored verdicts.
    Ablate(AblateArgs),
    /// Classification accuracy under each prompt variant.
    Sweep(SweepArgs),
    /// Convert a corpus to normalized records.
    Normalize(NormalizeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// Backend kind.
    #[arg(long, value_parser = ["http", "scripted"])]
    pub backend: Option<String>,
    /// Reply script for the scripted backend.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Chat-completions URL for the http backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Response cache directory (also AUTOHALL_CACHE_DIR).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Maximum requests in flight.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Environment variable holding the API token.
    #[arg(long)]
    pub token_env: Option<String>,
    /// Attempts per request on rate limits and server errors.
    #[arg(long)]
    pub max_attempts: Option<u32>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Auto,
    Native,
    Normalized,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Auto => CorpusFormat::Auto,
            FormatArg::Native => CorpusFormat::Native,
            FormatArg::Normalized => CorpusFormat::Normalized,
        }
    }
}

fn parse_temperature(s: &str) -> Result<f64, String> {
    let t: f64 = s.parse().map_err(|e| format!("`{s}`: {e}"))?;
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(format!("temperature must be within [0, 1], got {t}"))
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: DatasetKind,
    /// Corpus file.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    pub format: FormatArg,
    /// Required label counts as FACTUAL,NONFACTUAL.
    #[arg(long)]
    pub expected_counts: Option<ExpectedCounts>,
    /// Fail on malformed rows instead of skipping them.
    #[arg(long)]
    pub strict: bool,
    /// Generation temperature in [0, 1].
    #[arg(long = "temp", value_parser = parse_temperature)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Classification prompt variant, P0..P5.
    #[arg(long, default_value = "P0")]
    pub variant: String,
    /// Confirm references with an extra yes/no call.
    #[arg(long)]
    pub second_pass: bool,
    /// Keep every factual entry when there are fewer than hallucinatory ones.
    #[arg(long)]
    pub allow_unbalanced: bool,
    /// Largest tolerated fraction of failed claims.
    #[arg(long, default_value_t = 0.5)]
    pub max_failure_fraction: f64,
    #[command(flatten)]
    pub backend: BackendArgs,
}

fn parse_dataset(s: &str) -> Result<DatasetKind, String> {
    s.parse()
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Balanced dataset file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    /// Sampled alternatives per entry.
    #[arg(long)]
    pub k: Option<usize>,
    /// Conflicts needed to predict a hallucination.
    #[arg(long)]
    pub threshold: Option<usize>,
    /// Sampling temperature in [0, 1].
    #[arg(long = "temp", value_parser = parse_temperature)]
    pub temperature: Option<f64>,
    /// Unigram baseline: count the original's own tokens.
    #[arg(long, value_parser = parse_bool, default_value = "true", num_args = 0..=1, default_missing_value = "true")]
    pub include_original: bool,
    /// Unigram baseline: token score aggregation.
    #[arg(long, value_parser = parse_aggregate, default_value = "mean")]
    pub aggregate: Aggregate,
    /// Unigram baseline: fixed decision threshold (calibrated on labels if absent).
    #[arg(long)]
    pub score_threshold: Option<f64>,
    /// Few-shot exemplars file.
    #[arg(long)]
    pub exemplars: Option<PathBuf>,
    /// Output file (default `<method>.detect` next to the dataset).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

fn parse_aggregate(s: &str) -> Result<Aggregate, String> {
    s.parse()
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum ReportFormatArg {
    Markdown,
    Csv,
    Svg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detection output files (repeatable).
    #[arg(long, required = true)]
    pub pred: Vec<PathBuf>,
    /// Balanced dataset file with gold labels.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Largest K for the ablation curve (default: stored K).
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Also tag hallucinatory claims with topics (calls the backend).
    #[arg(long)]
    pub topics: bool,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "markdown,csv,svg")]
    pub format: Vec<ReportFormatArg>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Detection output of the self-contradiction method.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub kmax: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Balanced dataset file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// `P0..P5` or a comma list such as `P0,P3`.
    #[arg(long, default_value = "P0..P5")]
    pub variants: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: DatasetKind,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "native")]
    pub format: FormatArg,
    #[arg(long)]
    pub expected_counts: Option<ExpectedCounts>,
    #[arg(long)]
    pub out: PathBuf,
}

const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
const DEFAULT_TEMPERATURE: f64 = 0.1;

struct Context {
    file: FileConfig,
}

impl Context {
    fn backend_config(&self, args: &BackendArgs) -> Result<BackendConfig, CliError> {
        let section = self.file.backend.clone().unwrap_or_default();
        let kind: BackendKind = args
            .backend
            .clone()
            .or(section.kind)
            .ok_or_else(|| CliError::usage("no backend selected; pass --backend http|scripted or set backend.kind"))?
            .parse()
            .map_err(CliError::usage)?;
        let mut config = match kind {
            BackendKind::Scripted => {
                let script = args
                    .script
                    .clone()
                    .or(section.script)
                    .ok_or_else(|| CliError::usage("scripted backend needs --script"))?;
                if !script.exists() {
                    return Err(CliError::input(format!("script file {} not found", script.display())));
                }
                BackendConfig::scripted(self.model(args), script)
            }
            BackendKind::Http => {
                let endpoint = args
                    .endpoint
                    .clone()
                    .or(section.endpoint)
                    .ok_or_else(|| CliError::usage("http backend needs --endpoint"))?;
                BackendConfig::http(self.model(args), endpoint)
            }
        };
        config.cache_dir = args
            .cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .or(section.cache_dir);
        if let Some(n) = args.concurrency.or(section.max_concurrency) {
            config.max_concurrency = n;
        }
        if let Some(t) = args.token_env.clone().or(section.token_env) {
            config.token_env = t;
        }
        if let Some(a) = args.max_attempts.or(section.max_attempts) {
            config.retry = RetryPolicy { max_attempts: a, ..config.retry };
        }
        if let Some(t) = section.timeout_secs {
            config.timeout_secs = t;
        }
        Ok(config)
    }

    fn model(&self, args: &BackendArgs) -> String {
        args.model.clone().or_else(|| self.file.model_id.clone()).unwrap_or_else(|| DEFAULT_MODEL.into())
    }

    fn backend(&self, args: &BackendArgs) -> Result<(BackendConfig, Box<dyn ChatBackend>), CliError> {
        let config = self.backend_config(args)?;
        let backend = build_backend(&config)?;
        Ok((config, backend))
    }

    fn prompts(&self) -> Result<PromptRegistry, CliError> {
        let registry = PromptRegistry::default();
        Ok(match &self.file.template_overrides_path {
            Some(path) => registry.with_override_file(path)?,
            None => registry,
        })
    }

    fn refusals(&self) -> Result<RefusalFilter, CliError> {
        match &self.file.refusal_patterns_path {
            Some(path) => RefusalFilter::from_file(path).map_err(|e| CliError::input(e.to_string())),
            None => Ok(RefusalFilter::default()),
        }
    }

    fn dataset_path(&self, flag: &Option<PathBuf>) -> Result<PathBuf, CliError> {
        let path = flag
            .clone()
            .or_else(|| self.file.paths.dataset.clone())
            .unwrap_or_else(|| PathBuf::from("run").join(pipeline::DATASET_FILE));
        require_file(&path, "balanced dataset")?;
        Ok(path)
    }

    fn reports_dir(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone().or_else(|| self.file.paths.reports.clone()).unwrap_or_else(|| PathBuf::from("reports"))
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!("missing {what}: expected file {}", path.display())))
    }
}

fn load_dataset(path: &Path) -> Result<BalancedDataset, CliError> {
    pipeline::load_dataset(path).map_err(CliError::from)
}

/// Parse `P0..P5` or `P0,P2` into display names.
pub fn parse_variants(spec: &str) -> Result<Vec<String>, CliError> {
    let bad = || CliError::usage(format!("bad variant list `{spec}`; use P0..P5 or P0,P3"));
    let index = |v: &str| -> Result<usize, CliError> {
        let v = v.trim();
        prompts::classification_variant_id(v).ok_or_else(bad)?;
        v[1..].parse().map_err(|_| bad())
    };
    let indices: Vec<usize> = if let Some((a, b)) = spec.split_once("..") {
        let (a, b) = (index(a)?, index(b)?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        spec.split(',').map(index).collect::<Result<_, _>>()?
    };
    Ok(indices.into_iter().map(|i| format!("P{i}")).collect())
}

/// Execute a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let ctx = Context { file };
    match cli.command {
        Command::Generate(args) => generate(&ctx, args),
        Command::Detect(args) => detect_cmd(&ctx, args),
        Command::Eval(args) => eval(&ctx, args),
        Command::Ablate(args) => ablate(&ctx, args),
        Command::Sweep(args) => sweep(&ctx, args),
        Command::Normalize(args) => normalize(args),
    }
}

#[derive(Serialize)]
struct GenerateSettings<'a> {
    dataset: DatasetKind,
    pipeline: &'a AutoHallConfig,
}

fn generate(ctx: &Context, args: GenerateArgs) -> Result<(), CliError> {
    let input = args
        .input
        .clone()
        .or_else(|| ctx.file.paths.corpus.clone())
        .ok_or_else(|| CliError::usage("no corpus given; pass --in"))?;
    require_file(&input, "corpus")?;
    let mut manifest = CorpusManifest::new(args.dataset, &input);
    manifest.format = args.format.into();
    manifest.strict = args.strict;
    manifest.expected_counts = args.expected_counts;
    let corpus = ingest::load_corpus(&manifest)?;

    let template = prompts::classification_variant_id(&args.variant)
        .ok_or_else(|| CliError::usage(format!("unknown variant `{}`", args.variant)))?;
    let temperature = args.temperature.or(ctx.file.temperature).unwrap_or(DEFAULT_TEMPERATURE);
    parse_temperature(&temperature.to_string()).map_err(CliError::usage)?;
    let seed = args.seed.or(ctx.file.seed).unwrap_or(0);
    let (backend_config, backend) = ctx.backend(&args.backend)?;
    let mut config = AutoHallConfig::new(backend_config.model_id.clone(), temperature, seed);
    config.classification_template = template.to_string();
    config.allow_unbalanced = args.allow_unbalanced;
    config.max_failure_fraction = args.max_failure_fraction;
    config.concurrency = backend_config.max_concurrency;
    config.concrete_second_pass = args.second_pass;

    let prompts = ctx.prompts()?;
    let refusals = ctx.refusals()?;
    let run = pipeline::run_autohall(&corpus.records, &config, &prompts, &refusals, &*backend)?;
    let out = args.out.clone().or_else(|| ctx.file.paths.out.clone()).unwrap_or_else(|| PathBuf::from("run"));
    let settings = GenerateSettings { dataset: args.dataset, pipeline: &config };
    let mut templates = vec![config.generation_template.as_str(), config.classification_template.as_str()];
    if config.concrete_second_pass {
        templates.push(prompts::CONCRETE_CHECK);
    }
    let manifest = RunManifest::new("generate", seed, &corpus.records, &prompts, &templates, &settings);
    pipeline::persist_run(&run, &manifest, &out)?;

    let s = &run.dataset.stats;
    let rate = pipeline::hallucination_rate(s)?;
    println!("N={}, invalid={}, H={}, H%={}", s.total_claims, s.invalid_references, s.hallucination_count, rate);
    log::info!(
        "classified={} unparseable={} transport_failed={} balanced={} -> {}",
        s.classified,
        s.unparseable,
        s.transport_failed,
        run.dataset.entries.len(),
        out.display()
    );
    Ok(())
}

fn detect_cmd(ctx: &Context, args: DetectArgs) -> Result<(), CliError> {
    let path = ctx.dataset_path(&args.dataset)?;
    let dataset = load_dataset(&path)?;
    let (backend_config, backend) = ctx.backend(&args.backend)?;
    let mut config = DetectConfig::new(
        backend_config.model_id.clone(),
        args.temperature.or(ctx.file.temperature).unwrap_or(DEFAULT_TEMPERATURE),
    );
    parse_temperature(&config.temperature.to_string()).map_err(CliError::usage)?;
    config.k = args.k.or(ctx.file.k).unwrap_or(DEFAULT_K);
    config.threshold = args.threshold.or(ctx.file.threshold).unwrap_or(1);
    config.concurrency = backend_config.max_concurrency;
    config.unigram = UnigramOptions { include_original: args.include_original, aggregate: args.aggregate };
    config.score_threshold = args.score_threshold;
    config.validate()?;

    let exemplars = match args.exemplars.clone().or_else(|| ctx.file.paths.exemplars.clone()) {
        Some(p) => Exemplars::from_file(&p)?,
        None => Exemplars::default(),
    };
    let prompts = ctx.prompts()?;
    let refusals = ctx.refusals()?;
    let detector = Detector { config: &config, prompts: &prompts, refusals: &refusals, backend: &*backend };
    let records = detect::run_detection(&dataset.entries, args.method, &detector, &exemplars)?;

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join(format!("{}.detect", args.method)));
    records::write_records(&out, &records)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    let positives = records.iter().filter(|r| r.error.is_none() && r.predicted).count();
    println!(
        "method={} entries={} predicted_hallucinations={} failed={}",
        args.method,
        records.len(),
        positives,
        failed
    );
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<DetectionRecord>, CliError> {
    require_file(path, "detection output")?;
    Ok(records::read_records(path)?)
}

fn method_of(path: &Path, records: &[DetectionRecord]) -> Result<Method, CliError> {
    let mut methods = records.iter().map(|r| r.method);
    let first = methods.next().ok_or_else(|| CliError::input(format!("{} has no records", path.display())))?;
    if methods.any(|m| m != first) {
        return Err(CliError::input(format!("{} mixes detection methods", path.display())));
    }
    Ok(first)
}

/// Entries with stored verdicts and no error.
fn scored_outcomes(records: &[DetectionRecord]) -> Vec<DetectionRecord> {
    records.iter().filter(|r| r.error.is_none() && r.verdict_bits.is_some()).cloned().collect()
}

fn gold_for(gold: &BTreeMap<String, bool>, records: &[DetectionRecord]) -> BTreeMap<String, bool> {
    records.iter().filter_map(|r| gold.get(&r.claim_id).map(|g| (r.claim_id.clone(), *g))).collect()
}

fn generation_row(dataset_path: &Path) -> Option<(String, autohall::GenerationStats)> {
    let manifest = dataset_path.parent()?.join(pipeline::MANIFEST_FILE);
    let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(manifest).ok()?).ok()?;
    let stats = manifest.stats?;
    let dataset = manifest.config.get("dataset").and_then(|v| v.as_str()).unwrap_or("corpus").to_string();
    let temperature = manifest.config.pointer("/pipeline/temperature").and_then(|v| v.as_f64()).unwrap_or(f64::NAN);
    Some((format!("{dataset}@T{temperature}"), stats))
}

fn eval(ctx: &Context, args: EvalArgs) -> Result<(), CliError> {
    let gold_path = ctx.dataset_path(&args.gold)?;
    let dataset = load_dataset(&gold_path)?;
    let gold = evalreport::gold_labels(&dataset);
    let mut inputs = ReportInputs::default();

    for path in &args.pred {
        let records = read_predictions(path)?;
        let method = method_of(path, &records)?;
        inputs.metrics.push(MethodMetrics::from_records(method.as_str(), &records, &gold)?);
        if method == Method::SelfContradiction && inputs.conflicts.is_none() {
            let outcomes = scored_outcomes(&records);
            let subset = gold_for(&gold, &outcomes);
            inputs.conflicts = Some(evalreport::conflict_stats(&outcomes, &subset)?);
            let stored = outcomes.iter().map(|o| o.verdict_bits.as_deref().map_or(0, str::len)).min().unwrap_or(0);
            let kmax = args.kmax.unwrap_or(stored);
            if kmax > 0 {
                inputs.ablation = evalreport::ablate_k(&outcomes, &subset, kmax)?;
            }
        }
    }
    inputs.generation.extend(generation_row(&gold_path));

    if args.topics {
        let (config, backend) = ctx.backend(&args.backend)?;
        let vocab: Vec<String> = ctx
            .file
            .topic_vocabulary
            .clone()
            .unwrap_or_else(|| prompts::DEFAULT_TOPICS.iter().map(|s| s.to_string()).collect());
        let prompts = ctx.prompts()?;
        inputs.topics = evalreport::topic_distribution(
            &dataset,
            &vocab,
            &config.model_id,
            config.max_concurrency,
            &prompts,
            &*backend,
        )?;
    }

    let formats: Vec<ReportFormat> = args
        .format
        .iter()
        .map(|f| match f {
            ReportFormatArg::Markdown => ReportFormat::Markdown,
            ReportFormatArg::Csv => ReportFormat::Csv,
            ReportFormatArg::Svg => ReportFormat::Svg,
        })
        .collect();
    let out = ctx.reports_dir(&args.out);
    let written = evalreport::emit_report(&inputs, &formats, &out)?;
    for m in &inputs.metrics {
        println!(
            "{}: accuracy={:.4} f1={:.4} (n={}, skipped={})",
            m.method,
            m.accuracy,
            m.f1,
            m.matrix.total(),
            m.skipped
        );
    }
    log::info!("wrote {} files to {}", written.len(), out.display());
    Ok(())
}

fn ablate(ctx: &Context, args: AblateArgs) -> Result<(), CliError> {
    let gold_path = ctx.dataset_path(&args.gold)?;
    let gold = evalreport::gold_labels(&load_dataset(&gold_path)?);
    let records = read_predictions(&args.pred)?;
    if method_of(&args.pred, &records)? != Method::SelfContradiction {
        return Err(CliError::input(format!("{} holds no pairwise verdicts", args.pred.display())));
    }
    let outcomes = scored_outcomes(&records);
    let subset = gold_for(&gold, &outcomes);
    let curve = evalreport::ablate_k(&outcomes, &subset, args.kmax)?;
    let inputs = ReportInputs { ablation: curve, ..Default::default() };
    let out = ctx.reports_dir(&args.out);
    evalreport::emit_report(&inputs, &[ReportFormat::Csv, ReportFormat::Svg], &out)?;
    println!("K\taccuracy\tf1");
    for p in &inputs.ablation {
        println!("{}\t{:.4}\t{:.4}", p.k, p.accuracy, p.f1);
    }
    Ok(())
}

fn sweep(ctx: &Context, args: SweepArgs) -> Result<(), CliError> {
    let path = ctx.dataset_path(&args.dataset)?;
    let dataset = load_dataset(&path)?;
    let variants = parse_variants(&args.variants)?;
    let (backend_config, backend) = ctx.backend(&args.backend)?;
    let prompts = ctx.prompts()?;
    let pairs: Vec<SweepPair> = dataset.entries.iter().map(SweepPair::from_entry).collect();
    let config = SweepConfig {
        model_id: backend_config.model_id.clone(),
        parse_attempts: 3,
        concurrency: backend_config.max_concurrency,
    };
    let names: Vec<&str> = variants.iter().map(String::as_str).collect();
    let report = evalreport::prompt_sweep(&pairs, &names, &config, &prompts, &*backend)?;

    let out = ctx.reports_dir(&args.out);
    for (variant, kept) in &report.classifications {
        records::write_records(&out.join(format!("sweep_{variant}.classifications")), kept)?;
    }
    let inputs = ReportInputs { sweep: Some(report), ..Default::default() };
    evalreport::emit_report(&inputs, &[ReportFormat::Csv], &out)?;
    let report = inputs.sweep.expect("set above");
    println!("variant\taccuracy\tevaluated");
    for r in &report.rows {
        println!("{}\t{}\t{}", r.variant, r.accuracy, r.evaluated);
    }
    if !report.excluded.is_empty() {
        println!("excluded={}", report.excluded.len());
    }
    Ok(())
}

fn normalize(args: NormalizeArgs) -> Result<(), CliError> {
    require_file(&args.input, "corpus")?;
    let mut manifest = CorpusManifest::new(args.dataset, &args.input);
    manifest.format = args.format.into();
    manifest.expected_counts = args.expected_counts;
    let loaded = ingest::load_corpus(&manifest)?;
    let normalized: Vec<ingest::NormalizedRecord> = loaded.records.iter().map(Into::into).collect();
    records::write_records(&args.out, &normalized)?;
    let counts = ExpectedCounts::of(&loaded.records);
    println!("records={} ({counts}) skipped={}", loaded.records.len(), loaded.warnings.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_lists() {
        assert_eq!(parse_variants("P0..P5").unwrap(), ["P0", "P1", "P2", "P3", "P4", "P5"]);
        assert_eq!(parse_variants("P1,P3").unwrap(), ["P1", "P3"]);
        assert!(parse_variants("P0..P9").is_err());
        assert!(parse_variants("P3..P1").is_err());
    }

    #[test]
    fn temperature_range() {
        assert_eq!(parse_temperature("0.9"), Ok(0.9));
        assert!(parse_temperature("1.5").is_err());
        assert!(parse_temperature("-0.1").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
