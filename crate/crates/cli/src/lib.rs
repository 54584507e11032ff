//! The `pvguard` command line. [`run`] parses arguments, dispatches and
//! returns the process exit code: 0 on success, 1 for invalid input or
//! configuration, 2 for runtime failures (including cases that hit a stage
//! error during `run`).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use futures::stream::{self, StreamExt, TryStreamExt};
use serde::Deserialize;
use serde_json::json;

use pvguard_client::{Client, ClientError};
use pvguard_core::config::PipelineConfig;
use pvguard_core::guardrail::dluq::{build_cache, calibrate_threshold};
use pvguard_core::icsr::{check_validity, parse_document, DocumentFormat, IcsrDocument};
use pvguard_core::metrics::{
    auroc, bleu, corpus_bleu, mann_whitney_u, per_token_perplexity, tokenize, weighted_kappa, word_error_rate,
    BleuOptions, KappaWeights, RaterTable, Tokenizer,
};
use pvguard_core::model::{synthesize_corpus, synthesize_pairs, CorpusLabel, MockProfile};
use pvguard_core::pipeline::{
    build_adapter, compute_agreement, load_lexicon, read_jsonl, run_assessment_suite, AssessmentOptions, Engine,
    GuardrailReport, ReviewCase, ReviewStatus, Routing, RubricKey,
};
use pvguard_server::{serve, ServeOptions};

#[derive(Debug, Parser)]
#[command(name = "pvguard", version, about = "Guardrails for LLM translation of adverse event reports")]
pub struct Cli {
    /// TOML configuration file; PVG_* environment variables override it.
    #[arg(long, global = true, env = "PVGUARD_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Error output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse documents and check the four validity elements.
    Validate(ValidateArgs),
    /// Embed a corpus of case reports into a D-LUQ cache file.
    BuildCache(BuildCacheArgs),
    /// Leave-one-out D-LUQ threshold for a target false-positive rate.
    Calibrate(CalibrateArgs),
    /// Run the guardrail pipeline over a JSONL corpus.
    Run(RunArgs),
    /// Run the synthetic assessment suite.
    Assess(AssessArgs),
    /// Compute a metric over a JSONL input.
    Eval(EvalArgs),
    /// Write a synthetic corpus, fixture pairs and labels.
    Synth(SynthArgs),
    /// Start the review and model service.
    Serve(ServeArgs),
    /// List the review queue of a running service.
    Queue(QueueArgs),
    /// Inter-rater agreement over the reviewed cases of a running service.
    Agreement(AgreementArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DocFormat {
    /// One JSON document per line.
    Jsonl,
    /// One XML-lite document per file.
    Xml,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = DocFormat::Jsonl)]
    pub doc_format: DocFormat,
    /// Treat documents missing a validity element as errors.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct BuildCacheArgs {
    /// JSONL of documents or labelled corpus items; extraneous items are skipped.
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "corpus")]
    pub tag: String,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = 0.05)]
    pub fpr: f64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    pub corpus: PathBuf,
    /// Parallel workers; defaults to the number of logical CPUs.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory; defaults to the configured output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Send documents to a running service instead of processing locally.
    #[arg(long)]
    pub server: Option<String>,
    #[arg(long, env = "PVGUARD_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Separable,
    Noisy,
}

impl From<Profile> for MockProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Separable => MockProfile::Separable,
            Profile::Noisy => MockProfile::Noisy,
        }
    }
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[arg(long, value_enum, default_value_t = Profile::Separable)]
    pub profile: Profile,
    /// Defaults to <output_dir>/assessment.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub n_corruptions: usize,
    #[arg(long, default_value_t = 80)]
    pub n_in: usize,
    #[arg(long, default_value_t = 25)]
    pub n_extraneous: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Bleu,
    Wer,
    Perplexity,
    Kappa,
    Auroc,
    MannWhitney,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TokenizerArg {
    Plain,
    Intl,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub metric: Metric,
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = TokenizerArg::Plain)]
    pub tokenizer: TokenizerArg,
    #[arg(long, default_value_t = 4)]
    pub max_n: usize,
    #[arg(long)]
    pub smoothing: bool,
    /// Number of rating categories for kappa.
    #[arg(long, default_value_t = 5)]
    pub categories: usize,
    /// Bonferroni trial count applied to Mann-Whitney p-values.
    #[arg(long, default_value_t = 1)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 80)]
    pub n_icsr: usize,
    #[arg(long, default_value_t = 25)]
    pub n_extraneous: usize,
    /// Defaults to the configured output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Review store file; in memory when absent.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long, env = "PVGUARD_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

#[derive(Debug, Args)]
pub struct QueueArgs {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    pub server: String,
    #[arg(long)]
    pub status: Option<String>,
    #[arg(long, env = "PVGUARD_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    /// A Likert question or binary category name.
    #[arg(long)]
    pub key: String,
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    pub server: String,
    #[arg(long, env = "PVGUARD_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

#[derive(Debug)]
pub struct CliError {
    pub exit: i32,
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    fn invalid(code: &'static str, message: impl ToString) -> Self {
        Self {
            exit: 1,
            code,
            message: message.to_string(),
        }
    }

    fn runtime(code: &'static str, message: impl ToString) -> Self {
        Self {
            exit: 2,
            code,
            message: message.to_string(),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Api { status, code, .. } if (400..500).contains(status) && code != "unauthorized" => {
                Self::invalid("api_error", e)
            }
            _ => Self::runtime("api_error", e),
        }
    }
}

type CliResult<T = i32> = Result<T, CliError>;

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let format = cli.format;
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            match format {
                Format::Text => eprintln!("error: {}", e.message),
                Format::Json => eprintln!("{}", json!({"error": {"code": e.code, "message": e.message}})),
            }
            e.exit
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<PipelineConfig> {
    let mut config = PipelineConfig::load(cli.config.as_deref()).map_err(|e| CliError::invalid("config", e))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> CliResult {
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).try_init();
    let config = load_config(&cli)?;
    if cli.dump_config {
        print!("{}", config.to_toml());
        return Ok(0);
    }
    let Some(command) = cli.command else {
        return Err(CliError::invalid("usage", "no command given; see --help"));
    };
    match command {
        Command::Validate(a) => validate(a),
        Command::BuildCache(a) => build_cache_cmd(config, a),
        Command::Calibrate(a) => calibrate(config, a),
        Command::Run(a) => run_corpus(config, a),
        Command::Assess(a) => assess(config, a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(config, a),
        Command::Serve(a) => serve_cmd(config, a),
        Command::Queue(a) => queue(a),
        Command::Agreement(a) => agreement(a),
    }
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string(v).expect("value serializes"));
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime("io", format!("creating {}: {e}", dir.display())))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::runtime("io", format!("writing {}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut w, &item).expect("value serializes");
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// A corpus line: a bare document or a labelled corpus item.
#[derive(Deserialize)]
#[serde(untagged)]
enum CorpusLine {
    Item {
        doc: IcsrDocument,
        #[serde(default)]
        label: Option<CorpusLabel>,
    },
    Doc(IcsrDocument),
}

impl CorpusLine {
    fn into_parts(self) -> (IcsrDocument, Option<CorpusLabel>) {
        match self {
            Self::Item { doc, label } => (doc, label),
            Self::Doc(doc) => (doc, None),
        }
    }
}

fn read_corpus(path: &Path) -> CliResult<Vec<(IcsrDocument, Option<CorpusLabel>)>> {
    let lines: Vec<CorpusLine> = read_jsonl(path).map_err(|e| CliError::invalid("invalid_input", e))?;
    let parts: Vec<_> = lines.into_iter().map(CorpusLine::into_parts).collect();
    for (doc, _) in &parts {
        doc.validate_shape()
            .map_err(|e| CliError::invalid("invalid_document", format!("{}: {e}", doc.case_id)))?;
    }
    Ok(parts)
}

fn validate(args: ValidateArgs) -> CliResult {
    let mut failed = false;
    for path in &args.inputs {
        let text = fs::read(path).map_err(|e| CliError::invalid("io", format!("reading {}: {e}", path.display())))?;
        let chunks: Vec<(String, &[u8])> = match args.doc_format {
            DocFormat::Xml => vec![(path.display().to_string(), &text[..])],
            DocFormat::Jsonl => text
                .split(|&b| b == b'\n')
                .enumerate()
                .filter(|(_, l)| !l.iter().all(u8::is_ascii_whitespace))
                .map(|(i, l)| (format!("{}:{}", path.display(), i + 1), l))
                .collect(),
        };
        for (at, bytes) in chunks {
            let parsed = match args.doc_format {
                DocFormat::Xml => parse_document(bytes, DocumentFormat::XmlLite),
                DocFormat::Jsonl => serde_json::from_slice::<CorpusLine>(bytes)
                    .map_err(|e| e.to_string())
                    .and_then(|l| serde_json::to_vec(&l.into_parts().0).map_err(|e| e.to_string()))
                    .map_err(pvguard_core::icsr::IcsrError::MalformedDocument)
                    .and_then(|b| parse_document(&b, DocumentFormat::Json)),
            };
            match parsed {
                Ok(doc) => {
                    let verdict = check_validity(&doc);
                    failed |= args.strict && !verdict.valid;
                    print_json(&json!({"source": at, "case_id": doc.case_id, "ok": true, "validity": verdict}));
                }
                Err(e) => {
                    failed = true;
                    print_json(&json!({"source": at, "ok": false, "error": e.to_string()}));
                }
            }
        }
    }
    if failed {
        return Err(CliError::invalid("invalid_document", "one or more documents failed validation"));
    }
    Ok(0)
}

fn build_cache_cmd(config: PipelineConfig, args: BuildCacheArgs) -> CliResult {
    config.validate().map_err(|e| CliError::invalid("config", e))?;
    let docs: Vec<IcsrDocument> = read_corpus(&args.corpus)?
        .into_iter()
        .filter(|(_, label)| !matches!(label, Some(CorpusLabel::Extraneous(_))))
        .map(|(doc, _)| doc)
        .collect();
    let lexicon = load_lexicon(&config).map_err(|e| CliError::invalid("config", e))?;
    let (adapter, _) = build_adapter(&config, &lexicon).map_err(|e| CliError::runtime("adapter", e))?;
    let cache = build_cache(&docs, adapter.as_ref(), &config.instruction, &args.tag)
        .map_err(|e| CliError::runtime("cache", e))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    cache.save(&args.out).map_err(|e| CliError::runtime("cache", e))?;
    print_json(&json!({
        "cache": args.out,
        "entries": cache.len(),
        "dimension": cache.dimension(),
        "tag": args.tag,
    }));
    Ok(0)
}

fn calibrate(config: PipelineConfig, args: CalibrateArgs) -> CliResult {
    let k = config.k;
    let engine = Engine::from_config(config).map_err(|e| CliError::invalid("config", e))?;
    let scores = engine.cache.leave_one_out_scores(k).map_err(|e| CliError::runtime("cache", e))?;
    let threshold = calibrate_threshold(&scores, args.fpr).map_err(|e| CliError::invalid("calibrate", e))?;
    print_json(&json!({"k": k, "fpr": args.fpr, "threshold": threshold, "cache_entries": scores.len()}));
    Ok(0)
}

fn run_corpus(config: PipelineConfig, args: RunArgs) -> CliResult {
    let docs: Vec<IcsrDocument> = read_corpus(&args.corpus)?.into_iter().map(|(d, _)| d).collect();
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let out_dir = args.out.clone().unwrap_or_else(|| config.output_dir.clone());
    let reports = match &args.server {
        Some(base) => {
            let client = Client::new(base.clone(), args.token.clone());
            runtime()?.block_on(async {
                stream::iter(docs.iter().map(|d| client.ingest(d)))
                    .buffered(jobs)
                    .try_collect::<Vec<GuardrailReport>>()
                    .await
            })?
        }
        None => {
            let engine = Engine::from_config(config).map_err(|e| CliError::invalid("config", e))?;
            engine.process_batch(&docs, jobs)
        }
    };
    create_dir(&out_dir)?;
    let path = out_dir.join("reports.jsonl");
    let io = |e: std::io::Error| CliError::runtime("io", format!("writing {}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(&path).map_err(io)?);
    for r in &reports {
        writeln!(w, "{}", r.to_canonical_json()).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let count = |r: Routing| reports.iter().filter(|x| x.routing == r).count();
    let stage_errors = reports
        .iter()
        .filter(|r| r.routing_reasons.iter().any(|x| x.starts_with("stage_error:")))
        .count();
    print_json(&json!({
        "reports": path,
        "cases": reports.len(),
        "auto_pass": count(Routing::AutoPass),
        "review": count(Routing::Review),
        "reject": count(Routing::Reject),
        "stage_errors": stage_errors,
    }));
    if stage_errors > 0 {
        eprintln!("{stage_errors} case(s) hit a stage error; see routing_reasons in {}", path.display());
        return Ok(2);
    }
    Ok(0)
}

fn assess(config: PipelineConfig, args: AssessArgs) -> CliResult {
    let out = args.out.unwrap_or_else(|| config.output_dir.join("assessment"));
    let opts = AssessmentOptions {
        profile: args.profile.into(),
        seed: config.seed,
        n_in: args.n_in,
        n_extraneous: args.n_extraneous,
        k: config.k,
        n_corruptions: args.n_corruptions,
        lexicon_path: config.lexicon_path.clone(),
        output_dir: Some(out.clone()),
        ..AssessmentOptions::default()
    };
    let summary = run_assessment_suite(&opts).map_err(|e| CliError::runtime("assess", e))?;
    let rates: BTreeMap<&str, f64> = summary.catch_rates.iter().map(|c| (c.kind.as_str(), c.catch_rate)).collect();
    print_json(&json!({
        "summary": out.join("summary.json"),
        "profile": summary.dluq.profile,
        "dluq_auroc": summary.dluq.auroc,
        "catch_rates": rates,
        "faithful": summary.faithful,
    }));
    Ok(0)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BleuLine {
    hypothesis: String,
    references: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WerLine {
    hypothesis: String,
    reference: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbLine {
    token_probs: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KappaLine {
    a: usize,
    b: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreLine {
    score: f64,
    label: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StratumLine {
    stratum: String,
    value: f64,
}

fn lines<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    read_jsonl(path).map_err(|e| CliError::invalid("invalid_input", e))
}

fn eval(args: EvalArgs) -> CliResult {
    let metric_err = |e: pvguard_core::metrics::MetricsError| CliError::invalid("metric", e);
    let tokenizer = match args.tokenizer {
        TokenizerArg::Plain => Tokenizer::Plain,
        TokenizerArg::Intl => Tokenizer::Intl,
    };
    let result = match args.metric {
        Metric::Bleu => {
            let opts = BleuOptions {
                max_n: args.max_n,
                smoothing: args.smoothing,
                tokenizer,
            };
            let rows: Vec<BleuLine> = lines(&args.input)?;
            let mut segments = Vec::with_capacity(rows.len());
            let mut per_segment = Vec::with_capacity(rows.len());
            for r in rows {
                let hyp = tokenize(&r.hypothesis, tokenizer);
                let refs: Vec<Vec<String>> = r.references.iter().map(|x| tokenize(x, tokenizer)).collect();
                per_segment.push(bleu(&hyp, &refs, &opts).map_err(metric_err)?.score);
                segments.push((hyp, refs));
            }
            let corpus = corpus_bleu(&segments, &opts).map_err(metric_err)?;
            json!({"metric": "bleu", "corpus": corpus, "segments": per_segment})
        }
        Metric::Wer => {
            let rows: Vec<WerLine> = lines(&args.input)?;
            let mut per = Vec::with_capacity(rows.len());
            for r in &rows {
                let h = tokenize(&r.hypothesis, tokenizer);
                let rf = tokenize(&r.reference, tokenizer);
                per.push(word_error_rate(&h, &rf).map_err(metric_err)?);
            }
            let mean = if per.is_empty() { None } else { Some(per.iter().sum::<f64>() / per.len() as f64) };
            json!({"metric": "wer", "mean": mean, "segments": per})
        }
        Metric::Perplexity => {
            let rows: Vec<ProbLine> = lines(&args.input)?;
            let per = rows
                .iter()
                .map(|r| per_token_perplexity(&r.token_probs))
                .collect::<Result<Vec<_>, _>>()
                .map_err(metric_err)?;
            json!({"metric": "perplexity", "segments": per})
        }
        Metric::Kappa => {
            let rows: Vec<KappaLine> = lines(&args.input)?;
            let pairs: Vec<(usize, usize)> = rows.iter().map(|r| (r.a, r.b)).collect();
            let table = RaterTable::from_pairs(args.categories, &pairs).map_err(metric_err)?;
            let kappa = weighted_kappa(&table, KappaWeights::Quadratic).map_err(metric_err)?;
            json!({"metric": "kappa", "weights": "quadratic", "kappa": kappa, "table": table})
        }
        Metric::Auroc => {
            let rows: Vec<ScoreLine> = lines(&args.input)?;
            let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
            let labels: Vec<bool> = rows.iter().map(|r| r.label).collect();
            json!({"metric": "auroc", "auroc": auroc(&scores, &labels).map_err(metric_err)?})
        }
        Metric::MannWhitney => {
            let rows: Vec<StratumLine> = lines(&args.input)?;
            let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
            for r in rows {
                match groups.iter_mut().find(|(s, _)| *s == r.stratum) {
                    Some((_, v)) => v.push(r.value),
                    None => groups.push((r.stratum, vec![r.value])),
                }
            }
            let [(sx, x), (sy, y)] = <[_; 2]>::try_from(groups).map_err(|g: Vec<_>| {
                CliError::invalid("metric", format!("mann-whitney needs exactly two strata, found {}", g.len()))
            })?;
            let r = mann_whitney_u(&x, &y).map_err(metric_err)?;
            let adjusted = pvguard_core::guardrail::tluq::bonferroni(r.p_value, args.trials.max(1));
            json!({"metric": "mann_whitney", "x": sx, "y": sy, "u": r.u, "p_value": r.p_value,
                   "p_adjusted": adjusted, "method": r.method})
        }
    };
    print_json(&result);
    Ok(0)
}

fn synth(config: PipelineConfig, args: SynthArgs) -> CliResult {
    let out = args.out.unwrap_or_else(|| config.output_dir.clone());
    create_dir(&out)?;
    let lexicon = load_lexicon(&config).map_err(|e| CliError::invalid("config", e))?;
    let corpus = synthesize_corpus(&lexicon, args.n_icsr, args.n_extraneous, config.seed);
    let pairs = synthesize_pairs(&lexicon, args.n_icsr, config.seed);
    write_jsonl(&out.join("corpus.jsonl"), corpus.iter().map(|c| &c.doc))?;
    write_jsonl(&out.join("pairs.jsonl"), &pairs)?;
    write_jsonl(
        &out.join("labels.jsonl"),
        corpus.iter().map(|c| json!({"case_id": c.doc.case_id, "label": c.label})),
    )?;
    print_json(&json!({"out": out, "icsr": args.n_icsr, "extraneous": args.n_extraneous, "seed": config.seed}));
    Ok(0)
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Runtime::new().map_err(|e| CliError::runtime("runtime", e))
}

fn serve_cmd(config: PipelineConfig, args: ServeArgs) -> CliResult {
    config.validate().map_err(|e| CliError::invalid("config", e))?;
    let opts = ServeOptions {
        store_path: args.store,
        token: args.token,
    };
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    runtime()?
        .block_on(serve(config, args.addr, opts, |a| eprintln!("listening on http://{a}"), shutdown))
        .map_err(|e| CliError::runtime("serve", e))?;
    Ok(0)
}

fn queue(args: QueueArgs) -> CliResult {
    let status = args
        .status
        .as_deref()
        .map(str::parse::<ReviewStatus>)
        .transpose()
        .map_err(|e| CliError::invalid("usage", e))?;
    let client = Client::new(args.server, args.token);
    let items = runtime()?.block_on(client.queue(status))?;
    for item in &items {
        print_json(item);
    }
    Ok(0)
}

fn agreement(args: AgreementArgs) -> CliResult {
    let key: RubricKey = args.key.parse().map_err(|e: String| CliError::invalid("usage", e))?;
    let client = Client::new(args.server, args.token);
    let cases: Vec<ReviewCase> = runtime()?.block_on(async {
        let items = client.queue(None).await?;
        stream::iter(items.into_iter().filter(|i| i.assessments == 2))
            .map(|i| {
                let client = &client;
                async move { client.case(&i.case_id).await }
            })
            .buffered(8)
            .try_collect()
            .await
    })?;
    let result = compute_agreement(&cases, key).map_err(|e| CliError::invalid("agreement", e))?;
    print_json(&json!({"question": result.question, "kappa": result.kappa, "cases": cases.len(), "table": result.table}));
    Ok(0)
}
