//! Command-line front end: dataset building, simulation, scoring, serving
//! and study reports.

pub mod config;
pub mod pipeline;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use empower_core::corpus::{read_records, split_ids, CorpusRecord};
use empower_core::fsutil::{read_jsonl, write_atomic, write_jsonl_atomic};
use empower_core::likelihood::LogBase;
use empower_core::metrics::{build_report, judge_transcripts, render_table, score_episode};
use empower_core::selection::{build_training_set, BuildOptions, SelectorConfig};
use empower_core::simulator::{run_episodes, EpisodeTranscript, ReadAccounting};
use empower_core::Problem;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use config::{AssistantSpec, ProviderConfig, ReferenceModeKind, RunConfig};

/// An error in how the program was invoked; exits with status 1.
#[derive(Debug)]
pub struct UsageError(String);

impl UsageError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(UsageError::new(msg).into())
}

#[derive(Debug, Parser)]
#[command(name = "empower", version, about = "Empowerment-based training data and assistance simulation for code completion")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a training dataset from a corpus.
    BuildDataset(BuildArgs),
    /// Split a corpus into train and test problems.
    Split(SplitArgs),
    /// Run simulated assistance episodes.
    Simulate(SimulateArgs),
    /// Judge transcripts and report Pass@1, accept ratio and DPR.
    Score(ScoreArgs),
    /// Serve suggestions and collect study telemetry over HTTP.
    Serve(ServeArgs),
    /// Compute the study report from an event log.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MockKind {
    Ngram,
    Table,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    /// Use a deterministic mock provider instead of the configured one.
    #[arg(long)]
    pub mock: Option<MockKind>,
    /// Order of the n-gram mock.
    #[arg(long)]
    pub ngram_order: Option<usize>,
    /// Additive smoothing constant of the n-gram mock.
    #[arg(long)]
    pub ngram_smoothing: Option<f64>,
    /// Probability table for the table mock (JSON array of rows).
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Provider cache file.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectorArg {
    Empower,
    SftN,
    SftRand,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Corpus file (newline-delimited JSON records).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub selector: Option<SelectorArg>,
    /// Threshold on cumulative NLL for the empower selector.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Log base the threshold is expressed in (natural or base2).
    #[arg(long)]
    pub base: Option<LogBase>,
    /// Target length for sft-n.
    #[arg(long)]
    pub n_tokens: Option<usize>,
    /// Lower bound of the sft-rand length.
    #[arg(long)]
    pub lo: Option<usize>,
    /// Upper bound of the sft-rand length.
    #[arg(long)]
    pub hi: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Minimum prefix length of sampled states, in tokens.
    #[arg(long)]
    pub min_prefix: Option<usize>,
    #[arg(long)]
    pub states_per_doc: Option<usize>,
    /// Record provider failures instead of aborting.
    #[arg(long)]
    pub allow_partial: bool,
    /// Skip malformed corpus records instead of failing.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fraction of problems assigned to the test split.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssistantArg {
    Null,
    Reference,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Assistant kind; chat-model assistants are configured in the config file.
    #[arg(long)]
    pub assistant: Option<AssistantArg>,
    /// How much of the reference solution a reference assistant reveals.
    #[arg(long)]
    pub mode: Option<ReferenceModeKind>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub base: Option<LogBase>,
    #[arg(long)]
    pub n_tokens: Option<usize>,
    /// Truncate every suggestion to this many tokens.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Assistant name used in transcripts and reports.
    #[arg(long)]
    pub name: Option<String>,
    /// Maximum tokens per human append.
    #[arg(long)]
    pub k_h: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Count only accepted suggestions as read.
    #[arg(long)]
    pub accepted_only_reads: bool,
    /// Comma-separated problem ids; all problems when omitted.
    #[arg(long, value_delimiter = ',')]
    pub problems: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Transcript files; may be repeated.
    #[arg(long, required = true, num_args = 1..)]
    pub transcripts: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Judge command, split on whitespace; `{program}` and `{stdin}` are replaced by paths.
    #[arg(long)]
    pub judge_cmd: Option<String>,
    /// Per-test timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub log_path: Option<PathBuf>,
    /// Directory of static editor assets served under /ui/.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[command(flatten)]
    pub provider: ProviderArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub log_path: Option<PathBuf>,
    #[arg(long)]
    pub participant: Option<String>,
    #[arg(long)]
    pub problem: Option<String>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command. Returns the process exit status:
/// 0 on success, 1 on usage errors, 2 on runtime failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                1
            } else {
                2
            }
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load_or_default(cli.config.as_deref()).map_err(|e| UsageError::new(format!("{e:#}")))?;
    match cli.command {
        Command::BuildDataset(a) => build_dataset(cfg, a),
        Command::Split(a) => split(cfg, a),
        Command::Simulate(a) => simulate(cfg, a),
        Command::Score(a) => score(cfg, a),
        Command::Serve(a) => serve(cfg, a),
        Command::Report(a) => report(cfg, a),
    }
}

fn apply_provider(cfg: &mut RunConfig, a: &ProviderArgs) -> anyhow::Result<()> {
    match a.mock {
        Some(MockKind::Ngram) => {
            if !matches!(cfg.provider, ProviderConfig::Ngram { .. }) {
                cfg.provider = ProviderConfig::default();
            }
        }
        Some(MockKind::Table) => {
            let path = a
                .table
                .clone()
                .or_else(|| match &cfg.provider {
                    ProviderConfig::Table { path } => Some(path.clone()),
                    _ => None,
                })
                .ok_or_else(|| UsageError::new("--mock table needs --table"))?;
            cfg.provider = ProviderConfig::Table { path };
        }
        None => {}
    }
    if let ProviderConfig::Ngram { order, smoothing } = &mut cfg.provider {
        if let Some(o) = a.ngram_order {
            *order = o;
        }
        if let Some(d) = a.ngram_smoothing {
            *smoothing = d;
        }
    }
    if a.cache.is_some() {
        cfg.paths.cache = a.cache.clone();
    }
    Ok(())
}

fn resolve_selector(current: SelectorConfig, a: &BuildArgs) -> anyhow::Result<SelectorConfig> {
    let kind = a.selector.unwrap_or(match current {
        SelectorConfig::Empower { .. } => SelectorArg::Empower,
        SelectorConfig::SftN { .. } => SelectorArg::SftN,
        SelectorConfig::SftRand { .. } => SelectorArg::SftRand,
    });
    let selector = match kind {
        SelectorArg::Empower => {
            if a.n_tokens.is_some() || a.lo.is_some() || a.hi.is_some() {
                return usage("--n-tokens/--lo/--hi do not apply to the empower selector");
            }
            let (eta, base) = match current {
                SelectorConfig::Empower { eta, base } => (eta, base),
                _ => (0.32, LogBase::Natural),
            };
            SelectorConfig::Empower { eta: a.eta.unwrap_or(eta), base: a.base.unwrap_or(base) }
        }
        SelectorArg::SftN => {
            if a.eta.is_some() || a.lo.is_some() || a.hi.is_some() {
                return usage("--eta/--lo/--hi do not apply to the sft-n selector");
            }
            let n = match current {
                SelectorConfig::SftN { n_tokens } => n_tokens,
                _ => 10,
            };
            SelectorConfig::SftN { n_tokens: a.n_tokens.unwrap_or(n) }
        }
        SelectorArg::SftRand => {
            if a.eta.is_some() || a.n_tokens.is_some() {
                return usage("--eta/--n-tokens do not apply to the sft-rand selector");
            }
            let (lo, hi) = match current {
                SelectorConfig::SftRand { lo, hi } => (lo, hi),
                _ => (1, 30),
            };
            SelectorConfig::SftRand { lo: a.lo.unwrap_or(lo), hi: a.hi.unwrap_or(hi) }
        }
    };
    if let Err(e) = selector.validate() {
        return usage(e.to_string());
    }
    Ok(selector)
}

fn output_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    cfg.paths.output.clone().ok_or_else(|| UsageError::new("no output directory given (use --out)").into())
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    write_atomic(&dir.join("config.resolved.toml"), cfg.to_toml().as_bytes())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    #[serde(flatten)]
    manifest: &'a empower_core::selection::DatasetManifest,
    corpus: String,
    skipped_records: Vec<String>,
    deduplicated: usize,
    failures: &'a [String],
}

fn build_dataset(mut cfg: RunConfig, a: BuildArgs) -> anyhow::Result<()> {
    apply_provider(&mut cfg, &a.provider)?;
    if let Some(p) = a.corpus.clone() {
        cfg.paths.corpus = Some(p);
    }
    if let Some(p) = a.out.clone() {
        cfg.paths.output = Some(p);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    cfg.dataset.selector = resolve_selector(cfg.dataset.selector, &a)?;
    if let Some(m) = a.min_prefix {
        cfg.dataset.min_prefix = m;
    }
    if let Some(s) = a.states_per_doc {
        cfg.dataset.states_per_doc = s;
    }
    cfg.dataset.allow_partial |= a.allow_partial;
    cfg.corpus.lenient |= a.lenient;
    let out = output_dir(&cfg)?;

    let (corpus, provider) = pipeline::load(&cfg)?;
    let opts = BuildOptions {
        selector: cfg.dataset.selector,
        seed: cfg.seed,
        min_prefix: cfg.dataset.min_prefix,
        states_per_doc: cfg.dataset.states_per_doc,
        allow_partial: cfg.dataset.allow_partial,
    };
    let docs: Vec<_> = corpus.documents().collect();
    let built = pipeline::with_jobs(cfg.jobs, || build_training_set(&docs, &opts, provider.as_ref()))??;

    let manifest = ManifestFile {
        manifest: &built.manifest,
        corpus: pipeline::corpus_path(&cfg)?.display().to_string(),
        skipped_records: corpus.diagnostics.iter().map(|d| d.to_string()).collect(),
        deduplicated: corpus.deduplicated,
        failures: &built.failures,
    };
    write_jsonl_atomic(&out.join("train.jsonl"), &built.examples)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    write_resolved(&out, &cfg)?;
    let c = &built.manifest.counts;
    eprintln!(
        "{} examples from {} documents ({} dropped empty, {} skipped short, {} failed) -> {}",
        c.emitted,
        c.documents,
        c.dropped_empty,
        c.skipped_short,
        c.failed,
        out.display()
    );
    Ok(())
}

fn split(mut cfg: RunConfig, a: SplitArgs) -> anyhow::Result<()> {
    if let Some(p) = a.corpus {
        cfg.paths.corpus = Some(p);
    }
    if let Some(p) = a.out {
        cfg.paths.output = Some(p);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if !(0.0..=1.0).contains(&a.test_fraction) {
        return usage("--test-fraction must be in [0, 1]");
    }
    let out = output_dir(&cfg)?;
    let path = pipeline::corpus_path(&cfg)?;
    let mut records: Vec<CorpusRecord> = Vec::new();
    for (line, r) in read_records(path)? {
        records.push(r.with_context(|| format!("{}:{line}", path.display()))?);
    }
    let ids: Vec<String> = records.iter().map(|r| r.problem_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (_, test_ids) = split_ids(&ids, a.test_fraction, &mut rng)?;
    let test: std::collections::HashSet<_> = test_ids.into_iter().collect();
    let (test_records, train_records): (Vec<_>, Vec<_>) =
        records.into_iter().partition(|r| test.contains(&r.problem_id));
    write_jsonl_atomic(&out.join("train.jsonl"), &train_records)?;
    write_jsonl_atomic(&out.join("test.jsonl"), &test_records)?;
    write_resolved(&out, &cfg)?;
    eprintln!("{} train / {} test problems -> {}", train_records.len(), test_records.len(), out.display());
    Ok(())
}

fn simulate(mut cfg: RunConfig, a: SimulateArgs) -> anyhow::Result<()> {
    apply_provider(&mut cfg, &a.provider)?;
    if let Some(p) = a.corpus {
        cfg.paths.corpus = Some(p);
    }
    if let Some(p) = a.out {
        cfg.paths.output = Some(p);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    if let Some(k) = a.k_h {
        cfg.simulator.k_h = k;
    }
    if let Some(r) = a.max_rounds {
        cfg.simulator.max_rounds = r;
    }
    if a.accepted_only_reads {
        cfg.simulator.read_accounting = ReadAccounting::AcceptedOnly;
    }
    match a.assistant {
        Some(AssistantArg::Null) => cfg.assistant = AssistantSpec::Null { name: None },
        Some(AssistantArg::Reference) if !matches!(cfg.assistant, AssistantSpec::Reference { .. }) => {
            cfg.assistant = AssistantSpec::default();
        }
        _ => {}
    }
    match &mut cfg.assistant {
        AssistantSpec::Reference { name, mode, n_tokens, eta, base, cap, .. } => {
            if let Some(m) = a.mode {
                *mode = m;
            }
            if let Some(n) = a.n_tokens {
                *n_tokens = n;
            }
            if let Some(e) = a.eta {
                *eta = e;
            }
            if let Some(b) = a.base {
                *base = b;
            }
            if a.cap.is_some() {
                *cap = a.cap;
            }
            if a.name.is_some() {
                *name = a.name.clone();
            }
        }
        AssistantSpec::Null { name } => {
            if a.name.is_some() {
                *name = a.name.clone();
            }
        }
        AssistantSpec::Llm { name, cap, .. } => {
            if a.cap.is_some() {
                *cap = a.cap;
            }
            if a.name.is_some() {
                *name = a.name.clone();
            }
        }
    }
    if let Err(e) = cfg.simulator.validate() {
        return usage(e.to_string());
    }
    let out = output_dir(&cfg)?;

    let (corpus, provider) = pipeline::load(&cfg)?;
    let solutions = pipeline::solutions(&corpus);
    let assistant = pipeline::assistant(&cfg.assistant, &cfg, &solutions, &provider)?;
    let human = pipeline::human(&cfg, &solutions, &provider)?;
    let problems: Vec<&Problem> = match &a.problems {
        Some(ids) => ids
            .iter()
            .map(|id| corpus.find(id).map(|(p, _)| p).ok_or_else(|| anyhow::anyhow!("unknown problem {id}")))
            .collect::<anyhow::Result<_>>()?,
        None => corpus.problems().collect(),
    };
    let transcripts = pipeline::with_jobs(cfg.jobs, || {
        run_episodes(
            &problems,
            assistant.as_ref(),
            human.as_ref(),
            provider.as_ref(),
            provider.name(),
            &cfg.simulator,
            cfg.seed,
        )
    })??;
    write_jsonl_atomic(&out.join("transcripts.jsonl"), &transcripts)?;
    write_resolved(&out, &cfg)?;
    let capped = transcripts.iter().filter(|t| t.aborted.is_some()).count();
    eprintln!(
        "{} episodes with {} ({} aborted) -> {}",
        transcripts.len(),
        assistant.name(),
        capped,
        out.display()
    );
    Ok(())
}

fn score(mut cfg: RunConfig, a: ScoreArgs) -> anyhow::Result<()> {
    if let Some(p) = a.corpus {
        cfg.paths.corpus = Some(p);
    }
    if let Some(p) = a.out {
        cfg.paths.output = Some(p);
    }
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    if let Some(cmd) = a.judge_cmd {
        cfg.judge.command = cmd.split_whitespace().map(str::to_string).collect();
    }
    if let Some(t) = a.timeout {
        cfg.judge.timeout_secs = t;
    }
    if let Some(g) = a.gamma {
        cfg.dpr.gamma = g;
    }
    if let Some(x) = a.alpha {
        cfg.dpr.alpha = x;
    }
    if let Some(b) = a.beta {
        cfg.dpr.beta = b;
    }
    if let Err(e) = cfg.dpr.validate() {
        return usage(e.to_string());
    }
    if cfg.judge.command.is_empty() || cfg.judge.timeout_secs <= 0.0 {
        return usage("judge command must be non-empty and the timeout positive");
    }
    let out = output_dir(&cfg)?;

    let path = pipeline::corpus_path(&cfg)?;
    let mut problems = BTreeMap::new();
    for (line, r) in read_records(path)? {
        let r = r.with_context(|| format!("{}:{line}", path.display()))?;
        problems.insert(
            r.problem_id.clone(),
            Problem {
                id: r.problem_id,
                statement: r.statement,
                starter_code: r.starter_code,
                io_mode: r.io_mode,
                testcases: r.testcases,
            },
        );
    }
    let mut transcripts: Vec<EpisodeTranscript> = Vec::new();
    for t in &a.transcripts {
        transcripts.extend(read_jsonl::<EpisodeTranscript>(t).with_context(|| format!("reading {}", t.display()))?);
    }
    if transcripts.is_empty() {
        bail!("no transcripts to score");
    }
    let mut tokenizers: Vec<&str> = transcripts.iter().map(|t| t.tokenizer.as_str()).collect();
    tokenizers.sort_unstable();
    tokenizers.dedup();
    let tokenizer = tokenizers.join(",");

    let verdicts = pipeline::with_jobs(cfg.jobs, || judge_transcripts(&transcripts, &problems, &cfg.judge))??;
    let scores: Vec<_> = transcripts.iter().zip(&verdicts).map(|(t, v)| score_episode(t, v, &cfg.dpr)).collect();
    let report = build_report(&scores, cfg.dpr, &tokenizer)?;
    let table = render_table(&report);

    write_jsonl_atomic(&out.join("verdicts.jsonl"), &verdicts)?;
    write_jsonl_atomic(&out.join("scores.jsonl"), &scores)?;
    write_json(&out.join("report.json"), &report)?;
    write_atomic(&out.join("report.txt"), table.as_bytes())?;
    write_resolved(&out, &cfg)?;
    print!("{table}");
    Ok(())
}

fn serve(mut cfg: RunConfig, a: ServeArgs) -> anyhow::Result<()> {
    apply_provider(&mut cfg, &a.provider)?;
    if let Some(p) = a.corpus {
        cfg.paths.corpus = Some(p);
    }
    if let Some(p) = a.port {
        cfg.service.port = p;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.log_path.is_some() {
        cfg.service.log_path = a.log_path;
    }
    if a.ui_dir.is_some() {
        cfg.service.ui_dir = a.ui_dir;
    }
    let log_path = cfg
        .service
        .log_path
        .clone()
        .ok_or_else(|| UsageError::new("no event log given (use --log-path or service.log_path)"))?;
    if cfg.service.arms.is_empty() {
        return usage("no assistant arms configured ([[service.arms]] in the config file)");
    }

    let (corpus, provider) = pipeline::load(&cfg)?;
    let solutions = pipeline::solutions(&corpus);
    let mut arms = Vec::new();
    for spec in &cfg.service.arms {
        let policy = pipeline::assistant(spec, &cfg, &solutions, &provider)?;
        let name = policy.name().to_string();
        if arms.iter().any(|a: &empower_service::Arm| a.name == name) {
            return usage(format!("duplicate arm name {name}"));
        }
        arms.push(empower_service::Arm { name, policy });
    }
    let settings = empower_service::ServiceSettings {
        seed: cfg.seed,
        completion_mode: cfg.service.completion_mode,
        test_command: cfg.service.test_command.clone(),
    };
    let problems: Vec<Problem> = corpus.problems().cloned().collect();
    let service = Arc::new(empower_service::Service::open(settings, arms, problems, &log_path)?);
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        write_resolved(dir, &cfg)?;
    }
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], cfg.service.port));
    eprintln!("serving {} arms on http://{addr}, logging to {}", cfg.service.arms.len(), log_path.display());
    let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    runtime.block_on(empower_service::serve(service, cfg.service.ui_dir.clone(), addr))?;
    Ok(())
}

fn report(cfg: RunConfig, a: ReportArgs) -> anyhow::Result<()> {
    let log_path = a
        .log_path
        .or(cfg.service.log_path)
        .ok_or_else(|| UsageError::new("no event log given (use --log-path)"))?;
    if !log_path.exists() {
        bail!("event log {} does not exist", log_path.display());
    }
    let records = empower_service::events::load_log(&log_path)?;
    let filter = empower_service::ReportFilter { participant: a.participant, problem_id: a.problem };
    let report = empower_service::study_report(&records, &filter);
    if let Some(out) = a.out {
        write_json(&out, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
