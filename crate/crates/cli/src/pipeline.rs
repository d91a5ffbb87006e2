//! Builds providers, corpora and policies from a resolved configuration.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use empower_core::chat::{ChatBackend, HttpChatBackend};
use empower_core::corpus::{load_corpus, read_records, Corpus, LoadOptions};
use empower_core::likelihood::{
    CachedProvider, HttpProvider, LikelihoodProvider, NgramMock, RetryPolicy, TableMock, Tokenizer,
};
use empower_core::prompts::PromptSet;
use empower_core::selection::Threshold;
use empower_core::simulator::{
    AssistantPolicy, Capped, HumanPolicy, LlmAssistant, LlmHuman, NullAssistant, ReferenceAssistant, ReferenceHuman,
    ReferenceMode,
};

use crate::config::{AssistantSpec, HumanSpec, ProviderConfig, ReferenceModeKind, RunConfig};

/// Builds the likelihood provider. The n-gram mock is fitted on the
/// solutions of `corpus_path`.
pub fn provider(cfg: &RunConfig, corpus_path: &Path) -> anyhow::Result<Arc<dyn LikelihoodProvider>> {
    let base: Arc<dyn LikelihoodProvider> = match &cfg.provider {
        ProviderConfig::Ngram { order, smoothing } => {
            let solutions: Vec<String> = read_records(corpus_path)
                .with_context(|| format!("reading corpus {}", corpus_path.display()))?
                .into_iter()
                .filter_map(|(_, r)| r.ok().map(|r| r.solution))
                .collect();
            if *order == 0 || !(*smoothing > 0.0 && smoothing.is_finite()) {
                return Err(crate::UsageError::new("n-gram mock needs order >= 1 and positive smoothing").into());
            }
            Arc::new(NgramMock::fit_smoothed(*order, *smoothing, &solutions))
        }
        ProviderConfig::Table { path } => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading table {}", path.display()))?;
            Arc::new(TableMock::from_json_rows(&text)?)
        }
        ProviderConfig::Http { endpoint } => Arc::new(HttpProvider::connect(endpoint.clone(), RetryPolicy::default())?),
    };
    Ok(match &cfg.paths.cache {
        Some(path) => Arc::new(CachedProvider::open(base, path)?),
        None => base,
    })
}

pub fn corpus_path(cfg: &RunConfig) -> anyhow::Result<&Path> {
    cfg.paths
        .corpus
        .as_deref()
        .ok_or_else(|| crate::UsageError::new("no corpus given (use --corpus or paths.corpus)").into())
}

pub fn load(cfg: &RunConfig) -> anyhow::Result<(Corpus, Arc<dyn LikelihoodProvider>)> {
    let path = corpus_path(cfg)?;
    let provider = provider(cfg, path)?;
    let opts = LoadOptions { lenient: cfg.corpus.lenient, dedup_statements: cfg.corpus.dedup_statements };
    let corpus = load_corpus(path, provider.as_ref(), &opts).with_context(|| format!("loading {}", path.display()))?;
    for d in &corpus.diagnostics {
        log::warn!("skipped record: {d}");
    }
    if corpus.is_empty() {
        bail!("corpus {} has no usable records", path.display());
    }
    Ok((corpus, provider))
}

pub fn solutions(corpus: &Corpus) -> Arc<HashMap<String, String>> {
    Arc::new(
        corpus
            .entries
            .iter()
            .map(|(p, d)| (p.id.clone(), d.solution_text.clone()))
            .collect(),
    )
}

fn prompts(cfg: &RunConfig) -> anyhow::Result<Arc<PromptSet>> {
    Ok(Arc::new(match &cfg.paths.prompts {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::default(),
    }))
}

fn chat(endpoint: &empower_core::chat::ChatEndpointConfig) -> anyhow::Result<Arc<dyn ChatBackend>> {
    Ok(Arc::new(HttpChatBackend::new(endpoint.clone(), RetryPolicy::default())?))
}

pub fn assistant(
    spec: &AssistantSpec,
    cfg: &RunConfig,
    solutions: &Arc<HashMap<String, String>>,
    provider: &Arc<dyn LikelihoodProvider>,
) -> anyhow::Result<Arc<dyn AssistantPolicy>> {
    let tokenizer: Arc<dyn Tokenizer> = provider.clone();
    let cap = |inner: Arc<dyn AssistantPolicy>, cap: Option<usize>| -> Arc<dyn AssistantPolicy> {
        match cap {
            Some(n) => Arc::new(Capped::new(inner, tokenizer.clone(), n)),
            None => inner,
        }
    };
    Ok(match spec {
        AssistantSpec::Null { name } => Arc::new(NullAssistant::new(name.clone().unwrap_or_else(|| "none".into()))),
        AssistantSpec::Reference { name, mode, n_tokens, lo, hi, eta, base, cap: limit } => {
            let mode = match mode {
                ReferenceModeKind::Full => ReferenceMode::Full,
                ReferenceModeKind::NextN => ReferenceMode::NextN(*n_tokens),
                ReferenceModeKind::Rand => {
                    if !(1 <= *lo && lo <= hi) {
                        return Err(crate::UsageError::new("reference rand mode needs 1 <= lo <= hi").into());
                    }
                    ReferenceMode::Rand { lo: *lo, hi: *hi }
                }
                ReferenceModeKind::Empower => ReferenceMode::Empower(Threshold { eta: *eta, base: *base }),
            };
            let default_name = match mode {
                ReferenceMode::Full => "reference-full".to_string(),
                ReferenceMode::NextN(n) => format!("reference-next-{n}"),
                ReferenceMode::Rand { lo, hi } => format!("reference-rand-{lo}-{hi}"),
                ReferenceMode::Empower(t) => format!("reference-empower-{}", t.eta),
            };
            let inner = ReferenceAssistant::new(
                name.clone().unwrap_or(default_name),
                solutions.clone(),
                provider.clone(),
                mode,
            );
            cap(Arc::new(inner), *limit)
        }
        AssistantSpec::Llm { name, endpoint, max_tokens, cap: limit } => {
            let mut inner = LlmAssistant::new(name.clone().unwrap_or_else(|| endpoint.model.clone()), chat(endpoint)?, prompts(cfg)?);
            if let Some(m) = max_tokens {
                inner = inner.with_max_tokens(*m);
            }
            cap(Arc::new(inner), *limit)
        }
    })
}

pub fn human(
    cfg: &RunConfig,
    solutions: &Arc<HashMap<String, String>>,
    provider: &Arc<dyn LikelihoodProvider>,
) -> anyhow::Result<Arc<dyn HumanPolicy>> {
    Ok(match &cfg.human {
        HumanSpec::Reference => Arc::new(ReferenceHuman::new("reference-human", solutions.clone(), provider.clone())),
        HumanSpec::Llm { endpoint } => Arc::new(LlmHuman::new(endpoint.model.clone(), chat(endpoint)?, prompts(cfg)?)),
    })
}

/// Runs `f` on a pool of `jobs` threads (all cores when unset).
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?;
    Ok(pool.install(f))
}
