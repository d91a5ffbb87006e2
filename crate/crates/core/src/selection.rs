//! Choosing completion targets for assistant training.
//!
//! The logit-threshold rule keeps the longest suffix whose cumulative NLL
//! under the estimator stays strictly below `eta`: predictable text the
//! human would otherwise have to type. Next-N and random-length selectors
//! are the supervised baselines.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sample_state, Document};
use crate::likelihood::{LikelihoodError, LikelihoodProvider, LogBase, ScoredSuffix};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("threshold is in {threshold:?} but scores are in {scores:?}")]
    BaseMismatch { threshold: LogBase, scores: LogBase },
    #[error("invalid selector config: {0}")]
    InvalidConfig(String),
    #[error("{0:?} is not a single piece under the provider's tokenization ({1} pieces)")]
    NotSinglePiece(String, usize),
    #[error("document {problem_id:?}: scored pieces do not match the document tokenization at n={n}")]
    TokenizationMismatch { problem_id: String, n: usize },
    #[error("document {problem_id:?}: {source}")]
    Provider { problem_id: String, source: LikelihoodError },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
}

/// Cumulative-NLL budget for the logit-threshold rule, with its log base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub eta: f64,
    #[serde(default)]
    pub base: LogBase,
}

impl Threshold {
    pub fn natural(eta: f64) -> Self {
        Self { eta, base: LogBase::Natural }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorKind {
    Empower,
    SftN,
    SftRand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SelectorConfig {
    Empower {
        eta: f64,
        #[serde(default)]
        base: LogBase,
    },
    SftN {
        n_tokens: usize,
    },
    SftRand {
        #[serde(default = "default_rand_lo")]
        lo: usize,
        #[serde(default = "default_rand_hi")]
        hi: usize,
    },
}

fn default_rand_lo() -> usize {
    1
}

fn default_rand_hi() -> usize {
    30
}

impl SelectorConfig {
    pub fn kind(&self) -> SelectorKind {
        match self {
            SelectorConfig::Empower { .. } => SelectorKind::Empower,
            SelectorConfig::SftN { .. } => SelectorKind::SftN,
            SelectorConfig::SftRand { .. } => SelectorKind::SftRand,
        }
    }

    pub fn threshold(&self) -> Option<Threshold> {
        match *self {
            SelectorConfig::Empower { eta, base } => Some(Threshold { eta, base }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        match *self {
            SelectorConfig::Empower { eta, .. } if !(eta > 0.0 && eta.is_finite()) => {
                Err(SelectionError::InvalidConfig(format!("eta must be positive and finite, got {eta}")))
            }
            SelectorConfig::SftN { n_tokens: 0 } => {
                Err(SelectionError::InvalidConfig("n_tokens must be at least 1".into()))
            }
            SelectorConfig::SftRand { lo, hi } if lo == 0 || lo > hi => {
                Err(SelectionError::InvalidConfig(format!("need 1 <= lo <= hi, got lo={lo} hi={hi}")))
            }
            _ => Ok(()),
        }
    }
}

/// Length of the longest prefix of `scored` whose cumulative NLL is strictly
/// below the threshold; `0` when the first piece alone reaches it and
/// `scored.len()` when the whole suffix stays below.
pub fn empower_select(scored: &ScoredSuffix, threshold: Threshold) -> Result<usize, SelectionError> {
    if scored.base() != threshold.base {
        return Err(SelectionError::BaseMismatch { threshold: threshold.base, scores: scored.base() });
    }
    let mut total = 0.0;
    let mut keep = 0;
    for nll in scored.nlls() {
        total += nll;
        if total >= threshold.eta {
            break;
        }
        keep += 1;
    }
    Ok(keep)
}

/// Next-`n_tokens` target, clamped at the end of the document.
pub fn sft_n_select(doc_len: usize, n: usize, n_tokens: usize) -> usize {
    assert!(n < doc_len, "state must leave a non-empty suffix");
    n_tokens.min(doc_len - n)
}

/// Target length uniform on `lo..=hi`, clamped at the end of the document.
pub fn sft_rand_select(doc_len: usize, n: usize, lo: usize, hi: usize, rng: &mut impl Rng) -> usize {
    assert!(n < doc_len, "state must leave a non-empty suffix");
    assert!(1 <= lo && lo <= hi, "need 1 <= lo <= hi");
    rng.gen_range(lo..=hi).min(doc_len - n)
}

/// One-sample upper-bound estimate of the human's single-action
/// empowerment at `state_text`: the NLL of the piece the human wrote next.
pub fn empowerment_upper_bound(
    provider: &dyn LikelihoodProvider,
    state_text: &str,
    next_piece: &str,
) -> Result<f64, SelectionError> {
    let scored = provider.score(state_text, next_piece)?;
    if scored.len() != 1 {
        return Err(SelectionError::NotSinglePiece(next_piece.to_string(), scored.len()));
    }
    Ok(scored.nlls()[0])
}

/// A (state, target) pair for supervised fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub state: String,
    pub target: String,
    pub selector: SelectorConfig,
    pub problem_id: String,
    pub n: usize,
    pub i: usize,
    /// The target is a complete suggestion; trainers append their stop token.
    pub end_of_suggestion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub selector: SelectorConfig,
    pub seed: u64,
    pub min_prefix: usize,
    pub states_per_doc: usize,
    /// Count provider failures instead of aborting.
    pub allow_partial: bool,
}

impl BuildOptions {
    pub fn new(selector: SelectorConfig, seed: u64) -> Self {
        Self { selector, seed, min_prefix: 1, states_per_doc: 1, allow_partial: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildCounts {
    pub documents: usize,
    pub states: usize,
    pub emitted: usize,
    pub dropped_empty: usize,
    pub skipped_short: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub eta: Option<f64>,
    pub base_of_log: LogBase,
    pub provider: String,
    pub selector: SelectorConfig,
    pub min_prefix: usize,
    pub states_per_doc: usize,
    pub counts: BuildCounts,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub examples: Vec<TrainingExample>,
    pub manifest: DatasetManifest,
    /// Per-document failures tolerated under `allow_partial`.
    pub failures: Vec<String>,
}

/// Random stream for document `index`: independent of scheduling, so serial
/// and parallel builds agree.
pub fn document_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Default)]
struct DocOutcome {
    examples: Vec<TrainingExample>,
    counts: BuildCounts,
    failure: Option<String>,
}

fn select_for_document(
    doc: &Document,
    index: usize,
    opts: &BuildOptions,
    provider: &dyn LikelihoodProvider,
) -> Result<DocOutcome, SelectionError> {
    let mut out = DocOutcome::default();
    out.counts.documents = 1;
    if doc.len() < opts.min_prefix + 1 || doc.is_empty() {
        out.counts.skipped_short = 1;
        return Ok(out);
    }
    let mut rng = document_rng(opts.seed, index);
    for _ in 0..opts.states_per_doc {
        let state = sample_state(doc, opts.min_prefix, &mut rng).expect("length checked above");
        out.counts.states += 1;
        let i = match opts.selector {
            SelectorConfig::Empower { eta, base } => {
                let scored = provider
                    .score(&state.text, &state.suffix_text())
                    .map_err(|source| SelectionError::Provider { problem_id: doc.problem_id.clone(), source })?;
                if scored.pieces() != &doc.pieces[state.n..] {
                    return Err(SelectionError::TokenizationMismatch {
                        problem_id: doc.problem_id.clone(),
                        n: state.n,
                    });
                }
                empower_select(&scored.to_base(base), Threshold { eta, base })?
            }
            SelectorConfig::SftN { n_tokens } => sft_n_select(doc.len(), state.n, n_tokens),
            SelectorConfig::SftRand { lo, hi } => sft_rand_select(doc.len(), state.n, lo, hi, &mut rng),
        };
        if i == 0 {
            out.counts.dropped_empty += 1;
            continue;
        }
        out.counts.emitted += 1;
        out.examples.push(TrainingExample {
            target: doc.text_of(state.n..state.n + i),
            state: state.text,
            selector: opts.selector,
            problem_id: doc.problem_id.clone(),
            n: state.n,
            i,
            end_of_suggestion: true,
        });
    }
    Ok(out)
}

/// Samples states from every document and selects a target for each.
/// Documents are processed in parallel; the output order and content depend
/// only on the inputs and the seed.
pub fn build_training_set(
    documents: &[&Document],
    opts: &BuildOptions,
    provider: &dyn LikelihoodProvider,
) -> Result<BuildOutput, SelectionError> {
    opts.selector.validate()?;
    let outcomes: Vec<Result<DocOutcome, SelectionError>> = documents
        .par_iter()
        .enumerate()
        .map(|(index, doc)| select_for_document(doc, index, opts, provider))
        .collect();

    let mut examples = Vec::new();
    let mut counts = BuildCounts::default();
    let mut failures = Vec::new();
    for (doc, outcome) in documents.iter().zip(outcomes) {
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) if opts.allow_partial => DocOutcome {
                counts: BuildCounts { documents: 1, failed: 1, ..Default::default() },
                failure: Some(format!("{}: {e}", doc.problem_id)),
                ..Default::default()
            },
            Err(e) => return Err(e),
        };
        counts.documents += outcome.counts.documents;
        counts.states += outcome.counts.states;
        counts.emitted += outcome.counts.emitted;
        counts.dropped_empty += outcome.counts.dropped_empty;
        counts.skipped_short += outcome.counts.skipped_short;
        counts.failed += outcome.counts.failed;
        failures.extend(outcome.failure);
        examples.extend(outcome.examples);
    }
    let (eta, base_of_log) = match opts.selector.threshold() {
        Some(t) => (Some(t.eta), t.base),
        None => (None, provider.base()),
    };
    let manifest = DatasetManifest {
        seed: opts.seed,
        eta,
        base_of_log,
        provider: provider.name().to_string(),
        selector: opts.selector,
        min_prefix: opts.min_prefix,
        states_per_doc: opts.states_per_doc,
        counts,
    };
    Ok(BuildOutput { examples, manifest, failures })
}
