//! Per-token negative log-likelihoods of completions under an estimator.
//!
//! A [`LikelihoodProvider`] owns both the tokenization and the scoring of
//! text: documents are tokenized by the same provider that later scores
//! their suffixes, so per-token values line up with document pieces.
//!
//! Values are stored in natural-log units internally. A [`ScoredSuffix`]
//! carries its [`LogBase`] explicitly and can be converted with
//! [`ScoredSuffix::to_base`].

mod cache;
mod http;
mod mock;
mod retry;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::CachedProvider;
pub use http::{EchoResponse, HttpProvider, HttpProviderConfig};
pub use mock::{NgramMock, TableMock, TableRow};
pub use retry::RetryPolicy;

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("completion must be non-empty")]
    EmptyCompletion,
    #[error("provider transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider tokenization does not reconstruct the input text (expected {expected:?}, got {got:?})")]
    Reconstruction { expected: String, got: String },
    #[error("provider response malformed: {0}")]
    MalformedResponse(String),
    #[error("provider capability error: {0}")]
    Capability(String),
    #[error("MISSING_CONTEXT: no table rows cover context {context:?} at remaining text {remaining:?}")]
    MissingContext { context: String, remaining: String },
    #[error("invalid mock table row {row}: {reason}")]
    InvalidTable { row: usize, reason: String },
    #[error("index {index} out of range for suffix of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("log-probability {0} is positive")]
    PositiveLogProb(f64),
    #[error("cache io error: {0}")]
    CacheIo(#[from] std::io::Error),
    #[error("cache file {path} is corrupt at line {line}; delete it and rebuild")]
    CacheCorrupt { path: String, line: usize },
}

pub type Result<T> = std::result::Result<T, LikelihoodError>;

/// Logarithm base used for reporting NLL values and interpreting thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Natural,
    Base2,
}

impl LogBase {
    /// Factor that converts a value in natural units into this base.
    fn per_nat(self) -> f64 {
        match self {
            LogBase::Natural => 1.0,
            LogBase::Base2 => 1.0 / std::f64::consts::LN_2,
        }
    }

    pub fn convert(self, value: f64, to: LogBase) -> f64 {
        if self == to {
            return value;
        }
        value / self.per_nat() * to.per_nat()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LogBase::Natural => "natural",
            LogBase::Base2 => "base2",
        }
    }
}

impl std::str::FromStr for LogBase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "natural" | "nats" | "e" => Ok(LogBase::Natural),
            "base2" | "bits" | "2" => Ok(LogBase::Base2),
            other => Err(format!("unknown log base {other:?} (expected natural|base2)")),
        }
    }
}

/// A completion split into provider pieces, each with its negative
/// log-likelihood given everything before it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSuffix {
    pieces: Vec<String>,
    nlls: Vec<f64>,
    base: LogBase,
}

impl ScoredSuffix {
    /// Builds a suffix from per-piece log-probabilities (as returned by
    /// providers). Every log-probability must be `<= 0`.
    pub fn from_logprobs(pieces: Vec<String>, logprobs: &[f64], base: LogBase) -> Result<Self> {
        assert_eq!(pieces.len(), logprobs.len(), "pieces and logprobs must align");
        let mut nlls = Vec::with_capacity(logprobs.len());
        for &lp in logprobs {
            if lp > 0.0 || lp.is_nan() {
                return Err(LikelihoodError::PositiveLogProb(lp));
            }
            // -0.0 -> 0.0
            nlls.push(0.0 - lp);
        }
        Ok(Self { pieces, nlls, base })
    }

    /// Builds a suffix directly from NLLs. Panics on negative values.
    pub fn from_nlls(pieces: Vec<String>, nlls: Vec<f64>, base: LogBase) -> Self {
        assert_eq!(pieces.len(), nlls.len(), "pieces and nlls must align");
        assert!(nlls.iter().all(|v| *v >= 0.0), "nll values must be non-negative");
        Self { pieces, nlls, base }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn nlls(&self) -> &[f64] {
        &self.nlls
    }

    pub fn base(&self) -> LogBase {
        self.base
    }

    pub fn text(&self) -> String {
        self.pieces.concat()
    }

    /// Text of the first `i` pieces.
    pub fn prefix_text(&self, i: usize) -> String {
        self.pieces[..i.min(self.len())].concat()
    }

    /// Exact prefix sum of the first `i` NLL values; `i = 0` is the empty sum.
    pub fn cumulative_nll(&self, i: usize) -> Result<f64> {
        if i > self.len() {
            return Err(LikelihoodError::IndexOutOfRange { index: i, len: self.len() });
        }
        Ok(self.nlls[..i].iter().sum())
    }

    /// All prefix sums, `out[k] = cumulative_nll(k + 1)`.
    pub fn prefix_sums(&self) -> Vec<f64> {
        self.nlls
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }

    pub fn to_base(&self, base: LogBase) -> ScoredSuffix {
        if base == self.base {
            return self.clone();
        }
        Self {
            pieces: self.pieces.clone(),
            nlls: self.nlls.iter().map(|v| self.base.convert(*v, base)).collect(),
            base,
        }
    }

    /// Keeps only the first `i` pieces.
    pub fn truncated(&self, i: usize) -> ScoredSuffix {
        let i = i.min(self.len());
        Self {
            pieces: self.pieces[..i].to_vec(),
            nlls: self.nlls[..i].to_vec(),
            base: self.base,
        }
    }
}

/// Splits text into provider-owned pieces.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<Vec<String>>;

    fn count_tokens(&self, text: &str) -> Result<usize> {
        if text.is_empty() {
            return Ok(0);
        }
        Ok(self.tokenize(text)?.len())
    }
}

/// Scores completions under an estimator of the human's next-token policy.
///
/// Implementations must be safe for concurrent calls. The prefix handed to
/// [`LikelihoodProvider::score`] is the bare state text; problem statements
/// are never part of it.
pub trait LikelihoodProvider: Tokenizer {
    fn name(&self) -> &str;

    /// Base of the values returned by `score`.
    fn base(&self) -> LogBase {
        LogBase::Natural
    }

    /// Raw scoring call; implementations do not need to validate the result.
    fn score_raw(&self, prefix: &str, completion: &str) -> Result<ScoredSuffix>;

    /// Scores `completion` given `prefix`, checking that the pieces
    /// reconstruct the completion exactly.
    fn score(&self, prefix: &str, completion: &str) -> Result<ScoredSuffix> {
        if completion.is_empty() {
            return Err(LikelihoodError::EmptyCompletion);
        }
        let scored = self.score_raw(prefix, completion)?;
        let joined = scored.text();
        if joined != completion {
            return Err(LikelihoodError::Reconstruction {
                expected: completion.to_string(),
                got: joined,
            });
        }
        Ok(scored)
    }
}

impl<T: Tokenizer + ?Sized> Tokenizer for std::sync::Arc<T> {
    fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        (**self).tokenize(text)
    }
}

impl<T: LikelihoodProvider + ?Sized> LikelihoodProvider for std::sync::Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn base(&self) -> LogBase {
        (**self).base()
    }
    fn score_raw(&self, prefix: &str, completion: &str) -> Result<ScoredSuffix> {
        (**self).score_raw(prefix, completion)
    }
}

/// Free-function form of [`LikelihoodProvider::score`].
pub fn score_completion(
    provider: &dyn LikelihoodProvider,
    prefix: &str,
    completion: &str,
) -> Result<ScoredSuffix> {
    provider.score(prefix, completion)
}

/// Character-level tokenizer; useful for tests and as a fallback counter.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharTokenizer;

impl Tokenizer for CharTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        Ok(text.chars().map(String::from).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn suffix(nlls: &[f64]) -> ScoredSuffix {
        let pieces = (0..nlls.len()).map(|i| format!("t{i}")).collect();
        ScoredSuffix::from_nlls(pieces, nlls.to_vec(), LogBase::Natural)
    }

    #[test]
    fn cumulative_of_two() {
        let s = suffix(&[0.1, 0.2, 0.5]);
        assert!((s.cumulative_nll(2).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cumulative_zero_is_empty_sum() {
        assert_eq!(suffix(&[0.1]).cumulative_nll(0).unwrap(), 0.0);
    }

    #[test]
    fn cumulative_out_of_range() {
        assert!(matches!(
            suffix(&[0.1]).cumulative_nll(2),
            Err(LikelihoodError::IndexOutOfRange { index: 2, len: 1 })
        ));
    }

    #[test]
    fn positive_logprob_rejected() {
        let err = ScoredSuffix::from_logprobs(vec!["a".into()], &[0.1], LogBase::Natural);
        assert!(matches!(err, Err(LikelihoodError::PositiveLogProb(_))));
    }

    #[test]
    fn zero_logprob_is_positive_zero_nll() {
        let s = ScoredSuffix::from_logprobs(vec!["a".into()], &[-0.0], LogBase::Natural).unwrap();
        assert!(s.nlls()[0].is_sign_positive());
    }

    #[test]
    fn log_base_parse() {
        assert_eq!("bits".parse::<LogBase>().unwrap(), LogBase::Base2);
        assert!("ten".parse::<LogBase>().is_err());
    }

    proptest! {
        #[test]
        fn cumulative_matches_naive_sum(v in prop::collection::vec(0.0f64..5.0, 1..80), frac in 0.0f64..1.0) {
            let s = suffix(&v);
            let i = ((v.len() as f64) * frac) as usize;
            let mut naive = 0.0;
            for x in v.iter().take(i) {
                naive += *x;
            }
            prop_assert!((s.cumulative_nll(i).unwrap() - naive).abs() <= 1e-12);
            let sums = s.prefix_sums();
            for w in sums.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }

        #[test]
        fn base_round_trip(v in prop::collection::vec(0.0f64..20.0, 1..40)) {
            let s = suffix(&v);
            let bits = s.to_base(LogBase::Base2);
            for (a, b) in v.iter().zip(bits.nlls()) {
                prop_assert!((a / std::f64::consts::LN_2 - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            let back = bits.to_base(LogBase::Natural);
            for (a, b) in v.iter().zip(back.nlls()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
