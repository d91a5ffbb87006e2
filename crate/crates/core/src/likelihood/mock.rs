//! Deterministic local providers for desk-scale runs and tests.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LikelihoodError, LikelihoodProvider, LogBase, Result, ScoredSuffix, Tokenizer};

/// One row of an explicit probability table. `context = None` is a wildcard
/// that applies to any context without rows of its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    #[serde(default)]
    pub context: Option<String>,
    pub piece: String,
    pub prob: f64,
}

/// Provider backed by an explicit `(context, piece) -> probability` table.
///
/// The context of a piece is the full text preceding it (prefix plus the
/// completion pieces already consumed). At each step the longest listed piece
/// that matches the remaining text is taken.
#[derive(Debug, Clone)]
pub struct TableMock {
    name: String,
    exact: HashMap<String, Vec<(String, f64)>>,
    wildcard: Vec<(String, f64)>,
}

impl TableMock {
    pub fn new(rows: Vec<TableRow>) -> Result<Self> {
        let mut exact: HashMap<String, Vec<(String, f64)>> = HashMap::new();
        let mut wildcard = Vec::new();
        let mut first_row: HashMap<Option<String>, usize> = HashMap::new();
        for (idx, row) in rows.iter().enumerate() {
            if !(row.prob > 0.0 && row.prob <= 1.0) {
                return Err(LikelihoodError::InvalidTable {
                    row: idx,
                    reason: format!("probability {} outside (0, 1]", row.prob),
                });
            }
            if row.piece.is_empty() {
                return Err(LikelihoodError::InvalidTable { row: idx, reason: "empty piece".into() });
            }
            first_row.entry(row.context.clone()).or_insert(idx);
            let bucket = match &row.context {
                Some(ctx) => exact.entry(ctx.clone()).or_default(),
                None => &mut wildcard,
            };
            if bucket.iter().any(|(p, _)| p == &row.piece) {
                return Err(LikelihoodError::InvalidTable {
                    row: idx,
                    reason: format!("duplicate piece {:?} for the same context", row.piece),
                });
            }
            bucket.push((row.piece.clone(), row.prob));
        }
        let check = |ctx: Option<String>, bucket: &[(String, f64)]| {
            let total: f64 = bucket.iter().map(|(_, p)| p).sum();
            if total > 1.0 + 1e-9 {
                return Err(LikelihoodError::InvalidTable {
                    row: first_row[&ctx],
                    reason: format!("probabilities for one context sum to {total} > 1"),
                });
            }
            Ok(())
        };
        for (ctx, bucket) in &exact {
            check(Some(ctx.clone()), bucket)?;
        }
        check(None, &wildcard)?;

        let mut hasher = Sha256::new();
        for row in &rows {
            hasher.update(serde_json::to_vec(row).expect("row serializes"));
        }
        let name = format!("table-{}", &hex::encode(hasher.finalize())[..12]);
        Ok(Self { name, exact, wildcard })
    }

    pub fn from_json_rows(text: &str) -> Result<Self> {
        let rows: Vec<TableRow> = serde_json::from_str(text)
            .map_err(|e| LikelihoodError::InvalidTable { row: 0, reason: e.to_string() })?;
        Self::new(rows)
    }

    fn walk(&self, prefix: &str, completion: &str) -> Result<(Vec<String>, Vec<f64>)> {
        let mut context = prefix.to_string();
        let mut rest = completion;
        let mut pieces = Vec::new();
        let mut logprobs = Vec::new();
        while !rest.is_empty() {
            let bucket = match self.exact.get(&context) {
                Some(b) => b.as_slice(),
                None if !self.wildcard.is_empty() => self.wildcard.as_slice(),
                None => {
                    return Err(LikelihoodError::MissingContext {
                        context,
                        remaining: rest.to_string(),
                    })
                }
            };
            let best = bucket
                .iter()
                .filter(|(piece, _)| rest.starts_with(piece.as_str()))
                .max_by_key(|(piece, _)| piece.len());
            let Some((piece, prob)) = best else {
                return Err(LikelihoodError::MissingContext { context, remaining: rest.to_string() });
            };
            pieces.push(piece.clone());
            logprobs.push(prob.ln());
            context.push_str(piece);
            rest = &rest[piece.len()..];
        }
        Ok((pieces, logprobs))
    }
}

impl Tokenizer for TableMock {
    fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        Ok(self.walk("", text)?.0)
    }
}

impl LikelihoodProvider for TableMock {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_raw(&self, prefix: &str, completion: &str) -> Result<ScoredSuffix> {
        let (pieces, logprobs) = self.walk(prefix, completion)?;
        ScoredSuffix::from_logprobs(pieces, &logprobs, LogBase::Natural)
    }
}

/// Left padding for n-gram contexts at the start of a text.
const PAD: char = '\u{2}';

/// Character n-gram with additive smoothing.
///
/// `P(c | ctx) = (count(ctx, c) + d) / (count(ctx) + d * V)` where `ctx` is the
/// previous `order - 1` characters (left-padded), `d > 0` is the smoothing
/// constant and `V` is the training vocabulary size plus one slot for unseen
/// characters. Every character has positive probability, so every NLL is
/// finite.
#[derive(Debug, Clone)]
pub struct NgramMock {
    name: String,
    order: usize,
    counts: HashMap<String, HashMap<char, u64>>,
    totals: HashMap<String, u64>,
    vocab_size: u64,
    smoothing: f64,
}

impl NgramMock {
    /// Add-one smoothing.
    pub fn fit<S: AsRef<str>>(order: usize, texts: &[S]) -> Self {
        Self::fit_smoothed(order, 1.0, texts)
    }

    pub fn fit_smoothed<S: AsRef<str>>(order: usize, smoothing: f64, texts: &[S]) -> Self {
        assert!(order >= 1, "n-gram order must be at least 1");
        assert!(smoothing > 0.0 && smoothing.is_finite(), "smoothing must be positive");
        let mut counts: HashMap<String, HashMap<char, u64>> = HashMap::new();
        let mut totals: HashMap<String, u64> = HashMap::new();
        let mut vocab = BTreeSet::new();
        let mut hasher = Sha256::new();
        for text in texts {
            let text = text.as_ref();
            hasher.update((text.len() as u64).to_le_bytes());
            hasher.update(text.as_bytes());
            let mut history: Vec<char> = vec![PAD; order - 1];
            for c in text.chars() {
                vocab.insert(c);
                let ctx: String = history[history.len() + 1 - order..].iter().collect();
                *counts.entry(ctx.clone()).or_default().entry(c).or_default() += 1;
                *totals.entry(ctx).or_default() += 1;
                history.push(c);
            }
        }
        let digest = hex::encode(hasher.finalize());
        let name = if smoothing == 1.0 {
            format!("ngram-o{order}-{}", &digest[..12])
        } else {
            format!("ngram-o{order}-d{smoothing}-{}", &digest[..12])
        };
        Self { name, order, counts, totals, vocab_size: vocab.len() as u64 + 1, smoothing }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Smoothed conditional probability of `next` after `history`.
    pub fn prob(&self, history: &str, next: char) -> f64 {
        let mut padded: Vec<char> = vec![PAD; self.order - 1];
        padded.extend(history.chars());
        let ctx: String = padded[padded.len() + 1 - self.order..].iter().collect();
        self.prob_ctx(&ctx, next)
    }

    fn prob_ctx(&self, ctx: &str, next: char) -> f64 {
        let count = self.counts.get(ctx).and_then(|m| m.get(&next)).copied().unwrap_or(0);
        let total = self.totals.get(ctx).copied().unwrap_or(0);
        (count as f64 + self.smoothing) / (total as f64 + self.smoothing * self.vocab_size as f64)
    }
}

impl Tokenizer for NgramMock {
    fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        Ok(text.chars().map(String::from).collect())
    }
}

impl LikelihoodProvider for NgramMock {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_raw(&self, prefix: &str, completion: &str) -> Result<ScoredSuffix> {
        let mut history: Vec<char> = vec![PAD; self.order - 1];
        history.extend(prefix.chars());
        let mut pieces = Vec::new();
        let mut logprobs = Vec::new();
        let mut ctx = String::new();
        for c in completion.chars() {
            ctx.clear();
            ctx.extend(&history[history.len() + 1 - self.order..]);
            logprobs.push(self.prob_ctx(&ctx, c).ln());
            pieces.push(c.to_string());
            history.push(c);
        }
        ScoredSuffix::from_logprobs(pieces, &logprobs, LogBase::Natural)
    }
}
