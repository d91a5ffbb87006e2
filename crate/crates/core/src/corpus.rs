//! Offline problem/solution corpora.
//!
//! A corpus file is newline-delimited JSON, one record per line:
//!
//! ```json
//! {"problem_id": "p1", "statement": "...", "starter_code": "", "io_mode": "stdin",
//!  "testcases": [{"input": "1 2\n", "output": "3\n"}], "solution": "..."}
//! ```

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::likelihood::{LikelihoodError, Tokenizer};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {line}: schema violation: {message}")]
    Schema { line: usize, message: String },
    #[error("record {line}: duplicate problem_id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("record {line}: tokenization failed: {source}")]
    Tokenization { line: usize, source: LikelihoodError },
    #[error("record {line}: tokenizer pieces do not reconstruct the solution")]
    RoundTrip { line: usize },
    #[error("document {problem_id:?} has {len} pieces; at least {needed} are required")]
    TooShort { problem_id: String, len: usize, needed: usize },
    #[error("test fraction {0} outside [0, 1)")]
    BadFraction(f64),
}

impl CorpusError {
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::Schema { line, .. }
            | CorpusError::DuplicateId { line, .. }
            | CorpusError::Tokenization { line, .. }
            | CorpusError::RoundTrip { line } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoMode {
    Stdin,
    Functional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    pub starter_code: String,
    pub io_mode: IoMode,
    pub testcases: Vec<TestCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    HumanModelGenerated,
    HumanWritten,
}

/// A solution tokenized by a specific provider. `pieces.concat() == solution_text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub problem_id: String,
    pub solution_text: String,
    pub pieces: Vec<String>,
    pub provenance: Provenance,
}

impl Document {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn text_of(&self, range: std::ops::Range<usize>) -> String {
        self.pieces[range].concat()
    }
}

/// The first `n` pieces of a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatePrefix<'a> {
    pub document: &'a Document,
    pub n: usize,
    pub text: String,
}

impl StatePrefix<'_> {
    pub fn suffix_text(&self) -> String {
        self.document.text_of(self.n..self.document.len())
    }
}

/// Wire form of one corpus line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub problem_id: String,
    pub statement: String,
    pub starter_code: String,
    pub io_mode: IoMode,
    pub testcases: Vec<TestCase>,
    pub solution: String,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Skip malformed records (reporting them) instead of failing.
    pub lenient: bool,
    /// Drop records whose statement hash was already seen.
    pub dedup_statements: bool,
}

#[derive(Debug, Default)]
pub struct Corpus {
    pub entries: Vec<(Problem, Document)>,
    /// Records skipped under lenient loading, with 1-based line numbers.
    pub diagnostics: Vec<CorpusError>,
    pub deduplicated: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn problems(&self) -> impl Iterator<Item = &Problem> {
        self.entries.iter().map(|(p, _)| p)
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.entries.iter().map(|(_, d)| d)
    }

    pub fn find(&self, problem_id: &str) -> Option<&(Problem, Document)> {
        self.entries.iter().find(|(p, _)| p.id == problem_id)
    }
}

/// Parsed corpus lines with their 1-based line numbers.
pub type NumberedRecords = Vec<(usize, Result<CorpusRecord, CorpusError>)>;

/// Reads raw records, preserving line numbers. Blank lines are skipped.
pub fn read_records(path: &Path) -> Result<NumberedRecords, CorpusError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<CorpusRecord>(&line)
            .map_err(|e| CorpusError::Schema { line: idx + 1, message: e.to_string() });
        out.push((idx + 1, parsed));
    }
    Ok(out)
}

fn build_entry(
    line: usize,
    record: CorpusRecord,
    tokenizer: &dyn Tokenizer,
) -> Result<(Problem, Document), CorpusError> {
    let pieces = tokenizer
        .tokenize(&record.solution)
        .map_err(|source| CorpusError::Tokenization { line, source })?;
    if pieces.concat() != record.solution {
        return Err(CorpusError::RoundTrip { line });
    }
    let problem = Problem {
        id: record.problem_id.clone(),
        statement: record.statement,
        starter_code: record.starter_code,
        io_mode: record.io_mode,
        testcases: record.testcases,
    };
    let document = Document {
        problem_id: record.problem_id,
        solution_text: record.solution,
        pieces,
        provenance: record.provenance.unwrap_or(Provenance::HumanModelGenerated),
    };
    Ok((problem, document))
}

fn statement_hash(statement: &str) -> [u8; 32] {
    Sha256::digest(statement.trim().as_bytes()).into()
}

/// Loads and tokenizes a corpus. Tokenization runs in parallel; output order
/// matches file order.
pub fn load_corpus(path: &Path, tokenizer: &dyn Tokenizer, opts: &LoadOptions) -> Result<Corpus, CorpusError> {
    let records = read_records(path)?;
    let mut corpus = Corpus::default();

    // Id uniqueness and dedup are decided serially, in file order.
    let mut ids = HashSet::new();
    let mut statements = HashSet::new();
    let mut accepted = Vec::new();
    for (line, parsed) in records {
        let record = match parsed {
            Ok(r) => r,
            Err(e) if opts.lenient => {
                corpus.diagnostics.push(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        if !ids.insert(record.problem_id.clone()) {
            let err = CorpusError::DuplicateId { line, id: record.problem_id };
            if opts.lenient {
                corpus.diagnostics.push(err);
                continue;
            }
            return Err(err);
        }
        if opts.dedup_statements && !statements.insert(statement_hash(&record.statement)) {
            corpus.deduplicated += 1;
            continue;
        }
        accepted.push((line, record));
    }

    let built: Vec<Result<(Problem, Document), CorpusError>> = accepted
        .into_par_iter()
        .map(|(line, record)| build_entry(line, record, tokenizer))
        .collect();
    for entry in built {
        match entry {
            Ok(e) => corpus.entries.push(e),
            Err(e) if opts.lenient => corpus.diagnostics.push(e),
            Err(e) => return Err(e),
        }
    }
    Ok(corpus)
}

/// Samples a state with `n` uniform over `{min_prefix, ..., N - 1}` so the
/// remaining suffix is never empty.
pub fn sample_state<'a>(
    doc: &'a Document,
    min_prefix: usize,
    rng: &mut impl Rng,
) -> Result<StatePrefix<'a>, CorpusError> {
    let len = doc.len();
    if len < min_prefix + 1 || len == 0 {
        return Err(CorpusError::TooShort {
            problem_id: doc.problem_id.clone(),
            len,
            needed: min_prefix + 1,
        });
    }
    let n = rng.gen_range(min_prefix..len);
    Ok(StatePrefix { document: doc, n, text: doc.text_of(0..n) })
}

/// Partitions problem ids into (train, test) sets, disjoint by id.
/// The test set receives `round(test_fraction * n)` problems.
pub fn split_ids(ids: &[String], test_fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<String>, Vec<String>), CorpusError> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    let mut unique: Vec<String> = Vec::with_capacity(ids.len());
    let mut seen = HashSet::new();
    for id in ids {
        if seen.insert(id) {
            unique.push(id.clone());
        }
    }
    let n_test = (test_fraction * unique.len() as f64).round() as usize;
    let mut shuffled = unique.clone();
    shuffled.shuffle(rng);
    let test: HashSet<&String> = shuffled[..n_test].iter().collect();
    // Keep the original corpus order inside each split.
    let (test_ids, train_ids): (Vec<String>, Vec<String>) =
        unique.iter().cloned().partition(|id| test.contains(id));
    Ok((train_ids, test_ids))
}

pub type Entry = (Problem, Document);

pub fn split_corpus(
    corpus: Corpus,
    test_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Entry>, Vec<Entry>), CorpusError> {
    let ids: Vec<String> = corpus.problems().map(|p| p.id.clone()).collect();
    let (_, test_ids) = split_ids(&ids, test_fraction, rng)?;
    let test_ids: HashSet<String> = test_ids.into_iter().collect();
    Ok(corpus.entries.into_iter().partition(|(p, _)| !test_ids.contains(&p.id)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::CharTokenizer;
    use rand::SeedableRng;
    use std::io::Write;

    fn record(id: &str, solution: &str) -> String {
        serde_json::json!({
            "problem_id": id, "statement": format!("statement {id}"), "starter_code": "",
            "io_mode": "stdin", "testcases": [{"input": "", "output": ""}], "solution": solution
        })
        .to_string()
    }

    fn write_lines(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    fn doc(n: usize) -> Document {
        let pieces: Vec<String> = (0..n).map(|i| format!("{}", i % 10)).collect();
        Document {
            problem_id: "d".into(),
            solution_text: pieces.concat(),
            pieces,
            provenance: Provenance::HumanWritten,
        }
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = write_lines(&[]);
        let c = load_corpus(f.path(), &CharTokenizer, &LoadOptions::default()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn char_level_document() {
        let f = write_lines(&[record("p1", "ab")]);
        let c = load_corpus(f.path(), &CharTokenizer, &LoadOptions::default()).unwrap();
        assert_eq!(c.entries[0].1.pieces, vec!["a", "b"]);
        assert_eq!(c.entries[0].0.id, "p1");
    }

    #[test]
    fn malformed_record_named_and_lenient_mode_keeps_others() {
        let f = write_lines(&[record("p1", "ab"), r#"{"problem_id": 3}"#.to_string(), record("p3", "cd")]);
        let strict = load_corpus(f.path(), &CharTokenizer, &LoadOptions::default());
        assert_eq!(strict.unwrap_err().line(), Some(2));

        let lenient = load_corpus(f.path(), &CharTokenizer, &LoadOptions { lenient: true, ..Default::default() }).unwrap();
        let ids: Vec<_> = lenient.problems().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["p1", "p3"]);
        assert_eq!(lenient.diagnostics.len(), 1);
        assert_eq!(lenient.diagnostics[0].line(), Some(2));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = write_lines(&[record("p1", "ab"), record("p1", "cd")]);
        let err = load_corpus(f.path(), &CharTokenizer, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn dedup_by_statement() {
        let mut second: serde_json::Value = serde_json::from_str(&record("p2", "x")).unwrap();
        second["statement"] = "statement p1".into();
        let f = write_lines(&[record("p1", "ab"), second.to_string()]);
        let c = load_corpus(f.path(), &CharTokenizer, &LoadOptions { dedup_statements: true, ..Default::default() }).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.deduplicated, 1);
    }

    struct Lossy;
    impl Tokenizer for Lossy {
        fn tokenize(&self, text: &str) -> crate::likelihood::Result<Vec<String>> {
            Ok(text.split_whitespace().map(String::from).collect())
        }
    }

    #[test]
    fn round_trip_failure_is_reported() {
        let f = write_lines(&[record("p1", "a b")]);
        let err = load_corpus(f.path(), &Lossy, &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::RoundTrip { line: 1 }));
    }

    #[test]
    fn two_piece_doc_always_n1() {
        let d = doc(2);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_state(&d, 1, &mut rng).unwrap();
            assert_eq!(s.n, 1);
            assert_eq!(s.text, "0");
            assert_eq!(s.suffix_text(), "1");
        }
    }

    #[test]
    fn too_short() {
        let d = doc(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_state(&d, 1, &mut rng), Err(CorpusError::TooShort { .. })));
        // With empty prefixes allowed, a single piece is enough.
        assert_eq!(sample_state(&d, 0, &mut rng).unwrap().n, 0);
    }

    #[test]
    fn sample_is_deterministic() {
        let d = doc(100);
        let a = sample_state(&d, 1, &mut ChaCha8Rng::seed_from_u64(42)).unwrap().n;
        let b = sample_state(&d, 1, &mut ChaCha8Rng::seed_from_u64(42)).unwrap().n;
        assert_eq!(a, b);
    }

    #[test]
    fn sample_frequencies_uniform_within_3_sigma() {
        let d = doc(100);
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let draws = 10_000;
        let mut counts = [0usize; 100];
        for _ in 0..draws {
            let s = sample_state(&d, 1, &mut rng).unwrap();
            assert!((1..100).contains(&s.n));
            counts[s.n] += 1;
        }
        assert_eq!(counts[0], 0);
        let p = 1.0 / 99.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for (n, &c) in counts.iter().enumerate().skip(1) {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma + 1.0, "n={n} count={c}");
        }
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let (train, test) = split_ids(&ids, 0.2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert!(train.iter().all(|id| !test.contains(id)));

        let (train0, test0) = split_ids(&ids, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!((train0.len(), test0.len()), (10, 0));

        let again = split_ids(&ids, 0.2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(again, (train, test));

        assert!(split_ids(&ids, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
