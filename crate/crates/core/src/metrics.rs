//! Scoring of finished episodes: test-case judging, accept ratio,
//! discounted pass rate, and aggregation with standard errors.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::corpus::{Problem, TestCase};
use crate::simulator::{Decision, EpisodeTranscript, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DprParams {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for DprParams {
    fn default() -> Self {
        Self { gamma: 0.999, alpha: 0.1, beta: 0.5 }
    }
}

impl DprParams {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(MetricsError::InvalidParams(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(MetricsError::InvalidParams("alpha and beta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid DPR parameters: {0}")]
    InvalidParams(String),
    #[error("judge backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("judge I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("judge command template is empty")]
    EmptyCommand,
    #[error("nothing to aggregate")]
    Empty,
    #[error("no problem {0} for transcript")]
    UnknownProblem(String),
    #[error("problem {0} has more than one transcript for assistant {1}")]
    DuplicateEpisode(String, String),
}

/// `1[correct] · γ^(α·read + β·written)`.
pub fn dpr(correct: bool, tokens_read: usize, tokens_written: usize, params: &DprParams) -> f64 {
    if !correct {
        return 0.0;
    }
    let exponent = params.alpha * tokens_read as f64 + params.beta * tokens_written as f64;
    params.gamma.powf(exponent)
}

/// Fraction of shown suggestions that were accepted. `None` when no
/// non-empty suggestion was shown. FINISH turns are not counted.
pub fn accept_ratio(transcript: &EpisodeTranscript) -> Option<f64> {
    let (mut accepted, mut rejected) = (0usize, 0usize);
    for turn in transcript.turns.iter().filter(|t| !t.suggestion.is_empty()) {
        match turn.decision {
            Decision::Accept => accepted += 1,
            Decision::Reject => rejected += 1,
            Decision::Finish => {}
        }
    }
    let shown = accepted + rejected;
    (shown > 0).then(|| accepted as f64 / shown as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeConfig {
    /// Argument vector; `{program}` and `{stdin}` are replaced by file paths.
    /// The test input is also piped to standard input.
    #[serde(default = "default_command")]
    pub command: Vec<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_program_name")]
    pub program_file: String,
}

fn default_command() -> Vec<String> {
    vec!["python3".into(), "{program}".into()]
}

fn default_timeout_secs() -> f64 {
    5.0
}

fn default_program_name() -> String {
    "program".into()
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            command: default_command(),
            timeout_secs: default_timeout_secs(),
            program_file: default_program_name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub problem_id: String,
    pub passed: bool,
    pub per_test: Vec<bool>,
    pub judge_log: String,
}

/// Trims trailing whitespace from every line and drops trailing blank lines.
pub fn normalize_output(text: &str) -> String {
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.last() == Some(&"") {
        lines.pop();
    }
    lines.join("\n")
}

enum RunOutcome {
    Finished { stdout: String, status: std::process::ExitStatus },
    TimedOut,
}

/// Kills the child and, on Unix, every process in its group.
fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    if let Ok(pgid) = i32::try_from(child.id()) {
        // SAFETY: plain syscall; the group was created for this child alone.
        unsafe {
            libc::kill(-pgid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

fn run_one(config: &JudgeConfig, program: &Path, dir: &Path, case: &TestCase) -> Result<RunOutcome, MetricsError> {
    let stdin_path = dir.join("stdin");
    std::fs::write(&stdin_path, &case.input)?;
    let args: Vec<String> = config
        .command
        .iter()
        .map(|a| {
            a.replace("{program}", &program.to_string_lossy())
                .replace("{stdin}", &stdin_path.to_string_lossy())
        })
        .collect();
    let (bin, rest) = args.split_first().ok_or(MetricsError::EmptyCommand)?;
    let mut command = Command::new(bin);
    #[cfg(unix)]
    std::os::unix::process::CommandExt::process_group(&mut command, 0);
    let mut child = command
        .args(rest)
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
                MetricsError::BackendUnavailable(format!("{bin}: {e}"))
            }
            _ => MetricsError::Io(e),
        })?;

    let mut stdin = child.stdin.take().expect("stdin piped");
    let input = case.input.clone();
    let writer = std::thread::spawn(move || {
        // The program may exit without reading its input.
        let _ = stdin.write_all(input.as_bytes());
    });
    let mut stdout = child.stdout.take().expect("stdout piped");
    let reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout.read_to_end(&mut buf);
        buf
    });

    let timeout = Duration::from_secs_f64(config.timeout_secs);
    match child.wait_timeout(timeout)? {
        Some(status) => {
            let _ = writer.join();
            let bytes = reader.join().unwrap_or_default();
            Ok(RunOutcome::Finished { stdout: String::from_utf8_lossy(&bytes).into_owned(), status })
        }
        None => {
            kill_tree(&mut child);
            let _ = child.wait();
            // Escaped descendants may still hold the pipe open; the reader is left detached.
            Ok(RunOutcome::TimedOut)
        }
    }
}

/// Runs every test case against `program`, each in its own directory.
pub fn judge(problem: &Problem, program: &str, config: &JudgeConfig) -> Result<Verdict, MetricsError> {
    if config.command.is_empty() {
        return Err(MetricsError::EmptyCommand);
    }
    let mut per_test = Vec::with_capacity(problem.testcases.len());
    let mut log = String::new();
    if program.is_empty() {
        log.push_str("empty program: every test fails\n");
        per_test.resize(problem.testcases.len(), false);
    } else {
        for (idx, case) in problem.testcases.iter().enumerate() {
            let dir = tempfile::tempdir()?;
            let program_path = dir.path().join(&config.program_file);
            std::fs::write(&program_path, program)?;
            let ok = match run_one(config, &program_path, dir.path(), case)? {
                RunOutcome::TimedOut => {
                    log.push_str(&format!("test {idx}: timeout after {}s\n", config.timeout_secs));
                    false
                }
                RunOutcome::Finished { stdout, status } => {
                    let ok = normalize_output(&stdout) == normalize_output(&case.output);
                    let what = if ok { "ok" } else { "wrong answer" };
                    log.push_str(&format!("test {idx}: {what} ({status})\n"));
                    ok
                }
            };
            per_test.push(ok);
        }
    }
    Ok(Verdict {
        problem_id: problem.id.clone(),
        passed: !per_test.is_empty() && per_test.iter().all(|&t| t),
        per_test,
        judge_log: log,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub problem_id: String,
    pub assistant: String,
    pub passed: bool,
    pub accept_ratio: Option<f64>,
    pub dpr: f64,
    pub tokens_read: usize,
    pub tokens_written: usize,
    pub terminated_by: Termination,
}

pub fn score_episode(transcript: &EpisodeTranscript, verdict: &Verdict, params: &DprParams) -> EpisodeScore {
    debug_assert_eq!(transcript.problem_id, verdict.problem_id);
    EpisodeScore {
        problem_id: transcript.problem_id.clone(),
        assistant: transcript.assistant.clone(),
        passed: verdict.passed,
        accept_ratio: accept_ratio(transcript),
        dpr: dpr(verdict.passed, transcript.tokens_read, transcript.tokens_written, params),
        tokens_read: transcript.tokens_read,
        tokens_written: transcript.tokens_written,
        terminated_by: transcript.terminated_by,
    }
}

/// Judges every transcript's final program in parallel; order is preserved.
pub fn judge_transcripts(
    transcripts: &[EpisodeTranscript],
    problems: &BTreeMap<String, Problem>,
    config: &JudgeConfig,
) -> Result<Vec<Verdict>, MetricsError> {
    transcripts
        .par_iter()
        .map(|t| {
            let problem = problems
                .get(&t.problem_id)
                .ok_or_else(|| MetricsError::UnknownProblem(t.problem_id.clone()))?;
            judge(problem, &t.final_program, config)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Mean and standard error (sample standard deviation over `√n`).
/// `None` for no values; a single value has standard error 0.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some(Summary { mean, stderr: 0.0, n, note: Some("n=1: standard error undefined, reported as 0".into()) });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some(Summary { mean, stderr: (var / n as f64).sqrt(), n, note: None })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_episodes: usize,
    pub pass_at_1: Summary,
    /// `None` when no episode showed a suggestion.
    pub accept_ratio: Option<Summary>,
    pub dpr: Summary,
    pub round_cap_episodes: usize,
}

/// Aggregates one assistant's episodes; one episode per problem.
pub fn aggregate(scores: &[EpisodeScore]) -> Result<MetricsReport, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut seen = std::collections::HashSet::new();
    for s in scores {
        if !seen.insert(&s.problem_id) {
            return Err(MetricsError::DuplicateEpisode(s.problem_id.clone(), s.assistant.clone()));
        }
    }
    let pass: Vec<f64> = scores.iter().map(|s| if s.passed { 1.0 } else { 0.0 }).collect();
    let ratios: Vec<f64> = scores.iter().filter_map(|s| s.accept_ratio).collect();
    let dprs: Vec<f64> = scores.iter().map(|s| s.dpr).collect();
    Ok(MetricsReport {
        n_episodes: scores.len(),
        pass_at_1: summarize(&pass).expect("non-empty"),
        accept_ratio: summarize(&ratios),
        dpr: summarize(&dprs).expect("non-empty"),
        round_cap_episodes: scores.iter().filter(|s| s.terminated_by == Termination::RoundCap).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub dpr_params: DprParams,
    /// Tokenizer whose pieces were counted as tokens read and written.
    pub tokenizer: String,
    /// One entry per assistant, keyed by name.
    pub arms: BTreeMap<String, MetricsReport>,
}

/// Groups scores by assistant and aggregates each group.
pub fn build_report(scores: &[EpisodeScore], params: DprParams, tokenizer: &str) -> Result<ScoreReport, MetricsError> {
    let mut groups: BTreeMap<String, Vec<EpisodeScore>> = BTreeMap::new();
    for s in scores {
        groups.entry(s.assistant.clone()).or_default().push(s.clone());
    }
    if groups.is_empty() {
        return Err(MetricsError::Empty);
    }
    let arms = groups
        .into_iter()
        .map(|(name, group)| Ok((name, aggregate(&group)?)))
        .collect::<Result<_, MetricsError>>()?;
    Ok(ScoreReport { dpr_params: params, tokenizer: tokenizer.to_string(), arms })
}

fn cell(summary: Option<&Summary>) -> String {
    match summary {
        Some(s) => format!("{:.3} (±{:.3})", s.mean, s.stderr),
        None => "n/a".into(),
    }
}

/// Renders the report as a table with one row per assistant.
pub fn render_table(report: &ScoreReport) -> String {
    let mut out = String::from("| Name | Pass@1 | Accept Ratio | Discounted Pass Rate |\n|---|---|---|---|\n");
    for (name, arm) in &report.arms {
        out.push_str(&format!(
            "| {name} | {} | {} | {} |\n",
            cell(Some(&arm.pass_at_1)),
            cell(arm.accept_ratio.as_ref()),
            cell(Some(&arm.dpr))
        ));
    }
    out
}
