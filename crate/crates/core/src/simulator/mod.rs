//! The turn-based assistance process.
//!
//! Each round the assistant proposes text to append to the program. The
//! human then accepts it (suggestion and their own text are appended),
//! rejects it (only their own text is appended), or finishes the episode.
//! Human appends are capped at `k_h` tokens.

mod llm;
mod policies;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Problem;
use crate::likelihood::{LikelihoodError, Tokenizer};

pub use llm::{extract_code_block, line_diff, parse_decision, LlmAssistant, LlmHuman};
pub use policies::{
    Capped, NullAssistant, ReferenceAssistant, ReferenceHuman, ReferenceMode, ScriptedAssistant, ScriptedHuman,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Accept,
    Reject,
    Finish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Finish,
    RoundCap,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("FINISH must not carry appended text")]
    FinishWithAppend,
    #[error("{0:?} requires a non-empty human append")]
    EmptyAppend(Decision),
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error("tokenizer failure: {0}")]
    Tokenizer(#[from] LikelihoodError),
    #[error("transcript replay diverged at turn {0}")]
    ReplayMismatch(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("policy transport failure: {0}")]
    Transport(String),
    #[error("policy contract violation: {0}")]
    Contract(String),
}

/// Result of one MDP step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transition {
    Next(String),
    Terminal,
}

/// Pure transition function of the assistance process.
pub fn transition(state: &str, suggestion: &str, decision: Decision, appended: &str) -> Result<Transition, SimError> {
    match decision {
        Decision::Finish if !appended.is_empty() => Err(SimError::FinishWithAppend),
        Decision::Finish => Ok(Transition::Terminal),
        _ if appended.is_empty() => Err(SimError::EmptyAppend(decision)),
        Decision::Accept => Ok(Transition::Next(format!("{state}{suggestion}{appended}"))),
        Decision::Reject => Ok(Transition::Next(format!("{state}{appended}"))),
    }
}

/// Everything a policy may look at when acting.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub problem: &'a Problem,
    pub state: &'a str,
    /// Zero-based round index within the episode.
    pub round: usize,
    /// Per-episode seed for policy-internal randomness.
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Suggestion {
    pub text: String,
    pub annotation: Option<String>,
}

impl Suggestion {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), annotation: None }
    }

    pub fn empty_with(annotation: impl Into<String>) -> Self {
        Self { text: String::new(), annotation: Some(annotation.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanDecision {
    pub decision: Decision,
    pub annotation: Option<String>,
}

impl From<Decision> for HumanDecision {
    fn from(decision: Decision) -> Self {
        Self { decision, annotation: None }
    }
}

pub trait AssistantPolicy: Send + Sync {
    fn name(&self) -> &str;
    /// Proposes text to append; empty means no suggestion this round.
    fn suggest(&self, input: &PolicyInput<'_>) -> Result<Suggestion, PolicyError>;
}

pub trait HumanPolicy: Send + Sync {
    fn name(&self) -> &str;
    fn decide(&self, input: &PolicyInput<'_>, suggestion: &str) -> Result<HumanDecision, PolicyError>;
    /// Text the human writes next. `input.state` already includes an
    /// accepted suggestion. The loop truncates the result to `k_h` tokens.
    fn append(&self, input: &PolicyInput<'_>, k_h: usize) -> Result<String, PolicyError>;
    /// Called on rounds without a suggestion; `true` ends the episode.
    fn finish_without_suggestion(&self, _input: &PolicyInput<'_>) -> Result<bool, PolicyError> {
        Ok(false)
    }
}

impl<T: AssistantPolicy + ?Sized> AssistantPolicy for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn suggest(&self, input: &PolicyInput<'_>) -> Result<Suggestion, PolicyError> {
        (**self).suggest(input)
    }
}

impl<T: HumanPolicy + ?Sized> HumanPolicy for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn decide(&self, input: &PolicyInput<'_>, suggestion: &str) -> Result<HumanDecision, PolicyError> {
        (**self).decide(input, suggestion)
    }
    fn append(&self, input: &PolicyInput<'_>, k_h: usize) -> Result<String, PolicyError> {
        (**self).append(input, k_h)
    }
    fn finish_without_suggestion(&self, input: &PolicyInput<'_>) -> Result<bool, PolicyError> {
        (**self).finish_without_suggestion(input)
    }
}

/// Which shown suggestions count as text the human had to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadAccounting {
    #[default]
    AllShown,
    AcceptedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(default = "default_k_h")]
    pub k_h: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default)]
    pub read_accounting: ReadAccounting,
    #[serde(default = "default_max_failures")]
    pub max_consecutive_failures: usize,
}

fn default_k_h() -> usize {
    10
}
fn default_max_rounds() -> usize {
    50
}
fn default_max_failures() -> usize {
    3
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            k_h: default_k_h(),
            max_rounds: default_max_rounds(),
            read_accounting: ReadAccounting::default(),
            max_consecutive_failures: default_max_failures(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.k_h == 0 {
            return Err(SimError::InvalidConfig("k_h must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(SimError::InvalidConfig("max_rounds must be at least 1".into()));
        }
        if self.max_consecutive_failures == 0 {
            return Err(SimError::InvalidConfig("max_consecutive_failures must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub suggestion: String,
    pub decision: Decision,
    pub appended: String,
    /// Token lengths of the program before and after this turn, accumulated
    /// segment by segment from the starter code.
    pub state_len_before: usize,
    pub state_len_after: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnError {
    pub round: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub problem_id: String,
    pub assistant: String,
    pub human: String,
    pub tokenizer: String,
    pub seed: u64,
    pub starter: String,
    pub turns: Vec<Turn>,
    pub final_program: String,
    pub tokens_read: usize,
    pub tokens_written: usize,
    pub rounds_used: usize,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<TurnError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
}

impl EpisodeTranscript {
    /// Re-applies every turn from the starter state.
    pub fn replay(&self) -> Result<String, SimError> {
        let mut state = self.starter.clone();
        for (idx, turn) in self.turns.iter().enumerate() {
            match transition(&state, &turn.suggestion, turn.decision, &turn.appended)? {
                Transition::Next(next) => state = next,
                Transition::Terminal if idx + 1 == self.turns.len() => {}
                Transition::Terminal => return Err(SimError::ReplayMismatch(idx)),
            }
        }
        Ok(state)
    }
}

/// First `k` provider pieces of `text`.
pub fn truncate_tokens(tokenizer: &dyn Tokenizer, text: &str, k: usize) -> Result<String, LikelihoodError> {
    if text.is_empty() {
        return Ok(String::new());
    }
    let pieces = tokenizer.tokenize(text)?;
    Ok(pieces.into_iter().take(k).collect())
}

pub struct Episode<'a> {
    pub problem: &'a Problem,
    pub assistant: &'a dyn AssistantPolicy,
    pub human: &'a dyn HumanPolicy,
    pub tokenizer: &'a dyn Tokenizer,
    pub tokenizer_name: &'a str,
    pub config: &'a SimConfig,
    pub seed: u64,
}

impl Episode<'_> {
    pub fn run(&self) -> Result<EpisodeTranscript, SimError> {
        self.config.validate()?;
        let cfg = self.config;
        let count = |t: &str| self.tokenizer.count_tokens(t);

        let mut state = self.problem.starter_code.clone();
        let mut state_len = count(&state)?;
        let mut turns = Vec::new();
        let mut errors = Vec::new();
        let mut tokens_read = 0;
        let mut tokens_written = 0;
        let mut rounds = 0;
        let mut failures = 0;
        let mut terminated_by = Termination::RoundCap;
        let mut aborted = None;

        while rounds < cfg.max_rounds {
            let round = rounds;
            rounds += 1;
            let input = PolicyInput { problem: self.problem, state: &state, round, seed: self.seed };

            let step = (|| -> Result<Option<Turn>, PolicyError> {
                let suggestion = self.assistant.suggest(&input)?;
                let mut annotation = suggestion.annotation;
                let shown = !suggestion.text.is_empty();
                let decision = if shown {
                    let d = self.human.decide(&input, &suggestion.text)?;
                    annotation = join_notes(annotation, d.annotation);
                    d.decision
                } else if self.human.finish_without_suggestion(&input)? {
                    Decision::Finish
                } else {
                    Decision::Reject
                };
                if decision == Decision::Finish {
                    return Ok(Some(Turn {
                        suggestion: suggestion.text,
                        decision,
                        appended: String::new(),
                        state_len_before: state_len,
                        state_len_after: state_len,
                        annotation,
                    }));
                }
                let base = if decision == Decision::Accept {
                    format!("{state}{}", suggestion.text)
                } else {
                    state.clone()
                };
                let raw = self
                    .human
                    .append(&PolicyInput { state: &base, ..input }, cfg.k_h)?;
                let appended = truncate_tokens(self.tokenizer, &raw, cfg.k_h)
                    .map_err(|e| PolicyError::Contract(format!("tokenizing append: {e}")))?;
                if appended.is_empty() {
                    return Err(PolicyError::Contract("human appended no text".into()));
                }
                let sugg_tokens = count(&suggestion.text).map_err(|e| PolicyError::Contract(e.to_string()))?;
                let app_tokens = count(&appended).map_err(|e| PolicyError::Contract(e.to_string()))?;
                let after = state_len + app_tokens + if decision == Decision::Accept { sugg_tokens } else { 0 };
                Ok(Some(Turn {
                    suggestion: suggestion.text,
                    decision,
                    appended,
                    state_len_before: state_len,
                    state_len_after: after,
                    annotation,
                }))
            })();

            let turn = match step {
                Ok(Some(turn)) => turn,
                Ok(None) => unreachable!(),
                Err(e) => {
                    errors.push(TurnError { round, message: e.to_string() });
                    failures += 1;
                    if failures >= cfg.max_consecutive_failures {
                        aborted = Some(format!("aborted after {failures} consecutive policy failures: {e}"));
                        break;
                    }
                    continue;
                }
            };
            failures = 0;

            let shown_tokens = self.tokenizer.count_tokens(&turn.suggestion)?;
            let counts_as_read = match cfg.read_accounting {
                ReadAccounting::AllShown => true,
                ReadAccounting::AcceptedOnly => turn.decision == Decision::Accept,
            };
            if counts_as_read {
                tokens_read += shown_tokens;
            }
            tokens_written += self.tokenizer.count_tokens(&turn.appended)?;

            let next = transition(&state, &turn.suggestion, turn.decision, &turn.appended)?;
            state_len = turn.state_len_after;
            turns.push(turn);
            match next {
                Transition::Next(s) => state = s,
                Transition::Terminal => {
                    terminated_by = Termination::Finish;
                    break;
                }
            }
        }

        Ok(EpisodeTranscript {
            problem_id: self.problem.id.clone(),
            assistant: self.assistant.name().to_string(),
            human: self.human.name().to_string(),
            tokenizer: self.tokenizer_name.to_string(),
            seed: self.seed,
            starter: self.problem.starter_code.clone(),
            turns,
            final_program: state,
            tokens_read,
            tokens_written,
            rounds_used: rounds,
            terminated_by,
            errors,
            aborted,
        })
    }
}

fn join_notes(a: Option<String>, b: Option<String>) -> Option<String> {
    match (a, b) {
        (Some(a), Some(b)) => Some(format!("{a}; {b}")),
        (a, b) => a.or(b),
    }
}

/// Convenience wrapper around [`Episode::run`].
pub fn run_episode(
    problem: &Problem,
    assistant: &dyn AssistantPolicy,
    human: &dyn HumanPolicy,
    tokenizer: &dyn Tokenizer,
    config: &SimConfig,
    seed: u64,
) -> Result<EpisodeTranscript, SimError> {
    Episode { problem, assistant, human, tokenizer, tokenizer_name: "", config, seed }.run()
}

/// Seed for episode `index` of a run.
pub fn episode_seed(run_seed: u64, index: usize) -> u64 {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    rng.set_stream(index as u64);
    rng.next_u64()
}

/// Runs one episode per problem in parallel; output order follows `problems`.
pub fn run_episodes(
    problems: &[&Problem],
    assistant: &dyn AssistantPolicy,
    human: &dyn HumanPolicy,
    tokenizer: &dyn Tokenizer,
    tokenizer_name: &str,
    config: &SimConfig,
    run_seed: u64,
) -> Result<Vec<EpisodeTranscript>, SimError> {
    config.validate()?;
    problems
        .par_iter()
        .enumerate()
        .map(|(index, problem)| {
            Episode {
                problem,
                assistant,
                human,
                tokenizer,
                tokenizer_name,
                config,
                seed: episode_seed(run_seed, index),
            }
            .run()
        })
        .collect()
}
