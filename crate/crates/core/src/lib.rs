//! Empowerment-driven dataset construction and assistance simulation for
//! code-completion agents.
//!
//! The crate is organised as a pipeline:
//!
//! - [`corpus`]: load problem/solution records, tokenize them through a
//!   likelihood provider, sample training states, split by problem.
//! - [`likelihood`]: per-token negative log-likelihoods from remote
//!   completion endpoints or deterministic mocks, with an on-disk cache.
//! - [`selection`]: choose training targets (logit-threshold, next-N,
//!   random-length) and emit training examples.
//! - [`simulator`]: the turn-based suggest / accept-reject / append loop.
//! - [`metrics`]: judge final programs, accept ratio, discounted pass rate,
//!   aggregation with standard errors.

pub mod chat;
pub mod corpus;
pub mod fsutil;
pub mod likelihood;
pub mod metrics;
pub mod prompts;
pub mod selection;
pub mod simulator;

pub use corpus::{Document, Problem, StatePrefix};
pub use likelihood::{LikelihoodProvider, LogBase, ScoredSuffix, Tokenizer};
pub use selection::{SelectorConfig, SelectorKind, Threshold, TrainingExample};
pub use simulator::{AssistantPolicy, Decision, EpisodeTranscript, HumanPolicy, Turn};
