//! Deterministic policies: scripted ones for tests, and reference-solution
//! driven ones for desk runs without a chat model.

use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AssistantPolicy, Decision, HumanDecision, HumanPolicy, PolicyError, PolicyInput, Suggestion};
use crate::likelihood::{LikelihoodProvider, Tokenizer};
use crate::selection::{empower_select, sft_rand_select, Threshold};

/// Never suggests anything.
#[derive(Debug, Clone)]
pub struct NullAssistant {
    name: String,
}

impl NullAssistant {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl AssistantPolicy for NullAssistant {
    fn name(&self) -> &str {
        &self.name
    }
    fn suggest(&self, _: &PolicyInput<'_>) -> Result<Suggestion, PolicyError> {
        Ok(Suggestion::default())
    }
}

/// Cycles through fixed suggestions by round index.
#[derive(Debug, Clone)]
pub struct ScriptedAssistant {
    name: String,
    suggestions: Vec<String>,
}

impl ScriptedAssistant {
    pub fn new(name: impl Into<String>, suggestions: Vec<String>) -> Self {
        assert!(!suggestions.is_empty(), "script needs at least one suggestion");
        Self { name: name.into(), suggestions }
    }
}

impl AssistantPolicy for ScriptedAssistant {
    fn name(&self) -> &str {
        &self.name
    }
    fn suggest(&self, input: &PolicyInput<'_>) -> Result<Suggestion, PolicyError> {
        Ok(Suggestion::new(self.suggestions[input.round % self.suggestions.len()].clone()))
    }
}

/// Cycles through fixed decisions and appends by round index.
#[derive(Debug, Clone)]
pub struct ScriptedHuman {
    name: String,
    decisions: Vec<Decision>,
    appends: Vec<String>,
    finish_when_empty: bool,
}

impl ScriptedHuman {
    pub fn new(name: impl Into<String>, decisions: Vec<Decision>, appends: Vec<String>) -> Self {
        assert!(!decisions.is_empty() && !appends.is_empty(), "script must not be empty");
        Self { name: name.into(), decisions, appends, finish_when_empty: false }
    }

    pub fn finish_when_empty(mut self, yes: bool) -> Self {
        self.finish_when_empty = yes;
        self
    }
}

impl HumanPolicy for ScriptedHuman {
    fn name(&self) -> &str {
        &self.name
    }
    fn decide(&self, input: &PolicyInput<'_>, _: &str) -> Result<HumanDecision, PolicyError> {
        Ok(self.decisions[input.round % self.decisions.len()].into())
    }
    fn append(&self, input: &PolicyInput<'_>, _: usize) -> Result<String, PolicyError> {
        Ok(self.appends[input.round % self.appends.len()].clone())
    }
    fn finish_without_suggestion(&self, _: &PolicyInput<'_>) -> Result<bool, PolicyError> {
        Ok(self.finish_when_empty)
    }
}

/// Truncates another assistant's suggestions to at most `max_tokens` pieces.
pub struct Capped<A> {
    inner: A,
    tokenizer: Arc<dyn Tokenizer>,
    max_tokens: usize,
    name: String,
}

impl<A: AssistantPolicy> Capped<A> {
    pub fn new(inner: A, tokenizer: Arc<dyn Tokenizer>, max_tokens: usize) -> Self {
        let name = format!("{}-{max_tokens}", inner.name());
        Self { inner, tokenizer, max_tokens, name }
    }
}

impl<A: AssistantPolicy> AssistantPolicy for Capped<A> {
    fn name(&self) -> &str {
        &self.name
    }
    fn suggest(&self, input: &PolicyInput<'_>) -> Result<Suggestion, PolicyError> {
        let mut s = self.inner.suggest(input)?;
        s.text = super::truncate_tokens(self.tokenizer.as_ref(), &s.text, self.max_tokens)
            .map_err(|e| PolicyError::Contract(e.to_string()))?;
        Ok(s)
    }
}

/// How a [`ReferenceAssistant`] decides how much of the solution to reveal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceMode {
    /// The whole remaining solution.
    Full,
    /// The next `n` pieces.
    NextN(usize),
    /// A uniform length on `lo..=hi`.
    Rand { lo: usize, hi: usize },
    /// The longest prefix whose cumulative NLL stays below the threshold.
    Empower(Threshold),
}

/// Suggests continuations of a known solution. An oracle stand-in for a
/// trained model, for desk runs and tests.
pub struct ReferenceAssistant {
    name: String,
    solutions: Arc<HashMap<String, String>>,
    provider: Arc<dyn LikelihoodProvider>,
    mode: ReferenceMode,
}

impl ReferenceAssistant {
    pub fn new(
        name: impl Into<String>,
        solutions: Arc<HashMap<String, String>>,
        provider: Arc<dyn LikelihoodProvider>,
        mode: ReferenceMode,
    ) -> Self {
        Self { name: name.into(), solutions, provider, mode }
    }
}

fn remaining<'s>(solutions: &'s HashMap<String, String>, input: &PolicyInput<'_>) -> Option<&'s str> {
    solutions.get(&input.problem.id)?.strip_prefix(input.state)
}

impl AssistantPolicy for ReferenceAssistant {
    fn name(&self) -> &str {
        &self.name
    }

    fn suggest(&self, input: &PolicyInput<'_>) -> Result<Suggestion, PolicyError> {
        let Some(rest) = remaining(&self.solutions, input) else {
            return Ok(Suggestion::empty_with("state diverged from the reference solution"));
        };
        if rest.is_empty() {
            return Ok(Suggestion::default());
        }
        let contract = |e: crate::likelihood::LikelihoodError| PolicyError::Contract(e.to_string());
        let pieces = self.provider.tokenize(rest).map_err(contract)?;
        let keep = match self.mode {
            ReferenceMode::Full => pieces.len(),
            ReferenceMode::NextN(n) => n.min(pieces.len()),
            ReferenceMode::Rand { lo, hi } => {
                let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
                rng.set_stream(input.round as u64);
                sft_rand_select(pieces.len(), 0, lo, hi, &mut rng)
            }
            ReferenceMode::Empower(threshold) => {
                let scored = self.provider.score(input.state, rest).map_err(contract)?;
                empower_select(&scored.to_base(threshold.base), threshold)
                    .map_err(|e| PolicyError::Contract(e.to_string()))?
                    .min(pieces.len())
            }
        };
        Ok(Suggestion::new(pieces[..keep].concat()))
    }
}

/// Writes a known solution `k_h` pieces at a time. Accepts a suggestion
/// exactly when it continues the solution and leaves at least one piece for
/// the human to write, since every non-finishing turn must append text.
/// Finishes once the solution is complete.
pub struct ReferenceHuman {
    name: String,
    solutions: Arc<HashMap<String, String>>,
    tokenizer: Arc<dyn Tokenizer>,
}

impl ReferenceHuman {
    pub fn new(name: impl Into<String>, solutions: Arc<HashMap<String, String>>, tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self { name: name.into(), solutions, tokenizer }
    }
}

impl HumanPolicy for ReferenceHuman {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&self, input: &PolicyInput<'_>, suggestion: &str) -> Result<HumanDecision, PolicyError> {
        let rest = remaining(&self.solutions, input)
            .ok_or_else(|| PolicyError::Contract("state diverged from the reference solution".into()))?;
        Ok(if rest.is_empty() {
            Decision::Finish
        } else if rest.len() > suggestion.len() && rest.starts_with(suggestion) {
            Decision::Accept
        } else {
            Decision::Reject
        }
        .into())
    }

    fn append(&self, input: &PolicyInput<'_>, k_h: usize) -> Result<String, PolicyError> {
        let rest = remaining(&self.solutions, input)
            .ok_or_else(|| PolicyError::Contract("state diverged from the reference solution".into()))?;
        if rest.is_empty() {
            return Err(PolicyError::Contract("nothing left to append".into()));
        }
        super::truncate_tokens(self.tokenizer.as_ref(), rest, k_h).map_err(|e| PolicyError::Contract(e.to_string()))
    }

    fn finish_without_suggestion(&self, input: &PolicyInput<'_>) -> Result<bool, PolicyError> {
        Ok(remaining(&self.solutions, input) == Some(""))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{IoMode, Problem};
    use crate::likelihood::{CharTokenizer, LogBase, TableMock, TableRow};
    use crate::simulator::{run_episode, SimConfig, Termination};

    fn setup(solution: &str) -> (Problem, Arc<HashMap<String, String>>) {
        let p = Problem {
            id: "p".into(),
            statement: "s".into(),
            starter_code: String::new(),
            io_mode: IoMode::Stdin,
            testcases: vec![],
        };
        (p, Arc::new(HashMap::from([("p".to_string(), solution.to_string())])))
    }

    fn uniform_mock(alphabet: &str) -> Arc<dyn LikelihoodProvider> {
        let p = 1.0 / alphabet.chars().count() as f64;
        let rows = alphabet
            .chars()
            .map(|c| TableRow { context: None, piece: c.to_string(), prob: p })
            .collect();
        Arc::new(TableMock::new(rows).unwrap())
    }

    #[test]
    fn reference_pair_reproduces_solution() {
        let solution = "read x\necho $((x+1))\n";
        let (problem, sols) = setup(solution);
        let provider = uniform_mock("abcdefghijklmnopqrstuvwxyz$()+1\n ");
        for mode in [
            ReferenceMode::Full,
            ReferenceMode::NextN(3),
            ReferenceMode::Rand { lo: 1, hi: 5 },
            ReferenceMode::Empower(Threshold { eta: 10.0, base: LogBase::Natural }),
        ] {
            let a = ReferenceAssistant::new("ref", sols.clone(), provider.clone(), mode);
            let h = ReferenceHuman::new("h", sols.clone(), Arc::new(CharTokenizer));
            let t = run_episode(&problem, &a, &h, &CharTokenizer, &SimConfig::default(), 3).unwrap();
            assert_eq!(t.final_program, solution, "{mode:?}");
            assert_eq!(t.terminated_by, Termination::Finish);
            assert!(t.errors.is_empty());
        }
    }

    #[test]
    fn full_suggestion_is_rejected_when_it_completes_the_program() {
        let (problem, sols) = setup("abc");
        let h = ReferenceHuman::new("h", sols, Arc::new(CharTokenizer));
        let input = PolicyInput { problem: &problem, state: "a", round: 0, seed: 0 };
        assert_eq!(h.decide(&input, "bc").unwrap().decision, Decision::Reject);
        assert_eq!(h.decide(&input, "b").unwrap().decision, Decision::Accept);
        assert_eq!(h.decide(&input, "x").unwrap().decision, Decision::Reject);
    }

    #[test]
    fn capped_truncates() {
        let a = Capped::new(ScriptedAssistant::new("base", vec!["abcdef".into()]), Arc::new(CharTokenizer), 4);
        let (problem, _) = setup("");
        let s = a.suggest(&PolicyInput { problem: &problem, state: "", round: 0, seed: 0 }).unwrap();
        assert_eq!(s.text, "abcd");
        assert_eq!(a.name(), "base-4");
    }
}
