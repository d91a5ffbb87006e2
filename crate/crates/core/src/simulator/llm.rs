//! Chat-model driven assistant and simulated human.

use std::sync::Arc;

use super::{AssistantPolicy, Decision, HumanDecision, HumanPolicy, PolicyError, PolicyInput, Suggestion};
use crate::chat::{ChatBackend, ChatError, ChatMessage};
use crate::corpus::{IoMode, Problem};
use crate::prompts::{PromptError, PromptSet};

fn transport(e: ChatError) -> PolicyError {
    PolicyError::Transport(e.to_string())
}

fn prompt(e: PromptError) -> PolicyError {
    PolicyError::Contract(e.to_string())
}

/// Returns the body of the first fenced code block, without its final
/// newline. A reply with no fence is taken verbatim; `None` when a fence
/// is opened but never closed.
pub fn extract_code_block(reply: &str) -> Option<String> {
    let Some(open) = reply.find("```") else {
        return Some(reply.to_string());
    };
    let after = &reply[open + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let close = body.find("```")?;
    let code = &body[..close];
    Some(code.strip_suffix('\n').unwrap_or(code).to_string())
}

/// Minimal line diff between `old` and `new`, rendered with `-`/`+` markers
/// after their common leading lines.
pub fn line_diff(old: &str, new: &str) -> String {
    let a: Vec<&str> = old.lines().collect();
    let b: Vec<&str> = new.lines().collect();
    let common = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = String::from("--- current\n+++ suggested\n");
    for line in &a[..common] {
        out.push_str(&format!(" {line}\n"));
    }
    for line in &a[common..] {
        out.push_str(&format!("-{line}\n"));
    }
    for line in &b[common..] {
        out.push_str(&format!("+{line}\n"));
    }
    out
}

/// Reads an action word from a reply. A reply naming exactly one action
/// yields it; otherwise the final word decides if it is an action.
pub fn parse_decision(reply: &str) -> Option<Decision> {
    let words: Vec<String> = reply
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_lowercase)
        .collect();
    let as_decision = |w: &str| match w {
        "accept" => Some(Decision::Accept),
        "reject" => Some(Decision::Reject),
        "finish" => Some(Decision::Finish),
        _ => None,
    };
    let mut named: Vec<Decision> = words.iter().filter_map(|w| as_decision(w)).collect();
    named.dedup();
    named.sort_by_key(|d| *d as u8);
    named.dedup();
    match named.as_slice() {
        [one] => Some(*one),
        [] => None,
        _ => words.last().and_then(|w| as_decision(w)),
    }
}

fn question_block(prompts: &PromptSet, problem: &Problem) -> Result<String, PolicyError> {
    match problem.io_mode {
        IoMode::Functional => prompts.appender_user_starter.render(&[
            ("problem.question_content", &problem.statement),
            ("problem.starter_code", &problem.starter_code),
        ]),
        IoMode::Stdin => prompts
            .appender_user_stdin
            .render(&[("problem.question_content", &problem.statement)]),
    }
    .map_err(prompt)
}

/// Asks a chat model to re-type the program and extend it; the suggestion
/// is whatever follows the current state.
pub struct LlmAssistant {
    name: String,
    chat: Arc<dyn ChatBackend>,
    prompts: Arc<PromptSet>,
    max_tokens: Option<u32>,
}

impl LlmAssistant {
    pub fn new(name: impl Into<String>, chat: Arc<dyn ChatBackend>, prompts: Arc<PromptSet>) -> Self {
        Self { name: name.into(), chat, prompts, max_tokens: None }
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = Some(max_tokens);
        self
    }
}

impl AssistantPolicy for LlmAssistant {
    fn name(&self) -> &str {
        &self.name
    }

    fn suggest(&self, input: &PolicyInput<'_>) -> Result<Suggestion, PolicyError> {
        let mut messages = vec![ChatMessage::system(self.prompts.assistant_system.text())];
        messages.extend(self.prompts.assistant_fewshot.iter().cloned());
        messages.push(ChatMessage::user(
            self.prompts.assistant_user.render(&[("code_to_complete", input.state)]).map_err(prompt)?,
        ));
        let reply = self.chat.complete(&messages, self.max_tokens).map_err(transport)?;
        let Some(code) = extract_code_block(&reply) else {
            return Ok(Suggestion::empty_with("unclosed code block in assistant reply"));
        };
        match code.strip_prefix(input.state) {
            Some(rest) => Ok(Suggestion::new(rest)),
            None => Ok(Suggestion::empty_with("assistant reply did not re-type the current code")),
        }
    }
}

/// Simulated programmer backed by a chat model: reasons about each
/// suggestion, names an action, and writes continuations.
pub struct LlmHuman {
    name: String,
    chat: Arc<dyn ChatBackend>,
    prompts: Arc<PromptSet>,
}

impl LlmHuman {
    pub fn new(name: impl Into<String>, chat: Arc<dyn ChatBackend>, prompts: Arc<PromptSet>) -> Self {
        Self { name: name.into(), chat, prompts }
    }
}

impl HumanPolicy for LlmHuman {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(&self, input: &PolicyInput<'_>, suggestion: &str) -> Result<HumanDecision, PolicyError> {
        let p = &self.prompts;
        let proposed = format!("{}{suggestion}", input.state);
        let reasoning = p
            .acceptor_reasoning
            .render(&[("code", input.state), ("suggestion", &proposed), ("diff", &line_diff(input.state, &proposed))])
            .map_err(prompt)?;
        let mut messages = vec![
            ChatMessage::system(p.acceptor_system.text()),
            ChatMessage::user(format!("{}\n\n{reasoning}", question_block(p, input.problem)?)),
        ];
        let thoughts = self.chat.complete(&messages, None).map_err(transport)?;
        messages.push(ChatMessage::assistant(thoughts));
        messages.push(ChatMessage::user(p.acceptor_decision.text()));
        let answer = self.chat.complete(&messages, None).map_err(transport)?;
        if let Some(decision) = parse_decision(&answer) {
            return Ok(decision.into());
        }
        messages.push(ChatMessage::assistant(answer));
        messages.push(ChatMessage::user(p.acceptor_reprompt.text()));
        let retry = self.chat.complete(&messages, None).map_err(transport)?;
        Ok(match parse_decision(&retry) {
            Some(decision) => decision.into(),
            None => HumanDecision {
                decision: Decision::Reject,
                annotation: Some("no parseable action after reprompt; treated as reject".into()),
            },
        })
    }

    fn append(&self, input: &PolicyInput<'_>, _k_h: usize) -> Result<String, PolicyError> {
        let p = &self.prompts;
        let cont = p.appender_continue.render(&[("code", input.state)]).map_err(prompt)?;
        let messages = vec![
            ChatMessage::system(p.appender_system.text()),
            ChatMessage::user(format!("{}\n\n{cont}", question_block(p, input.problem)?)),
        ];
        let reply = self.chat.complete(&messages, None).map_err(transport)?;
        let code = extract_code_block(&reply)
            .ok_or_else(|| PolicyError::Contract("unclosed code block in append reply".into()))?;
        code.strip_prefix(input.state)
            .map(str::to_string)
            .ok_or_else(|| PolicyError::Contract("append reply did not re-type the current code".into()))
    }
}
