//! Prompt templates with `{{ placeholder }}` substitution.
//!
//! Built-in templates are compiled in from `prompts/`; a directory with
//! files of the same names overrides them one by one.

use std::path::Path;

use thiserror::Error;

use crate::chat::ChatMessage;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template}: no value for placeholder {{{{{name}}}}}")]
    MissingValue { template: String, name: String },
    #[error("template {template}: unterminated placeholder")]
    Unterminated { template: String },
    #[error("reading prompt {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("few-shot file {path}: {message}")]
    FewShot { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    name: String,
    text: String,
}

impl Template {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let text = text.strip_suffix('\n').map(str::to_string).unwrap_or(text);
        Self { name: name.into(), text }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes every `{{ key }}`. A placeholder without a value is an error.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.text.len());
        let mut rest = self.text.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let end = after
                .find("}}")
                .ok_or_else(|| PromptError::Unterminated { template: self.name.clone() })?;
            let key = after[..end].trim();
            let value = vars
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::MissingValue { template: self.name.clone(), name: key.to_string() })?;
            out.push_str(value);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    pub assistant_system: Template,
    pub assistant_user: Template,
    pub assistant_fewshot: Vec<ChatMessage>,
    pub appender_system: Template,
    pub appender_user_starter: Template,
    pub appender_user_stdin: Template,
    pub appender_continue: Template,
    pub acceptor_system: Template,
    pub acceptor_reasoning: Template,
    pub acceptor_decision: Template,
    pub acceptor_reprompt: Template,
}

macro_rules! builtin {
    ($name:literal) => {
        Template::new($name, include_str!(concat!("../prompts/", $name, ".txt")))
    };
}

const FEWSHOT: &str = include_str!("../prompts/assistant_fewshot.json");

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            assistant_system: builtin!("assistant_system"),
            assistant_user: builtin!("assistant_user"),
            assistant_fewshot: serde_json::from_str(FEWSHOT).expect("built-in few-shot file parses"),
            appender_system: builtin!("appender_system"),
            appender_user_starter: builtin!("appender_user_starter"),
            appender_user_stdin: builtin!("appender_user_stdin"),
            appender_continue: builtin!("appender_continue"),
            acceptor_system: builtin!("acceptor_system"),
            acceptor_reasoning: builtin!("acceptor_reasoning"),
            acceptor_decision: builtin!("acceptor_decision"),
            acceptor_reprompt: builtin!("acceptor_reprompt"),
        }
    }
}

impl PromptSet {
    /// Loads overrides from `dir`; files that are absent keep the built-in text.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        let read = |name: &str| -> Result<Option<String>, PromptError> {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(source) => Err(PromptError::Io { path: path.display().to_string(), source }),
            }
        };
        {
            let mut slots: [(&str, &mut Template); 10] = [
                ("assistant_system", &mut set.assistant_system),
                ("assistant_user", &mut set.assistant_user),
                ("appender_system", &mut set.appender_system),
                ("appender_user_starter", &mut set.appender_user_starter),
                ("appender_user_stdin", &mut set.appender_user_stdin),
                ("appender_continue", &mut set.appender_continue),
                ("acceptor_system", &mut set.acceptor_system),
                ("acceptor_reasoning", &mut set.acceptor_reasoning),
                ("acceptor_decision", &mut set.acceptor_decision),
                ("acceptor_reprompt", &mut set.acceptor_reprompt),
            ];
            for (name, slot) in slots.iter_mut() {
                if let Some(text) = read(&format!("{name}.txt"))? {
                    **slot = Template::new(*name, text);
                }
            }
        }
        if let Some(text) = read("assistant_fewshot.json")? {
            set.assistant_fewshot = serde_json::from_str(&text).map_err(|e| PromptError::FewShot {
                path: dir.join("assistant_fewshot.json").display().to_string(),
                message: e.to_string(),
            })?;
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_with_and_without_spaces() {
        let t = Template::new("t", "a {{x}} b {{ y }} c\n");
        assert_eq!(t.render(&[("x", "1"), ("y", "2")]).unwrap(), "a 1 b 2 c");
    }

    #[test]
    fn missing_value_is_error() {
        let t = Template::new("t", "{{ problem.starter_code }}");
        assert!(matches!(t.render(&[]), Err(PromptError::MissingValue { name, .. }) if name == "problem.starter_code"));
    }

    #[test]
    fn values_are_not_rescanned() {
        let t = Template::new("t", "{{a}}");
        assert_eq!(t.render(&[("a", "{{b}}")]).unwrap(), "{{b}}");
    }

    #[test]
    fn builtins_render() {
        let p = PromptSet::default();
        let u = p.assistant_user.render(&[("code_to_complete", "import sys")]).unwrap();
        assert!(u.ends_with("```python\nimport sys\n```"));
        p.appender_user_starter
            .render(&[("problem.question_content", "q"), ("problem.starter_code", "class Solution:")])
            .unwrap();
        p.appender_user_stdin.render(&[("problem.question_content", "q")]).unwrap();
        p.acceptor_reasoning.render(&[("code", "a"), ("suggestion", "ab"), ("diff", "+b")]).unwrap();
        assert_eq!(p.assistant_fewshot.len(), 4);
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("assistant_user.txt"), "complete: {{code_to_complete}}").unwrap();
        let p = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(p.assistant_user.render(&[("code_to_complete", "x")]).unwrap(), "complete: x");
        assert_eq!(p.acceptor_system, PromptSet::default().acceptor_system);
    }
}
