//! Run configuration: a TOML file whose sections mirror the pipeline
//! stages. Command-line flags override file values, which override defaults.

use std::path::{Path, PathBuf};

use anyhow::Context;
use empower_core::chat::ChatEndpointConfig;
use empower_core::likelihood::{HttpProviderConfig, LogBase};
use empower_core::metrics::{DprParams, JudgeConfig};
use empower_core::selection::SelectorConfig;
use empower_core::simulator::SimConfig;
use empower_service::CompletionMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; all available cores when unset.
    pub jobs: Option<usize>,
    pub paths: PathsConfig,
    pub provider: ProviderConfig,
    pub corpus: CorpusConfig,
    pub dataset: DatasetConfig,
    pub simulator: SimConfig,
    pub assistant: AssistantSpec,
    pub human: HumanSpec,
    pub dpr: DprParams,
    pub judge: JudgeConfig,
    pub service: ServiceConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Provider cache file (newline-delimited JSON).
    pub cache: Option<PathBuf>,
    /// Directory of prompt overrides for chat-model policies.
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Character n-gram model fitted on the corpus solutions.
    Ngram {
        #[serde(default = "default_order")]
        order: usize,
        /// Additive smoothing constant.
        #[serde(default = "default_smoothing")]
        smoothing: f64,
    },
    /// Explicit probability table (JSON array of rows).
    Table { path: PathBuf },
    /// Remote completions endpoint returning echoed prompt log-probabilities.
    Http { endpoint: HttpProviderConfig },
}

fn default_order() -> usize {
    3
}

fn default_smoothing() -> f64 {
    0.01
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Ngram { order: default_order(), smoothing: default_smoothing() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub lenient: bool,
    pub dedup_statements: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub selector: SelectorConfig,
    pub min_prefix: usize,
    pub states_per_doc: usize,
    pub allow_partial: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            selector: SelectorConfig::Empower { eta: 0.32, base: LogBase::Natural },
            min_prefix: 1,
            states_per_doc: 1,
            allow_partial: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceModeKind {
    Full,
    NextN,
    Rand,
    #[default]
    Empower,
}

/// An assistant policy and how to build it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AssistantSpec {
    /// Never suggests.
    Null {
        #[serde(default)]
        name: Option<String>,
    },
    /// Reveals the corpus reference solution.
    Reference {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        mode: ReferenceModeKind,
        #[serde(default = "default_n_tokens")]
        n_tokens: usize,
        #[serde(default = "default_lo")]
        lo: usize,
        #[serde(default = "default_hi")]
        hi: usize,
        #[serde(default = "default_eta")]
        eta: f64,
        #[serde(default)]
        base: LogBase,
        #[serde(default)]
        cap: Option<usize>,
    },
    /// A chat model asked to re-type and extend the program.
    Llm {
        #[serde(default)]
        name: Option<String>,
        endpoint: ChatEndpointConfig,
        #[serde(default)]
        max_tokens: Option<u32>,
        #[serde(default)]
        cap: Option<usize>,
    },
}

fn default_n_tokens() -> usize {
    10
}
fn default_lo() -> usize {
    1
}
fn default_hi() -> usize {
    30
}
fn default_eta() -> f64 {
    0.32
}

impl Default for AssistantSpec {
    fn default() -> Self {
        AssistantSpec::Reference {
            name: None,
            mode: ReferenceModeKind::default(),
            n_tokens: default_n_tokens(),
            lo: default_lo(),
            hi: default_hi(),
            eta: default_eta(),
            base: LogBase::Natural,
            cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HumanSpec {
    /// Types the corpus reference solution and accepts consistent suggestions.
    #[default]
    Reference,
    Llm { endpoint: ChatEndpointConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    pub log_path: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub completion_mode: CompletionMode,
    pub test_command: String,
    pub arms: Vec<AssistantSpec>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let defaults = empower_service::ServiceSettings::default();
        Self {
            port: 8080,
            log_path: None,
            ui_dir: None,
            completion_mode: defaults.completion_mode,
            test_command: defaults.test_command,
            arms: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map(Self::load).unwrap_or_else(|| Ok(Self::default()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_sections_fill_defaults() {
        let cfg: RunConfig = toml::from_str(
            "seed = 3\n[dataset.selector]\nkind = \"sft-n\"\nn_tokens = 20\n[judge]\ntimeout_secs = 1.0\n[[service.arms]]\nkind = \"null\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.dataset.selector, SelectorConfig::SftN { n_tokens: 20 });
        assert_eq!(cfg.dataset.min_prefix, 1);
        assert_eq!(cfg.judge.command, JudgeConfig::default().command);
        assert_eq!(cfg.simulator.k_h, 10);
        assert_eq!(cfg.service.arms.len(), 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3\n").is_err());
    }
}
