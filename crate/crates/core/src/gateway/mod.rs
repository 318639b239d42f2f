//! Meta-agent gateway: renders rubrics, issues completions, decodes outputs.
//!
//! The [`Gateway`] is the only component that talks to a model. Everything
//! above it works with typed [`ContractValue`]s, so swapping the live
//! provider for a scripted fixture set changes nothing else.

mod contract;
mod provider;
mod template;

pub use contract::{
    first_json_object, parse_contract, AnalyzerOut, ClassifierOut, ConflictOut, ContractValue,
    GeneratorOut, MergeOut, ScopeLabel, SelectorOut, SubsumeOut,
};
pub use provider::{
    extract_chat_content, fixture_file_name, request_digest, FnProvider, LiveProvider, Provider,
    RecordingProvider, ScriptedProvider,
};
pub use template::{
    extract_placeholders, render_prompt, RubricKind, RubricTemplate, BINDING_CHAR_BUDGET,
    TRUNCATION_MARKER,
};

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One completion request. `tag` is the rubric tag used for logging and
/// fixture lookup; `sample_ordinal` distinguishes repeated draws from the
/// same prompt (candidate 0, 1, … of a best-of-N batch).
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub tag: String,
    pub sample_ordinal: u32,
}

/// Provider configuration as it appears in the engine config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProviderKind {
    /// Real HTTP chat-completion backend. The credential is referenced by
    /// environment-variable name; it never appears in config files.
    Live {
        endpoint: String,
        model: String,
        credential_env: String,
    },
    /// Deterministic fixture-set backend for offline runs and CI.
    Scripted { fixtures_dir: PathBuf },
}

impl ProviderKind {
    pub fn build(&self) -> Result<Box<dyn Provider>, GatewayError> {
        match self {
            ProviderKind::Live {
                endpoint,
                model,
                credential_env,
            } => Ok(Box::new(LiveProvider::new(endpoint, model, credential_env)?)),
            ProviderKind::Scripted { fixtures_dir } => {
                if !fixtures_dir.is_dir() {
                    return Err(GatewayError::ProviderUnavailable {
                        detail: format!("fixtures directory {} does not exist", fixtures_dir.display()),
                    });
                }
                Ok(Box::new(ScriptedProvider::new(fixtures_dir)))
            }
        }
    }
}

/// Sampling defaults: generative rubrics draw at a diversity temperature,
/// decision rubrics (selector/classifier/optimizer) run at zero.
pub const GENERATOR_TEMPERATURE: f64 = 0.7;
pub const DECISION_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

pub struct Gateway {
    provider: Box<dyn Provider>,
    max_output_tokens: u32,
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>) -> Gateway {
        Gateway {
            provider,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    /// Renders the built-in rubric for `kind` into a ready request.
    pub fn build_request(
        &self,
        kind: RubricKind,
        bindings: &BTreeMap<String, String>,
        sample_ordinal: u32,
    ) -> Result<CompletionRequest, GatewayError> {
        let template = RubricTemplate::builtin(kind);
        let user_text = render_prompt(template, bindings)?;
        Ok(CompletionRequest {
            system_text: String::new(),
            user_text,
            temperature: if kind.is_generative() {
                GENERATOR_TEMPERATURE
            } else {
                DECISION_TEMPERATURE
            },
            max_output_tokens: self.max_output_tokens,
            tag: kind.tag().to_string(),
            sample_ordinal,
        })
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.provider.complete(request)
    }

    /// Render → complete → decode, as a single typed call.
    pub fn call(
        &self,
        kind: RubricKind,
        bindings: &BTreeMap<String, String>,
        sample_ordinal: u32,
    ) -> Result<ContractValue, GatewayError> {
        let request = self.build_request(kind, bindings, sample_ordinal)?;
        let raw = self.complete(&request)?;
        parse_contract(kind, &raw)
    }

    /// Like [`Gateway::call`], but re-issues the request once when the first
    /// response fails to decode. A second decode failure is returned to the
    /// caller, which skips the update.
    pub fn call_with_retry(
        &self,
        kind: RubricKind,
        bindings: &BTreeMap<String, String>,
        sample_ordinal: u32,
    ) -> Result<ContractValue, GatewayError> {
        match self.call(kind, bindings, sample_ordinal) {
            Ok(value) => Ok(value),
            Err(e @ (GatewayError::MalformedOutput { .. } | GatewayError::SchemaViolation(_))) => {
                log::warn!("{} output failed to decode ({e}); re-issuing once", kind.tag());
                self.call(kind, bindings, sample_ordinal)
            }
            Err(other) => Err(other),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GatewayError {
    #[error("missing binding '{0}'")]
    MissingBinding(String),
    #[error("provider unavailable: {detail}")]
    ProviderUnavailable { detail: String },
    #[error("no fixture for tag '{tag}' digest '{digest}'")]
    FixtureMissing { tag: String, digest: String },
    #[error("malformed {kind} output: {detail}")]
    MalformedOutput { kind: String, detail: String },
    #[error("schema violation in field '{0}'")]
    SchemaViolation(String),
}
