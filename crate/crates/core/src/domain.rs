//! Shared domain types: guidelines, execution traces, and trigger detection.
//!
//! Everything here is a plain value type. Trace logs are newline-delimited
//! JSON, one [`TraceStep`] per line with snake_case field names.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// The seven semantic domains a strategic guideline can be filed under.
///
/// Declaration order is the canonical render order for prompt assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidelineDomain {
    ToolUsage,
    DataValidation,
    ErrorHandling,
    Efficiency,
    AnalysisMethodology,
    Safety,
    General,
}

impl GuidelineDomain {
    pub const ALL: [GuidelineDomain; 7] = [
        GuidelineDomain::ToolUsage,
        GuidelineDomain::DataValidation,
        GuidelineDomain::ErrorHandling,
        GuidelineDomain::Efficiency,
        GuidelineDomain::AnalysisMethodology,
        GuidelineDomain::Safety,
        GuidelineDomain::General,
    ];

    /// The snake_case wire name, as used in classifier output and snapshots.
    pub fn wire_name(&self) -> &'static str {
        match self {
            GuidelineDomain::ToolUsage => "tool_usage",
            GuidelineDomain::DataValidation => "data_validation",
            GuidelineDomain::ErrorHandling => "error_handling",
            GuidelineDomain::Efficiency => "efficiency",
            GuidelineDomain::AnalysisMethodology => "analysis_methodology",
            GuidelineDomain::Safety => "safety",
            GuidelineDomain::General => "general",
        }
    }

    /// Human-readable heading used when rendering prompt sections.
    pub fn display_name(&self) -> &'static str {
        match self {
            GuidelineDomain::ToolUsage => "Tool Usage",
            GuidelineDomain::DataValidation => "Data Validation",
            GuidelineDomain::ErrorHandling => "Error Handling",
            GuidelineDomain::Efficiency => "Efficiency",
            GuidelineDomain::AnalysisMethodology => "Analysis Methodology",
            GuidelineDomain::Safety => "Safety",
            GuidelineDomain::General => "General",
        }
    }

    /// Maps a classifier-emitted domain string; anything unrecognized
    /// (including empty) falls back to [`GuidelineDomain::General`].
    pub fn from_wire(s: &str) -> GuidelineDomain {
        match s.trim().to_ascii_lowercase().as_str() {
            "tool_usage" => GuidelineDomain::ToolUsage,
            "data_validation" => GuidelineDomain::DataValidation,
            "error_handling" => GuidelineDomain::ErrorHandling,
            "efficiency" => GuidelineDomain::Efficiency,
            "analysis_methodology" => GuidelineDomain::AnalysisMethodology,
            "safety" => GuidelineDomain::Safety,
            _ => GuidelineDomain::General,
        }
    }
}

impl fmt::Display for GuidelineDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

/// Where a guideline lives: valid for the current task only, or persistent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidelineScope {
    Tactical,
    Strategic,
}

/// What kind of trigger produced a guideline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidelineMode {
    Corrective,
    Enhancement,
}

/// Label of an evolution stream (independent lane with its own persona
/// and memory root).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamLabel {
    Efficiency,
    Thoroughness,
    Custom(String),
}

impl StreamLabel {
    pub fn as_str(&self) -> &str {
        match self {
            StreamLabel::Efficiency => "efficiency",
            StreamLabel::Thoroughness => "thoroughness",
            StreamLabel::Custom(s) => s.as_str(),
        }
    }

    pub fn from_str_lossy(s: &str) -> StreamLabel {
        match s {
            "efficiency" => StreamLabel::Efficiency,
            "thoroughness" => StreamLabel::Thoroughness,
            other => StreamLabel::Custom(other.to_string()),
        }
    }
}

impl fmt::Display for StreamLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for StreamLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for StreamLabel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(StreamLabel::from_str_lossy(&s))
    }
}

/// Stable identifier for a guideline, derived from its provenance so that
/// replays produce identical ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GuidelineId(pub String);

impl GuidelineId {
    /// Derives an id from provenance fields. Deterministic by construction.
    pub fn derive(agent: &str, task: &str, step: u32, text: &str) -> GuidelineId {
        let mut hasher = Sha256::new();
        hasher.update(agent.as_bytes());
        hasher.update([0u8]);
        hasher.update(task.as_bytes());
        hasher.update([0u8]);
        hasher.update(step.to_le_bytes());
        hasher.update([0u8]);
        hasher.update(text.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        GuidelineId(format!("g-{hex}"))
    }
}

impl fmt::Display for GuidelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One learned rule, the unit stored in memories and rendered into prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guideline {
    pub id: GuidelineId,
    pub text: String,
    pub rationale: String,
    /// Refined confidence in `[0, 1]` (the classifier's judgment).
    pub confidence: f64,
    pub scope: GuidelineScope,
    pub domain: GuidelineDomain,
    pub mode: GuidelineMode,
    pub source_agent: String,
    pub source_task: String,
    pub created_at_step: u32,
    pub stream: StreamLabel,
    /// Source guideline ids when this rule was produced by the optimizer
    /// merging others; empty for directly synthesized rules.
    #[serde(default)]
    pub merged_from: Vec<GuidelineId>,
}

impl Guideline {
    /// Checks the value-level invariants: non-empty text, confidence in range.
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.text.trim().is_empty() {
            return Err(DomainError::EmptyGuidelineText);
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(DomainError::ConfidenceOutOfRange(self.confidence));
        }
        Ok(())
    }
}

/// Generator-emitted confidence label, bridged to a numeric initial
/// confidence by [`confidence_from_label`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfidenceLabel {
    Low,
    Medium,
    High,
}

impl ConfidenceLabel {
    pub fn parse(s: &str) -> Option<ConfidenceLabel> {
        match s.trim().to_ascii_lowercase().as_str() {
            "low" => Some(ConfidenceLabel::Low),
            "medium" => Some(ConfidenceLabel::Medium),
            "high" => Some(ConfidenceLabel::High),
            _ => None,
        }
    }
}

/// Fixed label→numeric mapping: low→0.30, medium→0.60, high→0.90.
///
/// Spacing keeps "high" above the strategic-promotion threshold (0.85) and
/// "medium" above the auto-accept threshold (0.5).
pub fn confidence_from_label(label: ConfidenceLabel) -> f64 {
    match label {
        ConfidenceLabel::Low => 0.30,
        ConfidenceLabel::Medium => 0.60,
        ConfidenceLabel::High => 0.90,
    }
}

/// Did a step succeed or error out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepOutcome {
    Success,
    Error,
}

/// One recorded agent action with its observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Ordinal ≥ 1, strictly increasing within a trace.
    pub step_number: u32,
    pub agent_name: String,
    /// Tool call or plan text.
    pub action: String,
    /// Tool output.
    pub observation: String,
    pub outcome: StepOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_message: Option<String>,
    /// Recorded for audit only; never consulted by engine logic.
    pub timestamp: DateTime<Utc>,
}

impl TraceStep {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.step_number == 0 {
            return Err(DomainError::InvalidStepNumber);
        }
        if self.outcome == StepOutcome::Error && self.error_message.is_none() {
            return Err(DomainError::ErrorStepWithoutMessage(self.step_number));
        }
        Ok(())
    }
}

/// Terminal (or running) state of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceStatus {
    Running,
    Completed,
    Failed,
    MaxSteps,
}

/// Ordered record of everything an agent did for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub task_id: String,
    pub steps: Vec<TraceStep>,
    pub status: TraceStatus,
}

impl ExecutionTrace {
    pub fn new(task_id: impl Into<String>) -> ExecutionTrace {
        ExecutionTrace {
            task_id: task_id.into(),
            steps: Vec::new(),
            status: TraceStatus::Running,
        }
    }

    /// Appends a step, enforcing ordering and the error-message invariant.
    /// Traces that have left the `Running` state accept no further steps.
    pub fn append(&mut self, step: TraceStep) -> Result<(), DomainError> {
        if self.status != TraceStatus::Running {
            return Err(DomainError::TraceNotRunning(self.status));
        }
        step.validate()?;
        if let Some(last) = self.steps.last() {
            if step.step_number <= last.step_number {
                return Err(DomainError::NonMonotonicStep {
                    last: last.step_number,
                    next: step.step_number,
                });
            }
        }
        self.steps.push(step);
        Ok(())
    }

    pub fn finish(&mut self, status: TraceStatus) {
        debug_assert!(status != TraceStatus::Running);
        self.status = status;
    }

    pub fn error_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.outcome == StepOutcome::Error)
            .count()
    }

    /// Error steps that repeat an earlier error verbatim (same action and
    /// error type) — the signature of an agent stuck in a loop.
    pub fn repeated_error_steps(&self) -> usize {
        let mut seen: Vec<(&str, Option<&str>)> = Vec::new();
        let mut repeats = 0;
        for step in &self.steps {
            if step.outcome != StepOutcome::Error {
                continue;
            }
            let key = (step.action.as_str(), step.error_type.as_deref());
            if seen.contains(&key) {
                repeats += 1;
            } else {
                seen.push(key);
            }
        }
        repeats
    }

    /// Serializes the trace as newline-delimited JSON, one step per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            // TraceStep contains no maps, so serialization cannot fail.
            out.push_str(&serde_json::to_string(step).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses an NDJSON trace log. Blank lines are skipped; any malformed
    /// line fails with its 1-based line number.
    pub fn from_ndjson(task_id: impl Into<String>, text: &str) -> Result<ExecutionTrace, TraceParseError> {
        let mut trace = ExecutionTrace::new(task_id);
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let step: TraceStep = serde_json::from_str(line).map_err(|e| TraceParseError {
                line: line_no,
                detail: e.to_string(),
            })?;
            trace.append(step).map_err(|e| TraceParseError {
                line: line_no,
                detail: e.to_string(),
            })?;
        }
        Ok(trace)
    }
}

/// A detected reason to run the synthesis pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub mode: GuidelineMode,
    pub step_ref: u32,
    pub agent_name: String,
}

/// Decides when successful steps warrant an enhancement pass.
///
/// Counters are per agent and live for a single episode.
#[derive(Debug, Clone)]
pub struct TriggerPolicy {
    enhancement_frequency: u32,
    success_counters: BTreeMap<String, u64>,
}

impl TriggerPolicy {
    /// `enhancement_frequency` of N means: analyze every N successful steps.
    pub fn new(enhancement_frequency: u32) -> TriggerPolicy {
        TriggerPolicy {
            enhancement_frequency: enhancement_frequency.max(1),
            success_counters: BTreeMap::new(),
        }
    }

    pub fn successes_for(&self, agent: &str) -> u64 {
        self.success_counters.get(agent).copied().unwrap_or(0)
    }
}

/// Trigger detection: errors always fire a corrective event; successes
/// increment the per-agent counter and fire an enhancement event whenever
/// the counter reaches a multiple of the configured frequency. Error steps
/// leave the counter untouched.
pub fn detect_trigger(step: &TraceStep, policy: &mut TriggerPolicy) -> Option<TriggerEvent> {
    match step.outcome {
        StepOutcome::Error => Some(TriggerEvent {
            mode: GuidelineMode::Corrective,
            step_ref: step.step_number,
            agent_name: step.agent_name.clone(),
        }),
        StepOutcome::Success => {
            let counter = policy
                .success_counters
                .entry(step.agent_name.clone())
                .or_insert(0);
            *counter += 1;
            if *counter % u64::from(policy.enhancement_frequency) == 0 {
                Some(TriggerEvent {
                    mode: GuidelineMode::Enhancement,
                    step_ref: step.step_number,
                    agent_name: step.agent_name.clone(),
                })
            } else {
                None
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("guideline text is empty")]
    EmptyGuidelineText,
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("step_number must be ≥ 1")]
    InvalidStepNumber,
    #[error("error step {0} has no error_message")]
    ErrorStepWithoutMessage(u32),
    #[error("trace is not running (status {0:?})")]
    TraceNotRunning(TraceStatus),
    #[error("step numbers must increase: last {last}, next {next}")]
    NonMonotonicStep { last: u32, next: u32 },
}

/// NDJSON parse failure, pointing at the offending line.
#[derive(Debug, Error, PartialEq)]
#[error("trace parse error at line {line}: {detail}")]
pub struct TraceParseError {
    pub line: usize,
    pub detail: String,
}
