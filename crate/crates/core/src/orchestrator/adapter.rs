//! The agent/environment boundary.
//!
//! The engine drives anything that implements [`AgentAdapter`]; the bundled
//! synthetic environment is one implementation, and a live adapter can wrap
//! an external agent loop the same way.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::PromptState;
use crate::domain::{ExecutionTrace, StepOutcome, TraceStep};
use crate::orchestrator::synthetic::InjectorSpec;

/// One task-executing agent. `act` must not mutate its inputs and must
/// terminate; internal bookkeeping state is the adapter's own business.
pub trait AgentAdapter: Send {
    fn name(&self) -> &str;
    /// Role description, used as a rubric binding.
    fn role(&self) -> &str;
    /// The agent's static base prompt (the text evolution starts from).
    fn base_prompt(&self) -> &str;
    fn act(
        &mut self,
        prompt: &PromptState,
        task: &TaskSpec,
        history: &ExecutionTrace,
    ) -> Result<TraceStep, AdapterFault>;
}

#[derive(Debug, Error)]
#[error("agent fault: {0}")]
pub struct AdapterFault(pub String);

pub const DEFAULT_MAX_STEPS: u32 = 20;

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

/// Environment-supplied success predicate over the final trace step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuccessCheck {
    /// The final step succeeded and its action starts with `prefix`.
    FinalActionPrefix { prefix: String },
    /// Any successful final step completes the task.
    FinalOutcomeSuccess,
}

impl Default for SuccessCheck {
    fn default() -> SuccessCheck {
        SuccessCheck::FinalActionPrefix {
            prefix: "submit_final_answer".to_string(),
        }
    }
}

impl SuccessCheck {
    pub fn evaluate(&self, step: &TraceStep) -> bool {
        if step.outcome != StepOutcome::Success {
            return false;
        }
        match self {
            SuccessCheck::FinalActionPrefix { prefix } => step.action.starts_with(prefix.as_str()),
            SuccessCheck::FinalOutcomeSuccess => true,
        }
    }
}

/// One task in a suite. Suite files are JSON arrays of these records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub instruction: String,
    #[serde(default = "default_max_steps")]
    pub max_steps: u32,
    /// Which agent runs this task (synthetic suites); defaults to "worker".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_name: Option<String>,
    /// Fault injector for the synthetic environment; absent means a plain
    /// task that succeeds without any learned remedy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injector: Option<InjectorSpec>,
    #[serde(default)]
    pub success_check: SuccessCheck,
}

impl TaskSpec {
    pub fn new(task_id: impl Into<String>, instruction: impl Into<String>) -> TaskSpec {
        TaskSpec {
            task_id: task_id.into(),
            instruction: instruction.into(),
            max_steps: DEFAULT_MAX_STEPS,
            agent_name: None,
            injector: None,
            success_check: SuccessCheck::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SuiteParseError> {
        if self.max_steps == 0 {
            return Err(SuiteParseError {
                detail: format!("task {}: max_steps must be ≥ 1", self.task_id),
            });
        }
        if self.task_id.trim().is_empty() {
            return Err(SuiteParseError {
                detail: "task_id must be non-empty".to_string(),
            });
        }
        Ok(())
    }
}

/// Parses a suite file: a JSON array of task records.
pub fn parse_suite(text: &str) -> Result<Vec<TaskSpec>, SuiteParseError> {
    let tasks: Vec<TaskSpec> = serde_json::from_str(text).map_err(|e| SuiteParseError {
        detail: e.to_string(),
    })?;
    if tasks.is_empty() {
        return Err(SuiteParseError {
            detail: "suite contains no tasks".to_string(),
        });
    }
    for task in &tasks {
        task.validate()?;
    }
    Ok(tasks)
}

#[derive(Debug, Error, PartialEq)]
#[error("suite parse error: {detail}")]
pub struct SuiteParseError {
    pub detail: String,
}
