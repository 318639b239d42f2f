//! Synthetic test environment: a scripted agent with fault injectors.
//!
//! Each injector reproduces a failure family seen in real agent logs — a
//! misnamed tool, a disallowed import, a blocked URL retried forever, a
//! single-keyword search that never finds anything. The injected behavior
//! embeds the remedy in the step's error message or observation (real error
//! logs usually contain the fix), and the agent escapes the failure only
//! once the assembled prompt contains the task's remedy phrase.
//!
//! Everything is a pure function of (task, prompt text, history), with
//! fixed timestamps, so whole-suite runs replay byte-identically.

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::assembly::PromptState;
use crate::domain::{ExecutionTrace, StepOutcome, TraceStep};
use crate::orchestrator::adapter::{AdapterFault, AgentAdapter, TaskSpec};

/// The fault families the environment can inject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectorKind {
    WrongToolName,
    ForbiddenImport,
    SingleTermSearch,
    ErrorLoop,
}

impl InjectorKind {
    /// Whether the injected behavior raises step errors (as opposed to
    /// succeeding uselessly, which only enhancement analysis can catch).
    pub fn raises_errors(&self) -> bool {
        !matches!(self, InjectorKind::SingleTermSearch)
    }
}

/// Injector declaration carried by a task: which fault, and which phrase in
/// the assembled prompt counts as the learned remedy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectorSpec {
    pub kind: InjectorKind,
    pub remedy_phrase: String,
}

struct Behavior {
    faulty_action: &'static str,
    error_type: Option<&'static str>,
    faulty_message: &'static str,
    corrected_action: &'static str,
    corrected_observation: &'static str,
}

fn behavior(kind: InjectorKind) -> Behavior {
    match kind {
        InjectorKind::WrongToolName => Behavior {
            faulty_action: "call_tool lookup(query=...)",
            error_type: Some("ToolNotFound"),
            faulty_message: "Unknown tool 'lookup'. Valid tools: ['data_lookup_tool', 'search', 'python_exec'].",
            corrected_action: "call_tool data_lookup_tool(query=...)",
            corrected_observation: "Lookup returned the requested records.",
        },
        InjectorKind::ForbiddenImport => Behavior {
            faulty_action: "python_exec: import pandas as pd",
            error_type: Some("ForbiddenImport"),
            faulty_message: "ModuleNotFoundError: 'pandas' is not allowed in this sandbox. Allowed modules: collections, re, math, json.",
            corrected_action: "python_exec: import json",
            corrected_observation: "Parsed the records with allowlisted modules.",
        },
        InjectorKind::ErrorLoop => Behavior {
            faulty_action: "fetch_url https://example.com/source",
            error_type: Some("AccessDenied"),
            faulty_message: "HTTP 403 Forbidden for https://example.com/source. The page blocks automated clients.",
            corrected_action: "fetch_url https://web.archive.org/web/https://example.com/source",
            corrected_observation: "Retrieved an archived copy of the page.",
        },
        InjectorKind::SingleTermSearch => Behavior {
            faulty_action: "search('walks')",
            error_type: None,
            faulty_message: "Search for 'walks' returned 0 relevant results.",
            corrected_action: "search('walks OR base on balls OR BB')",
            corrected_observation: "Search found the statistics table.",
        },
    }
}

const PLAIN_WORK_ACTION: &str = "gather_information";

/// Deterministic scripted agent.
pub struct SyntheticAgent {
    name: String,
    role: String,
    base_prompt: String,
}

impl SyntheticAgent {
    pub fn new(name: impl Into<String>) -> SyntheticAgent {
        let name = name.into();
        let base_prompt = format!(
            "You are {name}, a scripted task executor. Use the available tools to \
             complete the task, then call submit_final_answer."
        );
        SyntheticAgent {
            name,
            role: "scripted task executor".to_string(),
            base_prompt,
        }
    }

    fn timestamp(step_number: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + chrono::Duration::seconds(i64::from(step_number))
    }

    fn step(
        &self,
        step_number: u32,
        action: String,
        observation: String,
        outcome: StepOutcome,
        error_type: Option<String>,
        error_message: Option<String>,
    ) -> TraceStep {
        TraceStep {
            step_number,
            agent_name: self.name.clone(),
            action,
            observation,
            outcome,
            error_type,
            error_message,
            timestamp: Self::timestamp(step_number),
        }
    }

    fn submit_step(&self, step_number: u32, task: &TaskSpec) -> TraceStep {
        self.step(
            step_number,
            format!("submit_final_answer: {}", task.task_id),
            "Final answer recorded.".to_string(),
            StepOutcome::Success,
            None,
            None,
        )
    }
}

/// Case-insensitive remedy check over the full assembled prompt bundle.
fn prompt_contains(prompt: &PromptState, phrase: &str) -> bool {
    prompt.bundle().to_lowercase().contains(&phrase.to_lowercase())
}

impl AgentAdapter for SyntheticAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn role(&self) -> &str {
        &self.role
    }

    fn base_prompt(&self) -> &str {
        &self.base_prompt
    }

    fn act(
        &mut self,
        prompt: &PromptState,
        task: &TaskSpec,
        history: &ExecutionTrace,
    ) -> Result<TraceStep, AdapterFault> {
        let step_number = history.steps.last().map(|s| s.step_number + 1).unwrap_or(1);

        let Some(injector) = &task.injector else {
            let worked = history
                .steps
                .iter()
                .any(|s| s.outcome == StepOutcome::Success && s.action == PLAIN_WORK_ACTION);
            return Ok(if worked {
                self.submit_step(step_number, task)
            } else {
                self.step(
                    step_number,
                    PLAIN_WORK_ACTION.to_string(),
                    "Collected the needed facts.".to_string(),
                    StepOutcome::Success,
                    None,
                    None,
                )
            });
        };

        let b = behavior(injector.kind);
        let corrected_done = history
            .steps
            .iter()
            .any(|s| s.outcome == StepOutcome::Success && s.action == b.corrected_action);
        if corrected_done {
            return Ok(self.submit_step(step_number, task));
        }
        if prompt_contains(prompt, &injector.remedy_phrase) {
            return Ok(self.step(
                step_number,
                b.corrected_action.to_string(),
                b.corrected_observation.to_string(),
                StepOutcome::Success,
                None,
                None,
            ));
        }
        // Unremedied: repeat the injected fault verbatim, with the fix
        // spelled out in the feedback the agent is ignoring.
        let message = format!("{} Hint: {}.", b.faulty_message, injector.remedy_phrase);
        Ok(match injector.kind {
            InjectorKind::SingleTermSearch => self.step(
                step_number,
                b.faulty_action.to_string(),
                message,
                StepOutcome::Success,
                None,
                None,
            ),
            _ => self.step(
                step_number,
                b.faulty_action.to_string(),
                String::new(),
                StepOutcome::Error,
                b.error_type.map(str::to_string),
                Some(message),
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, PlacementStrategy};

    fn task(kind: InjectorKind, remedy: &str) -> TaskSpec {
        let mut t = TaskSpec::new("t1", "find the data");
        t.injector = Some(InjectorSpec {
            kind,
            remedy_phrase: remedy.to_string(),
        });
        t
    }

    fn prompt(base: &str) -> PromptState {
        assemble(base, &[], &[], PlacementStrategy::SystemAll)
    }

    #[test]
    fn unremedied_error_injector_repeats_the_same_error() {
        let mut agent = SyntheticAgent::new("worker");
        let t = task(InjectorKind::ErrorLoop, "archive.org");
        let p = prompt("base");
        let mut trace = ExecutionTrace::new("t1");
        for _ in 0..3 {
            let step = agent.act(&p, &t, &trace).unwrap();
            assert_eq!(step.outcome, StepOutcome::Error);
            assert!(step.error_message.as_deref().unwrap().contains("Hint: archive.org"));
            trace.append(step).unwrap();
        }
        assert_eq!(trace.repeated_error_steps(), 2);
    }

    #[test]
    fn remedy_in_prompt_unblocks_and_completes_in_two_steps() {
        let mut agent = SyntheticAgent::new("worker");
        let t = task(InjectorKind::WrongToolName, "data_lookup_tool");
        let p = prompt("Always use the data_lookup_tool for record queries.");
        let mut trace = ExecutionTrace::new("t1");
        let first = agent.act(&p, &t, &trace).unwrap();
        assert_eq!(first.outcome, StepOutcome::Success);
        trace.append(first).unwrap();
        let second = agent.act(&p, &t, &trace).unwrap();
        assert!(second.action.starts_with("submit_final_answer"));
    }

    #[test]
    fn remedy_matching_is_case_insensitive_across_the_bundle() {
        let mut agent = SyntheticAgent::new("worker");
        let t = task(InjectorKind::ErrorLoop, "Archive.ORG");
        let mut p = prompt("base");
        p.assembled_user_preamble = "try the archive.org mirror".to_string();
        let trace = ExecutionTrace::new("t1");
        let step = agent.act(&p, &t, &trace).unwrap();
        assert_eq!(step.outcome, StepOutcome::Success);
    }

    #[test]
    fn search_injector_fails_silently_with_successful_steps() {
        let mut agent = SyntheticAgent::new("worker");
        let t = task(InjectorKind::SingleTermSearch, "synonym variants");
        let p = prompt("base");
        let trace = ExecutionTrace::new("t1");
        let step = agent.act(&p, &t, &trace).unwrap();
        assert_eq!(step.outcome, StepOutcome::Success);
        assert!(step.observation.contains("0 relevant results"));
        assert!(step.observation.contains("Hint: synonym variants"));
        assert!(!step.action.starts_with("submit_final_answer"));
    }

    #[test]
    fn plain_tasks_complete_without_any_remedy() {
        let mut agent = SyntheticAgent::new("worker");
        let t = TaskSpec::new("t1", "easy");
        let p = prompt("base");
        let mut trace = ExecutionTrace::new("t1");
        let first = agent.act(&p, &t, &trace).unwrap();
        assert_eq!(first.outcome, StepOutcome::Success);
        trace.append(first).unwrap();
        let second = agent.act(&p, &t, &trace).unwrap();
        assert!(second.action.starts_with("submit_final_answer"));
    }

    #[test]
    fn behavior_is_deterministic_given_task_and_prompt() {
        let t = task(InjectorKind::ForbiddenImport, "import json");
        let p = prompt("base");
        let trace = ExecutionTrace::new("t1");
        let mut a = SyntheticAgent::new("worker");
        let mut b = SyntheticAgent::new("worker");
        assert_eq!(a.act(&p, &t, &trace).unwrap(), b.act(&p, &t, &trace).unwrap());
    }
}
