//! Guideline synthesis: N generator draws followed by best-of-N selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    confidence_from_label, GuidelineMode, StepOutcome, StreamLabel, TraceStep, TriggerEvent,
};
use crate::gateway::{ContractValue, Gateway, GatewayError, RubricKind};

/// A candidate guideline fresh out of the generator, before classification.
/// Drafts always carry non-empty text; explicit no-improvement responses are
/// filtered out before this type is constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineDraft {
    pub text: String,
    pub rationale: String,
    /// Initial confidence mapped from the generator's label.
    pub confidence: f64,
    pub mode: GuidelineMode,
    pub perspective: StreamLabel,
    pub candidate_index: usize,
}

/// Everything the generator and selector rubrics need to know about the
/// triggering step. The orchestrator assembles this once per trigger.
#[derive(Debug, Clone)]
pub struct SynthesisContext<'a> {
    pub agent_name: &'a str,
    pub agent_role: &'a str,
    pub task_instruction: &'a str,
    pub step: &'a TraceStep,
    pub trigger: &'a TriggerEvent,
    pub current_system_prompt: &'a str,
    /// Texts of every guideline currently assembled into the prompt
    /// (strategic and tactical), so the generator avoids duplicates.
    pub applied_rules: &'a [String],
    pub perspective: &'a StreamLabel,
    /// Which enhancement rubric this stream's persona uses.
    pub enhancement_rubric: RubricKind,
}

impl SynthesisContext<'_> {
    fn rubric(&self) -> RubricKind {
        match self.trigger.mode {
            GuidelineMode::Corrective => RubricKind::CorrectiveSynthesis,
            GuidelineMode::Enhancement => self.enhancement_rubric,
        }
    }

    /// The triggering step's action and observation, each capped at 2,000
    /// characters. Corrective summaries lead with the untruncated error
    /// fields — the error text is the signal.
    pub fn last_step_summary(&self) -> String {
        const STEP_FIELD_BUDGET: usize = 2000;
        let clip = |s: &str| -> String {
            if s.chars().count() <= STEP_FIELD_BUDGET {
                s.to_string()
            } else {
                let mut cut: String = s.chars().take(STEP_FIELD_BUDGET).collect();
                cut.push('…');
                cut
            }
        };
        let mut out = String::new();
        if self.trigger.mode == GuidelineMode::Corrective {
            out.push_str(&format!(
                "Error Type: {}\nError Message: {}\n",
                self.step.error_type.as_deref().unwrap_or("unknown"),
                self.step.error_message.as_deref().unwrap_or(""),
            ));
        }
        out.push_str(&format!(
            "Action: {}\nObservation: {}",
            clip(&self.step.action),
            clip(&self.step.observation),
        ));
        out
    }

    fn applied_rules_binding(&self) -> String {
        if self.applied_rules.is_empty() {
            return "(none)".to_string();
        }
        self.applied_rules
            .iter()
            .map(|r| format!("- {r}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn generator_bindings(&self) -> BTreeMap<String, String> {
        let mut bindings = BTreeMap::new();
        bindings.insert("agent_name".to_string(), self.agent_name.to_string());
        bindings.insert("agent_role".to_string(), self.agent_role.to_string());
        bindings.insert("task".to_string(), self.task_instruction.to_string());
        bindings.insert("last_step_summary".to_string(), self.last_step_summary());
        bindings.insert(
            "current_system_prompt".to_string(),
            self.current_system_prompt.to_string(),
        );
        bindings.insert("applied_rules".to_string(), self.applied_rules_binding());
        match self.trigger.mode {
            GuidelineMode::Corrective => {
                bindings.insert(
                    "error_type".to_string(),
                    self.step.error_type.clone().unwrap_or_else(|| "unknown".to_string()),
                );
                bindings.insert(
                    "error_message".to_string(),
                    self.step.error_message.clone().unwrap_or_default(),
                );
            }
            GuidelineMode::Enhancement => {
                bindings.insert("step_number".to_string(), self.step.step_number.to_string());
            }
        }
        bindings
    }

    fn issue_type(&self) -> String {
        match self.trigger.mode {
            GuidelineMode::Corrective => self
                .step
                .error_type
                .clone()
                .unwrap_or_else(|| "error".to_string()),
            GuidelineMode::Enhancement => "enhancement_opportunity".to_string(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthesisError {
    /// Every generator call errored (distinct from every call returning
    /// no-improvement, which is an empty success).
    #[error("all {attempted} candidate calls failed; last error: {last_error}")]
    AllCandidatesFailed { attempted: usize, last_error: String },
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Issues `n` independent generator calls and returns the surviving drafts.
///
/// No-improvement responses and calls that still fail to decode after the
/// single retry are dropped; between zero and `n` drafts come back. Only
/// when every call errors does this fail.
pub fn synthesize_candidates(
    gateway: &Gateway,
    ctx: &SynthesisContext<'_>,
    n: usize,
) -> Result<Vec<GuidelineDraft>, SynthesisError> {
    assert!(n >= 1, "candidate count must be at least 1");
    debug_assert!(
        ctx.trigger.mode != GuidelineMode::Corrective || ctx.step.outcome == StepOutcome::Error
    );

    let rubric = ctx.rubric();
    let bindings = ctx.generator_bindings();
    let mut drafts = Vec::with_capacity(n);
    let mut failures = 0usize;
    let mut last_error = String::new();
    for ordinal in 0..n {
        match gateway.call_with_retry(rubric, &bindings, ordinal as u32) {
            Ok(ContractValue::Generator(out)) => drafts.push(GuidelineDraft {
                text: out.update_text,
                rationale: out.rationale,
                confidence: confidence_from_label(out.confidence_label),
                mode: ctx.trigger.mode,
                perspective: ctx.perspective.clone(),
                candidate_index: ordinal,
            }),
            Ok(ContractValue::NoImprovement { .. }) => {}
            Ok(other) => {
                failures += 1;
                last_error = format!("unexpected contract value {other:?}");
                log::warn!("generator candidate {ordinal}: {last_error}");
            }
            Err(e) => {
                failures += 1;
                last_error = e.to_string();
                log::warn!("generator candidate {ordinal} failed twice, skipping: {e}");
            }
        }
    }
    if failures == n {
        return Err(SynthesisError::AllCandidatesFailed {
            attempted: n,
            last_error,
        });
    }
    Ok(drafts)
}

fn render_candidates(candidates: &[GuidelineDraft]) -> String {
    let mut out = String::new();
    for (i, c) in candidates.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!("Candidate {i}:\n{}\nRationale: {}", c.text, c.rationale));
    }
    out
}

/// Picks the best draft. A single candidate short-circuits without any
/// provider call; an out-of-range selected index falls back to the first
/// candidate with a warning.
pub fn select_best(
    gateway: &Gateway,
    candidates: &[GuidelineDraft],
    ctx: &SynthesisContext<'_>,
) -> Result<GuidelineDraft, SynthesisError> {
    match candidates {
        [] => Err(SynthesisError::EmptyCandidates),
        [only] => Ok(only.clone()),
        _ => {
            let mut bindings = BTreeMap::new();
            bindings.insert("agent_name".to_string(), ctx.agent_name.to_string());
            bindings.insert("agent_role".to_string(), ctx.agent_role.to_string());
            bindings.insert("task".to_string(), ctx.task_instruction.to_string());
            bindings.insert("issue_type".to_string(), ctx.issue_type());
            bindings.insert("issue_details".to_string(), ctx.last_step_summary());
            bindings.insert(
                "current_system_prompt".to_string(),
                ctx.current_system_prompt.to_string(),
            );
            bindings.insert("candidates".to_string(), render_candidates(candidates));

            let value = gateway.call_with_retry(RubricKind::Selector, &bindings, 0)?;
            let index = match value {
                ContractValue::Selector(out) => out.selected_index,
                other => {
                    return Err(SynthesisError::Gateway(GatewayError::MalformedOutput {
                        kind: RubricKind::Selector.tag().to_string(),
                        detail: format!("unexpected contract value {other:?}"),
                    }))
                }
            };
            let chosen = candidates.get(index).unwrap_or_else(|| {
                log::warn!(
                    "selector chose index {index} of {} candidates; falling back to 0",
                    candidates.len()
                );
                &candidates[0]
            });
            Ok(chosen.clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CompletionRequest, FnProvider};
    use chrono::TimeZone;
    use chrono::Utc;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn error_step() -> TraceStep {
        TraceStep {
            step_number: 1,
            agent_name: "browser".to_string(),
            action: "fetch page".to_string(),
            observation: "".to_string(),
            outcome: StepOutcome::Error,
            error_type: Some("HTTP403".to_string()),
            error_message: Some("403 Forbidden".to_string()),
            timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 1).unwrap(),
        }
    }

    fn success_step() -> TraceStep {
        TraceStep {
            step_number: 2,
            agent_name: "browser".to_string(),
            action: "search('walks')".to_string(),
            observation: "few results".to_string(),
            outcome: StepOutcome::Success,
            error_type: None,
            error_message: None,
            timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 2).unwrap(),
        }
    }

    fn corrective_trigger() -> TriggerEvent {
        TriggerEvent {
            mode: GuidelineMode::Corrective,
            step_ref: 1,
            agent_name: "browser".to_string(),
        }
    }

    fn enhancement_trigger() -> TriggerEvent {
        TriggerEvent {
            mode: GuidelineMode::Enhancement,
            step_ref: 2,
            agent_name: "browser".to_string(),
        }
    }

    fn ctx<'a>(step: &'a TraceStep, trigger: &'a TriggerEvent, applied: &'a [String]) -> SynthesisContext<'a> {
        SynthesisContext {
            agent_name: "browser",
            agent_role: "navigates the web",
            task_instruction: "find the report",
            step,
            trigger,
            current_system_prompt: "You are a browser agent.",
            applied_rules: applied,
            perspective: &StreamLabel::Efficiency,
            enhancement_rubric: RubricKind::EnhancementEfficiency,
        }
    }

    fn gateway_from(f: impl Fn(&CompletionRequest) -> Result<String, GatewayError> + Send + Sync + 'static) -> Gateway {
        Gateway::new(Box::new(FnProvider(f)))
    }

    #[test]
    fn two_distinct_fixtures_yield_two_drafts() {
        let gateway = gateway_from(|req| {
            Ok(format!(
                r#"{{"update_text":"rule variant {}","rationale":"r","confidence":"high"}}"#,
                req.sample_ordinal
            ))
        });
        let step = error_step();
        let trigger = corrective_trigger();
        let drafts = synthesize_candidates(&gateway, &ctx(&step, &trigger, &[]), 2).unwrap();
        assert_eq!(drafts.len(), 2);
        assert_ne!(drafts[0].text, drafts[1].text);
        assert_eq!(drafts[0].confidence, 0.90);
        assert_eq!(drafts[0].mode, GuidelineMode::Corrective);
    }

    #[test]
    fn no_improvement_responses_are_dropped_not_errors() {
        let gateway = gateway_from(|req| {
            if req.sample_ordinal == 0 {
                Ok(r#"{"update_text":"","rationale":"No improvement needed","confidence":"low"}"#.to_string())
            } else {
                Ok(r#"{"update_text":"batch the queries","rationale":"r","confidence":"medium"}"#.to_string())
            }
        });
        let step = success_step();
        let trigger = enhancement_trigger();
        let drafts = synthesize_candidates(&gateway, &ctx(&step, &trigger, &[]), 2).unwrap();
        assert_eq!(drafts.len(), 1);
        assert_eq!(drafts[0].text, "batch the queries");
    }

    #[test]
    fn all_no_improvement_is_an_empty_success() {
        let gateway = gateway_from(|_| {
            Ok(r#"{"update_text":"","rationale":"fine","confidence":"low"}"#.to_string())
        });
        let step = success_step();
        let trigger = enhancement_trigger();
        let drafts = synthesize_candidates(&gateway, &ctx(&step, &trigger, &[]), 2).unwrap();
        assert!(drafts.is_empty());
    }

    #[test]
    fn persistent_malformed_output_fails_all_candidates() {
        let gateway = gateway_from(|_| Ok("nonsense".to_string()));
        let step = error_step();
        let trigger = corrective_trigger();
        let err = synthesize_candidates(&gateway, &ctx(&step, &trigger, &[]), 2).unwrap_err();
        assert!(matches!(err, SynthesisError::AllCandidatesFailed { attempted: 2, .. }));
    }

    #[test]
    fn corrective_summary_leads_with_error_fields() {
        let step = error_step();
        let trigger = corrective_trigger();
        let summary = ctx(&step, &trigger, &[]).last_step_summary();
        assert!(summary.starts_with("Error Type: HTTP403\nError Message: 403 Forbidden"));
        assert!(summary.contains("Action: fetch page"));
    }

    #[test]
    fn applied_rules_render_as_bullets() {
        let step = error_step();
        let trigger = corrective_trigger();
        let applied = vec!["rule a".to_string(), "rule b".to_string()];
        let bound = ctx(&step, &trigger, &applied).generator_bindings();
        assert_eq!(bound["applied_rules"], "- rule a\n- rule b");
    }

    #[test]
    fn single_candidate_selected_without_provider_call() {
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = Arc::clone(&calls);
        let gateway = gateway_from(move |_| {
            counter.fetch_add(1, Ordering::SeqCst);
            Ok(String::new())
        });
        let step = error_step();
        let trigger = corrective_trigger();
        let only = GuidelineDraft {
            text: "the one".to_string(),
            rationale: "r".to_string(),
            confidence: 0.9,
            mode: GuidelineMode::Corrective,
            perspective: StreamLabel::Efficiency,
            candidate_index: 0,
        };
        let chosen = select_best(&gateway, std::slice::from_ref(&only), &ctx(&step, &trigger, &[])).unwrap();
        assert_eq!(chosen, only);
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn selector_index_picks_the_candidate() {
        let gateway = gateway_from(|_| Ok(r#"{"selected_index": 1, "rationale": "better"}"#.to_string()));
        let step = error_step();
        let trigger = corrective_trigger();
        let candidates = vec![
            GuidelineDraft {
                text: "first".into(),
                rationale: "r".into(),
                confidence: 0.9,
                mode: GuidelineMode::Corrective,
                perspective: StreamLabel::Efficiency,
                candidate_index: 0,
            },
            GuidelineDraft {
                text: "second".into(),
                rationale: "r".into(),
                confidence: 0.9,
                mode: GuidelineMode::Corrective,
                perspective: StreamLabel::Efficiency,
                candidate_index: 1,
            },
        ];
        let chosen = select_best(&gateway, &candidates, &ctx(&step, &trigger, &[])).unwrap();
        assert_eq!(chosen.text, "second");
    }

    #[test]
    fn out_of_range_selector_index_falls_back_to_first() {
        let gateway = gateway_from(|_| Ok(r#"{"selected_index": 5, "rationale": "confused"}"#.to_string()));
        let step = error_step();
        let trigger = corrective_trigger();
        let candidates = vec![
            GuidelineDraft {
                text: "first".into(),
                rationale: "r".into(),
                confidence: 0.9,
                mode: GuidelineMode::Corrective,
                perspective: StreamLabel::Efficiency,
                candidate_index: 0,
            },
            GuidelineDraft {
                text: "second".into(),
                rationale: "r".into(),
                confidence: 0.9,
                mode: GuidelineMode::Corrective,
                perspective: StreamLabel::Efficiency,
                candidate_index: 1,
            },
        ];
        let chosen = select_best(&gateway, &candidates, &ctx(&step, &trigger, &[])).unwrap();
        assert_eq!(chosen.text, "first");
    }

    #[test]
    fn empty_candidates_is_an_error() {
        let gateway = gateway_from(|_| Ok(String::new()));
        let step = error_step();
        let trigger = corrective_trigger();
        let err = select_best(&gateway, &[], &ctx(&step, &trigger, &[])).unwrap_err();
        assert_eq!(err, SynthesisError::EmptyCandidates);
    }

    #[test]
    fn selection_output_is_always_a_member_of_the_input() {
        // Fuzz the selector output over many shapes; membership must hold.
        let outputs = [
            r#"{"selected_index": 0, "rationale": ""}"#,
            r#"{"selected_index": 1, "rationale": ""}"#,
            r#"{"selected_index": 2, "rationale": ""}"#,
            r#"{"selected_index": 999, "rationale": ""}"#,
        ];
        let step = error_step();
        let trigger = corrective_trigger();
        let candidates: Vec<GuidelineDraft> = (0..3)
            .map(|i| GuidelineDraft {
                text: format!("cand-{i}"),
                rationale: "r".into(),
                confidence: 0.9,
                mode: GuidelineMode::Corrective,
                perspective: StreamLabel::Efficiency,
                candidate_index: i,
            })
            .collect();
        for raw in outputs {
            let owned = raw.to_string();
            let gateway = gateway_from(move |_| Ok(owned.clone()));
            let chosen = select_best(&gateway, &candidates, &ctx(&step, &trigger, &[])).unwrap();
            assert!(candidates.contains(&chosen));
        }
    }
}
