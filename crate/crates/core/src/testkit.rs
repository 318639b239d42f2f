//! Deterministic fixture support: a rule-driven meta-agent responder, a
//! canned consolidation scenario, and synthetic suite builders.
//!
//! The usual workflow is record-then-replay: drive the engine once with
//! [`HintResponder`] wrapped in a `RecordingProvider` to author a fixture
//! directory, then run the scripted provider over that directory for exact,
//! assertable replays.

use std::collections::BTreeMap;
use std::path::Path;

use crate::domain::{
    Guideline, GuidelineDomain, GuidelineId, GuidelineMode, GuidelineScope, StreamLabel,
};
use crate::gateway::{
    fixture_file_name, CompletionRequest, GatewayError, Provider, RubricKind, RubricTemplate,
};
use crate::memory::render_rules_list;
use crate::orchestrator::{InjectorKind, InjectorSpec, TaskSpec};

/// Meta-agent stand-in that answers every rubric deterministically.
///
/// Generator prompts are answered by lifting the `Hint: …` sentence the
/// synthetic environment plants in error messages and observations; prompts
/// without a hint get a no-improvement response. Blind spots suppress
/// hint-lifting for chosen (rubric, marker) combinations so tests can make
/// individual streams fail individual tasks.
#[derive(Debug, Default, Clone)]
pub struct HintResponder {
    blind_spots: Vec<(String, String)>,
}

impl HintResponder {
    pub fn new() -> HintResponder {
        HintResponder::default()
    }

    /// Requests whose tag starts with `tag_prefix` and whose prompt text
    /// contains `marker` are answered with a no-improvement response.
    pub fn with_blind_spot(
        mut self,
        tag_prefix: impl Into<String>,
        marker: impl Into<String>,
    ) -> HintResponder {
        self.blind_spots.push((tag_prefix.into(), marker.into()));
        self
    }

    fn is_blind(&self, request: &CompletionRequest) -> bool {
        self.blind_spots.iter().any(|(tag_prefix, marker)| {
            request.tag.starts_with(tag_prefix.as_str()) && request.user_text.contains(marker.as_str())
        })
    }

    fn generator_response(&self, request: &CompletionRequest) -> String {
        if self.is_blind(request) {
            return no_improvement();
        }
        match extract_hint(&request.user_text) {
            Some(hint) => format!(
                r#"{{"update_text": "{}.", "rationale": "Derived from execution feedback.", "confidence": "high"}}"#,
                escape_json(&hint)
            ),
            None => no_improvement(),
        }
    }

    fn classifier_response(&self, request: &CompletionRequest) -> String {
        let text = &request.user_text;
        let update = slice_between(text, "Update: ", "\nRationale:").unwrap_or_default();
        let rules_section = text
            .split("Existing STRATEGIC rules:")
            .nth(1)
            .unwrap_or_default();
        let is_duplicate = !update.is_empty() && rules_section.contains(update);
        let domain = classify_domain(update);
        format!(
            r#"{{"is_duplicate": {is_duplicate}, "scope": "strategic", "confidence": 0.9, "domain": "{domain}", "reason": "Deterministic classification."}}"#
        )
    }

    fn analyzer_response(&self, request: &CompletionRequest) -> String {
        let count = slice_between(&request.user_text, "Analyze these ", " rules")
            .and_then(|s| s.trim().parse::<usize>().ok())
            .unwrap_or(0);
        if count >= 2 {
            // Always offer one valid reduction: merge the last two rules.
            format!(
                r#"{{"consolidation": [[{}, {}]], "subsumption": [], "conflicts": []}}"#,
                count - 1,
                count
            )
        } else {
            r#"{"consolidation": [], "subsumption": [], "conflicts": []}"#.to_string()
        }
    }

    fn merge_response(&self, request: &CompletionRequest, opener: &str) -> String {
        let block = request
            .user_text
            .split(opener)
            .nth(1)
            .unwrap_or_default();
        let texts: Vec<String> = block
            .lines()
            .filter_map(strip_list_number)
            .collect();
        let merged = if texts.is_empty() {
            "merged rule".to_string()
        } else {
            texts.join(" & ")
        };
        format!(
            r#"{{"rule": "{}", "rationale": "Combines the source rules."}}"#,
            escape_json(&merged)
        )
    }

    fn conflict_response(&self, request: &CompletionRequest) -> String {
        let texts: Vec<&str> = request
            .user_text
            .lines()
            .filter_map(|line| line.strip_prefix("  Text: "))
            .collect();
        format!(
            r#"{{"rule": "{}", "rationale": "Reconciles both rules."}}"#,
            escape_json(&texts.join(" & "))
        )
    }
}

fn no_improvement() -> String {
    r#"{"update_text": "", "rationale": "No improvement needed", "confidence": "low"}"#.to_string()
}

fn escape_json(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn slice_between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let end = text[start..].find(close)? + start;
    Some(&text[start..end])
}

/// First `Hint: …` sentence in a prompt (up to the next period).
fn extract_hint(text: &str) -> Option<String> {
    let rest = &text[text.find("Hint: ")? + "Hint: ".len()..];
    let end = rest.find('.').unwrap_or(rest.len());
    let hint = rest[..end].trim();
    (!hint.is_empty()).then(|| hint.to_string())
}

fn strip_list_number(line: &str) -> Option<String> {
    let trimmed = line.trim();
    let dot = trimmed.find(". ")?;
    trimmed[..dot].parse::<usize>().ok()?;
    Some(trimmed[dot + 2..].to_string())
}

fn classify_domain(update: &str) -> &'static str {
    let lower = update.to_lowercase();
    if lower.contains("tool") || lower.contains("import") || lower.contains("module") {
        "tool_usage"
    } else if lower.contains("archive") || lower.contains("retry") || lower.contains("fallback") {
        "error_handling"
    } else if lower.contains("search") || lower.contains("synonym") || lower.contains("batch") {
        "efficiency"
    } else if lower.contains("validate") || lower.contains("verify") {
        "data_validation"
    } else {
        "general"
    }
}

impl Provider for HintResponder {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let kind = RubricKind::from_tag(&request.tag).ok_or_else(|| GatewayError::ProviderUnavailable {
            detail: format!("unknown rubric tag {}", request.tag),
        })?;
        Ok(match kind {
            RubricKind::CorrectiveSynthesis
            | RubricKind::EnhancementEfficiency
            | RubricKind::EnhancementThoroughness => self.generator_response(request),
            RubricKind::Selector => {
                r#"{"selected_index": 0, "rationale": "First candidate is most specific."}"#.to_string()
            }
            RubricKind::Classifier => self.classifier_response(request),
            RubricKind::Analyzer => self.analyzer_response(request),
            RubricKind::Consolidation => self.merge_response(request, "Original rules to merge:\n"),
            RubricKind::SubsumptionVerify => {
                r#"{"subsumed": true, "reasoning": "The specific rule is a special case."}"#.to_string()
            }
            RubricKind::ConflictResolve => self.conflict_response(request),
        })
    }
}

/// The canned 11-rule efficiency bucket used by the consolidation demo and
/// its replay tests: batch/caching/local-computation/conciseness/early-stop
/// rules plus one fresh batching rule that tips the bucket over its cap.
pub fn sample_efficiency_bucket() -> Vec<Guideline> {
    const TEXTS: [&str; 11] = [
        "Use batch operations instead of sequential queries when fetching multiple items.",
        "When searching for multiple entities, combine them into a single query.",
        "Avoid redundant API calls by caching results locally.",
        "Cache intermediate results to avoid re-computation.",
        "Prefer local computation over tool calls for simple operations.",
        "Do not invoke Python interpreter for basic math like addition or subtraction.",
        "Limit verbose explanations in final answers to under 100 words.",
        "Keep final outputs concise; avoid unnecessary elaboration.",
        "When a search returns sufficient results, stop querying additional sources.",
        "Use early termination when the answer is found; do not continue searching.",
        "Batch similar file reads into a single operation.",
    ];
    TEXTS
        .iter()
        .enumerate()
        .map(|(i, text)| Guideline {
            id: GuidelineId::derive("worker", "seed", (i + 1) as u32, text),
            text: text.to_string(),
            rationale: format!("seed rule {}", i + 1),
            confidence: 0.9,
            scope: GuidelineScope::Strategic,
            domain: GuidelineDomain::Efficiency,
            mode: GuidelineMode::Enhancement,
            source_agent: "worker".to_string(),
            source_task: "seed".to_string(),
            created_at_step: (i + 1) as u32,
            stream: StreamLabel::Efficiency,
            merged_from: Vec::new(),
        })
        .collect()
}

/// The five texts the sample bucket consolidates down to.
pub fn sample_efficiency_expected() -> Vec<&'static str> {
    vec![
        "Use batch operations instead of sequential queries when fetching multiple items.",
        "Cache intermediate results and API responses to avoid redundant computation and calls.",
        "Prefer local computation over tool calls for simple operations.",
        "Keep final outputs concise (under 100 words); avoid unnecessary elaboration.",
        "Use early termination when sufficient information is found; do not continue searching.",
    ]
}

fn write_fixture(dir: &Path, request: &CompletionRequest, response: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(fixture_file_name(request)), response)
}

fn optimizer_request(kind: RubricKind, bindings: &BTreeMap<String, String>) -> CompletionRequest {
    let template = RubricTemplate::builtin(kind);
    let user_text = crate::gateway::render_prompt(template, bindings).expect("bindings cover template");
    CompletionRequest {
        system_text: String::new(),
        user_text,
        temperature: 0.0,
        max_output_tokens: 0,
        tag: kind.tag().to_string(),
        sample_ordinal: 0,
    }
}

/// Authors the fixture set that drives [`sample_efficiency_bucket`] through
/// one optimization pass: the analysis (1 subsumes 2 and 11, 5 subsumes 6;
/// merge 3+4, 7+8, 9+10), three verifications, and three merges.
pub fn sample_efficiency_fixtures(dir: &Path) -> std::io::Result<()> {
    let bucket = sample_efficiency_bucket();
    let expected = sample_efficiency_expected();

    let mut analyzer_bindings = BTreeMap::new();
    analyzer_bindings.insert("count".to_string(), bucket.len().to_string());
    analyzer_bindings.insert("rules_text".to_string(), render_rules_list(&bucket));
    write_fixture(
        dir,
        &optimizer_request(RubricKind::Analyzer, &analyzer_bindings),
        r#"{"consolidation": [[3, 4], [7, 8], [9, 10]], "subsumption": [[1, 2], [1, 11], [5, 6]], "conflicts": []}"#,
    )?;

    for (general, specific) in [(1usize, 2usize), (1, 11), (5, 6)] {
        let mut bindings = BTreeMap::new();
        bindings.insert("general_rule".to_string(), bucket[general - 1].text.clone());
        bindings.insert("specific_rule".to_string(), bucket[specific - 1].text.clone());
        write_fixture(
            dir,
            &optimizer_request(RubricKind::SubsumptionVerify, &bindings),
            r#"{"subsumed": true, "reasoning": "The specific rule is fully covered."}"#,
        )?;
    }

    for (group, merged) in [
        (vec![3usize, 4], expected[1]),
        (vec![7, 8], expected[3]),
        (vec![9, 10], expected[4]),
    ] {
        let sources: Vec<Guideline> = group.iter().map(|&i| bucket[i - 1].clone()).collect();
        let mut bindings = BTreeMap::new();
        bindings.insert("rules_text".to_string(), render_rules_list(&sources));
        write_fixture(
            dir,
            &optimizer_request(RubricKind::Consolidation, &bindings),
            &format!(r#"{{"rule": "{}", "rationale": "Merged overlapping guidance."}}"#, merged),
        )?;
    }
    Ok(())
}

fn injected_task(task_id: &str, kind: InjectorKind, remedy: String, max_steps: u32) -> TaskSpec {
    let mut task = TaskSpec::new(
        task_id,
        format!("Task {task_id}: retrieve the requested records and submit the answer."),
    );
    task.max_steps = max_steps;
    task.injector = Some(InjectorSpec {
        kind,
        remedy_phrase: remedy,
    });
    task
}

/// A pitfall suite: `n` tasks cycling through the error-loop, wrong-tool,
/// and single-term-search injectors, each with a task-unique remedy phrase
/// so one task's learned guideline cannot unlock another task.
pub fn pitfall_suite(n: usize, max_steps: u32) -> Vec<TaskSpec> {
    (0..n)
        .map(|i| {
            let task_id = format!("T{:02}", i + 1);
            match i % 3 {
                0 => injected_task(
                    &task_id,
                    InjectorKind::ErrorLoop,
                    format!("consult the archive mirror for {task_id}"),
                    max_steps,
                ),
                1 => injected_task(
                    &task_id,
                    InjectorKind::WrongToolName,
                    format!("use the data_lookup_tool for {task_id}"),
                    max_steps,
                ),
                _ => injected_task(
                    &task_id,
                    InjectorKind::SingleTermSearch,
                    format!("expand the search with synonym variants for {task_id}"),
                    max_steps,
                ),
            }
        })
        .collect()
}
