//! Suite-level reporting: per-task, per-stream results and aggregates.

use serde::{Deserialize, Serialize};

use crate::domain::{Guideline, GuidelineDomain, GuidelineId, GuidelineMode, GuidelineScope, StreamLabel};

/// Compact view of one accepted guideline for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineSummary {
    pub id: GuidelineId,
    pub text: String,
    pub mode: GuidelineMode,
    pub scope: GuidelineScope,
    pub domain: GuidelineDomain,
    pub confidence: f64,
}

impl From<&Guideline> for GuidelineSummary {
    fn from(g: &Guideline) -> GuidelineSummary {
        GuidelineSummary {
            id: g.id.clone(),
            text: g.text.clone(),
            mode: g.mode,
            scope: g.scope,
            domain: g.domain,
            confidence: g.confidence,
        }
    }
}

/// One routing decision as recorded in an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRecord {
    pub step: u32,
    pub mode: GuidelineMode,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<GuidelineDomain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

/// One stream's episode, summarized for the suite report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEpisodeReport {
    pub stream: StreamLabel,
    pub success: bool,
    pub steps_used: usize,
    pub errors_seen: usize,
    pub repeated_error_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_error_step: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at_step: Option<u32>,
    pub guidelines: Vec<GuidelineSummary>,
    pub routing: Vec<RoutingRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

/// One OR-aggregated run of all streams over a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_index: usize,
    pub ensemble_success: bool,
    pub streams: Vec<StreamEpisodeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: String,
    pub success: bool,
    pub runs: Vec<RunReport>,
}

/// Guideline counts for one domain, split by synthesis mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDomainCount {
    pub domain: GuidelineDomain,
    pub corrective: usize,
    pub enhancement: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteAggregate {
    pub tasks_total: usize,
    pub tasks_succeeded: usize,
    pub success_rate: f64,
    pub total_steps: usize,
    pub total_errors: usize,
    pub total_repeated_error_steps: usize,
    pub guidelines_by_domain: Vec<ModeDomainCount>,
    pub corrective_total: usize,
    pub enhancement_total: usize,
}

/// Full result of evaluating a task suite. Two runs of the same suite with
/// the scripted provider and synthetic environment compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub tasks: Vec<TaskReport>,
    pub aggregate: SuiteAggregate,
}

impl SuiteReport {
    pub fn assemble(tasks: Vec<TaskReport>) -> SuiteReport {
        let tasks_total = tasks.len();
        let tasks_succeeded = tasks.iter().filter(|t| t.success).count();
        let mut total_steps = 0;
        let mut total_errors = 0;
        let mut total_repeats = 0;
        let mut counts: Vec<ModeDomainCount> = GuidelineDomain::ALL
            .iter()
            .map(|&domain| ModeDomainCount {
                domain,
                corrective: 0,
                enhancement: 0,
                total: 0,
            })
            .collect();
        for task in &tasks {
            for run in &task.runs {
                for stream in &run.streams {
                    total_steps += stream.steps_used;
                    total_errors += stream.errors_seen;
                    total_repeats += stream.repeated_error_steps;
                    for g in &stream.guidelines {
                        let row = counts
                            .iter_mut()
                            .find(|c| c.domain == g.domain)
                            .expect("all domains present");
                        match g.mode {
                            GuidelineMode::Corrective => row.corrective += 1,
                            GuidelineMode::Enhancement => row.enhancement += 1,
                        }
                        row.total += 1;
                    }
                }
            }
        }
        let corrective_total = counts.iter().map(|c| c.corrective).sum();
        let enhancement_total = counts.iter().map(|c| c.enhancement).sum();
        SuiteReport {
            aggregate: SuiteAggregate {
                tasks_total,
                tasks_succeeded,
                success_rate: if tasks_total == 0 {
                    0.0
                } else {
                    tasks_succeeded as f64 / tasks_total as f64
                },
                total_steps,
                total_errors,
                total_repeated_error_steps: total_repeats,
                guidelines_by_domain: counts,
                corrective_total,
                enhancement_total,
            },
            tasks,
        }
    }

    /// The set of task ids a given stream solved (any run).
    pub fn stream_success_set(&self, stream: &StreamLabel) -> Vec<String> {
        self.tasks
            .iter()
            .filter(|t| {
                t.runs.iter().any(|r| {
                    r.streams
                        .iter()
                        .any(|s| &s.stream == stream && s.success)
                })
            })
            .map(|t| t.task_id.clone())
            .collect()
    }

    /// The set of task ids the ensemble solved.
    pub fn ensemble_success_set(&self) -> Vec<String> {
        self.tasks
            .iter()
            .filter(|t| t.success)
            .map(|t| t.task_id.clone())
            .collect()
    }

    /// Plain-text rendering for terminals and log files.
    pub fn render_text(&self) -> String {
        let a = &self.aggregate;
        let mut out = String::new();
        out.push_str("Suite report\n============\n");
        out.push_str(&format!(
            "Tasks: {}   Succeeded: {}   Success rate: {:.1}%\n",
            a.tasks_total,
            a.tasks_succeeded,
            a.success_rate * 100.0
        ));
        out.push_str(&format!(
            "Total steps: {}   Errors: {}   Repeated-error steps: {}\n\n",
            a.total_steps, a.total_errors, a.total_repeated_error_steps
        ));
        out.push_str("Guidelines by domain (corrective / enhancement / total)\n");
        for row in &a.guidelines_by_domain {
            if row.total == 0 {
                continue;
            }
            out.push_str(&format!(
                "  {:<22} {} / {} / {}\n",
                row.domain.wire_name(),
                row.corrective,
                row.enhancement,
                row.total
            ));
        }
        out.push_str(&format!(
            "  {:<22} {} / {} / {}\n\n",
            "TOTAL",
            a.corrective_total,
            a.enhancement_total,
            a.corrective_total + a.enhancement_total
        ));
        out.push_str("Per-task results\n");
        for task in &self.tasks {
            let mark = if task.success { "ok " } else { "FAIL" };
            out.push_str(&format!("  {:<4} {}", mark, task.task_id));
            for run in &task.runs {
                for stream in &run.streams {
                    out.push_str(&format!(
                        "  [{}: {} in {} steps]",
                        stream.stream,
                        if stream.success { "ok" } else { "fail" },
                        stream.steps_used
                    ));
                }
            }
            out.push('\n');
        }
        out
    }
}
