//! Strategic-memory optimization pipeline.
//!
//! One iteration: an analyzer call maps the bucket's redundancy structure,
//! then conflicts are resolved (pair → merged rule), subsumptions verified
//! and pruned (specific rule removed), and consolidation groups merged.
//! Iterations repeat while the bucket is still above the post-optimization
//! target and the iteration budget (2) has not run out.
//!
//! Rule indices shown to the analyzer are 1-based positions in the bucket
//! at the start of the iteration, so recorded pairs in a report are only
//! meaningful relative to their iteration.
//!
//! Failure policy is fail-open: an analyzer decode failure ends the
//! pipeline with whatever the last completed iteration produced (the
//! original bucket when iteration 1 fails), and single merge/verify call
//! failures skip that item. Anything skipped is flagged in the report; an
//! over-cap bucket simply re-triggers on the next insert.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{Guideline, GuidelineDomain, GuidelineId, GuidelineMode};
use crate::gateway::{AnalyzerOut, ContractValue, Gateway, RubricKind};

/// Caps governing strategic buckets and the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptimizerLimits {
    pub per_domain_cap: usize,
    pub target_after_opt: usize,
    pub max_iterations: usize,
}

impl Default for OptimizerLimits {
    fn default() -> OptimizerLimits {
        OptimizerLimits {
            per_domain_cap: 10,
            target_after_opt: 8,
            max_iterations: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictRecord {
    pub pair: (usize, usize),
    pub merged_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsumptionRecord {
    pub general: usize,
    pub specific: usize,
    pub removed_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationRecord {
    pub group: Vec<usize>,
    pub merged_text: String,
}

/// What one optimization run did to a bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub domain: GuidelineDomain,
    pub before_count: usize,
    pub after_count: usize,
    pub conflicts_resolved: Vec<ConflictRecord>,
    pub subsumptions_pruned: Vec<SubsumptionRecord>,
    pub consolidations_merged: Vec<ConsolidationRecord>,
    pub iterations_used: usize,
    /// Set when any pipeline call failed and its item was skipped
    /// (fail-open); an over-cap bucket flagged here re-triggers later.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// Analyzer output after validation: in-range, deduplicated, and with the
/// category priority enforced (conflicts > subsumption > consolidation; a
/// pair lives in at most one category, consolidation groups are disjoint).
fn validate_analysis(raw: AnalyzerOut, count: usize) -> AnalyzerOut {
    let in_range = |i: usize| (1..=count).contains(&i);
    let unordered = |a: usize, b: usize| (a.min(b), a.max(b));

    let mut conflicts: Vec<(usize, usize)> = Vec::new();
    let mut conflict_pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (a, b) in raw.conflicts {
        if a == b || !in_range(a) || !in_range(b) {
            continue;
        }
        if conflict_pairs.insert(unordered(a, b)) {
            conflicts.push((a, b));
        }
    }

    let mut subsumption: Vec<(usize, usize)> = Vec::new();
    let mut subsumption_pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (general, specific) in raw.subsumption {
        if general == specific || !in_range(general) || !in_range(specific) {
            continue;
        }
        let key = unordered(general, specific);
        if conflict_pairs.contains(&key) {
            continue;
        }
        if subsumption_pairs.insert(key) {
            subsumption.push((general, specific));
        }
    }

    let mut consolidation: Vec<Vec<usize>> = Vec::new();
    let mut claimed: BTreeSet<usize> = BTreeSet::new();
    for group in raw.consolidation {
        let mut members: Vec<usize> = Vec::new();
        for idx in group {
            if in_range(idx) && !members.contains(&idx) && !claimed.contains(&idx) {
                members.push(idx);
            }
        }
        // Enforce pair-exclusivity against the higher-priority categories:
        // if a group contains both ends of a conflict or subsumption pair,
        // the pair's second element leaves the group.
        for &(a, b) in conflict_pairs.iter().chain(subsumption_pairs.iter()) {
            if members.contains(&a) && members.contains(&b) {
                members.retain(|&m| m != b);
            }
        }
        if members.len() >= 2 {
            claimed.extend(members.iter().copied());
            consolidation.push(members);
        }
    }

    AnalyzerOut {
        consolidation,
        subsumption,
        conflicts,
    }
}

/// The numbered rule list shown to the analyzer and consolidation rubrics;
/// indices in their outputs refer to these 1-based positions.
pub fn render_rules_list(rules: &[Guideline]) -> String {
    rules
        .iter()
        .enumerate()
        .map(|(i, g)| format!("{}. {}", i + 1, g.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Builds the rule that replaces a merged set: confidence is the maximum of
/// the sources, the mode stays corrective only if every source was, and
/// provenance lists all source ids.
fn merged_guideline(sources: &[&Guideline], text: String, rationale: String) -> Guideline {
    let first = sources[0];
    let confidence = sources.iter().map(|g| g.confidence).fold(0.0, f64::max);
    let all_corrective = sources.iter().all(|g| g.mode == GuidelineMode::Corrective);
    let merged_from: Vec<GuidelineId> = sources.iter().map(|g| g.id.clone()).collect();
    Guideline {
        id: GuidelineId::derive(&first.source_agent, &first.source_task, first.created_at_step, &text),
        text,
        rationale,
        confidence,
        scope: first.scope,
        domain: first.domain,
        mode: if all_corrective {
            GuidelineMode::Corrective
        } else {
            GuidelineMode::Enhancement
        },
        source_agent: first.source_agent.clone(),
        source_task: first.source_task.clone(),
        created_at_step: first.created_at_step,
        stream: first.stream.clone(),
        merged_from,
    }
}

struct Iteration<'a> {
    gateway: &'a Gateway,
    slots: Vec<Option<Guideline>>,
    report: &'a mut OptimizationReport,
    failures: &'a mut Vec<String>,
}

impl Iteration<'_> {
    fn live(&self, idx: usize) -> bool {
        self.slots
            .get(idx - 1)
            .map(|slot| slot.is_some())
            .unwrap_or(false)
    }

    fn take_pair(&mut self, a: usize, b: usize) -> Option<(Guideline, Guideline)> {
        if !self.live(a) || !self.live(b) {
            return None;
        }
        let first = self.slots[a - 1].take().expect("checked live");
        let second = self.slots[b - 1].take().expect("checked live");
        Some((first, second))
    }

    fn resolve_conflicts(&mut self, pairs: &[(usize, usize)]) {
        for &(a, b) in pairs {
            let Some((rule_a, rule_b)) = self.take_pair(a, b) else {
                continue;
            };
            let mut bindings = BTreeMap::new();
            bindings.insert("idx1".to_string(), a.to_string());
            bindings.insert("idx2".to_string(), b.to_string());
            bindings.insert("rule1_text".to_string(), rule_a.text.clone());
            bindings.insert("rule1_rationale".to_string(), rule_a.rationale.clone());
            bindings.insert("rule2_text".to_string(), rule_b.text.clone());
            bindings.insert("rule2_rationale".to_string(), rule_b.rationale.clone());
            match self.gateway.call_with_retry(RubricKind::ConflictResolve, &bindings, 0) {
                Ok(ContractValue::Conflict(out)) => {
                    let merged = merged_guideline(&[&rule_a, &rule_b], out.rule.clone(), out.rationale);
                    self.slots[a.min(b) - 1] = Some(merged);
                    self.report.conflicts_resolved.push(ConflictRecord {
                        pair: (a, b),
                        merged_text: out.rule,
                    });
                }
                Ok(other) => {
                    self.failures.push(format!("conflict ({a},{b}): unexpected value {other:?}"));
                    self.slots[a - 1] = Some(rule_a);
                    self.slots[b - 1] = Some(rule_b);
                }
                Err(e) => {
                    self.failures.push(format!("conflict ({a},{b}): {e}"));
                    self.slots[a - 1] = Some(rule_a);
                    self.slots[b - 1] = Some(rule_b);
                }
            }
        }
    }

    fn prune_subsumptions(&mut self, pairs: &[(usize, usize)]) {
        for &(general, specific) in pairs {
            if !self.live(general) || !self.live(specific) {
                continue;
            }
            let general_text = self.slots[general - 1].as_ref().expect("live").text.clone();
            let specific_text = self.slots[specific - 1].as_ref().expect("live").text.clone();
            let mut bindings = BTreeMap::new();
            bindings.insert("general_rule".to_string(), general_text);
            bindings.insert("specific_rule".to_string(), specific_text);
            match self.gateway.call_with_retry(RubricKind::SubsumptionVerify, &bindings, 0) {
                Ok(ContractValue::Subsume(out)) if out.subsumed => {
                    let removed = self.slots[specific - 1].take().expect("live");
                    self.report.subsumptions_pruned.push(SubsumptionRecord {
                        general,
                        specific,
                        removed_text: removed.text,
                    });
                }
                // Verification said no: both rules stay.
                Ok(ContractValue::Subsume(_)) => {}
                Ok(other) => self
                    .failures
                    .push(format!("subsumption ({general},{specific}): unexpected value {other:?}")),
                Err(e) => self
                    .failures
                    .push(format!("subsumption ({general},{specific}): {e}")),
            }
        }
    }

    fn merge_consolidations(&mut self, groups: &[Vec<usize>]) {
        for group in groups {
            let live_members: Vec<usize> = group.iter().copied().filter(|&i| self.live(i)).collect();
            if live_members.len() < 2 {
                continue;
            }
            let sources: Vec<Guideline> = live_members
                .iter()
                .map(|&i| self.slots[i - 1].clone().expect("live"))
                .collect();
            let mut bindings = BTreeMap::new();
            bindings.insert("rules_text".to_string(), render_rules_list(&sources));
            match self.gateway.call_with_retry(RubricKind::Consolidation, &bindings, 0) {
                Ok(ContractValue::Merge(out)) => {
                    let refs: Vec<&Guideline> = sources.iter().collect();
                    let merged = merged_guideline(&refs, out.rule.clone(), out.rationale);
                    for &i in &live_members {
                        self.slots[i - 1] = None;
                    }
                    self.slots[live_members[0] - 1] = Some(merged);
                    self.report.consolidations_merged.push(ConsolidationRecord {
                        group: live_members,
                        merged_text: out.rule,
                    });
                }
                Ok(other) => self
                    .failures
                    .push(format!("consolidation {group:?}: unexpected value {other:?}")),
                Err(e) => self.failures.push(format!("consolidation {group:?}: {e}")),
            }
        }
    }
}

/// Runs the pipeline over one domain bucket, returning the optimized bucket
/// and a report. Never fails outright: on analyzer failure the bucket from
/// the last completed iteration is returned with the failure flagged.
pub fn optimize_domain(
    bucket: &[Guideline],
    domain: GuidelineDomain,
    gateway: &Gateway,
    limits: &OptimizerLimits,
) -> (Vec<Guideline>, OptimizationReport) {
    let mut report = OptimizationReport {
        domain,
        before_count: bucket.len(),
        after_count: bucket.len(),
        conflicts_resolved: Vec::new(),
        subsumptions_pruned: Vec::new(),
        consolidations_merged: Vec::new(),
        iterations_used: 0,
        failure: None,
    };
    let mut failures: Vec<String> = Vec::new();
    let mut current: Vec<Guideline> = bucket.to_vec();

    if current.len() < 2 {
        return (current, report);
    }

    while report.iterations_used < limits.max_iterations {
        report.iterations_used += 1;

        let mut bindings = BTreeMap::new();
        bindings.insert("count".to_string(), current.len().to_string());
        bindings.insert("rules_text".to_string(), render_rules_list(&current));
        let analysis = match gateway.call_with_retry(RubricKind::Analyzer, &bindings, 0) {
            Ok(ContractValue::Analyzer(out)) => validate_analysis(out, current.len()),
            Ok(other) => {
                failures.push(format!("analyzer: unexpected value {other:?}"));
                break;
            }
            Err(e) => {
                failures.push(format!("analyzer: {e}"));
                break;
            }
        };

        let mut iteration = Iteration {
            gateway,
            slots: current.iter().cloned().map(Some).collect(),
            report: &mut report,
            failures: &mut failures,
        };
        iteration.resolve_conflicts(&analysis.conflicts);
        iteration.prune_subsumptions(&analysis.subsumption);
        iteration.merge_consolidations(&analysis.consolidation);
        let next: Vec<Guideline> = iteration.slots.into_iter().flatten().collect();

        let unchanged = next.len() == current.len();
        current = next;
        if current.len() <= limits.target_after_opt || unchanged || current.len() < 2 {
            break;
        }
    }

    report.after_count = current.len();
    if !failures.is_empty() {
        report.failure = Some(failures.join("; "));
    }
    (current, report)
}
