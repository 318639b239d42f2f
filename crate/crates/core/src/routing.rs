//! Dual-stream routing: classify a selected guideline and send it to
//! tactical or strategic memory through the confidence gate.
//!
//! Decision table (duplicate check first, then confidence, then scope):
//!
//! | is_duplicate | confidence            | scope     | outcome                |
//! |--------------|-----------------------|-----------|------------------------|
//! | true         | any                   | any       | DroppedDuplicate       |
//! | false        | < accept_thresh       | any       | RejectedLowConfidence  |
//! | false        | ≥ c_thresh            | strategic | Strategic              |
//! | false        | otherwise             | any       | Tactical               |
//!
//! The "otherwise → Tactical" arm covers both tactical-scope guidelines and
//! strategic-scope guidelines demoted for insufficient confidence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Guideline, GuidelineDomain, GuidelineId, GuidelineScope, StreamLabel};
use crate::gateway::{ClassifierOut, ContractValue, Gateway, GatewayError, RubricKind, ScopeLabel};
use crate::synthesis::GuidelineDraft;

/// The classifier's judgment on one draft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub is_duplicate: bool,
    pub scope: GuidelineScope,
    /// Refined confidence — overrides the generator's label-derived value
    /// everywhere downstream.
    pub confidence: f64,
    pub domain: GuidelineDomain,
    pub reason: String,
}

/// Existing rule texts shown to the classifier for duplicate detection.
#[derive(Debug, Clone, Default)]
pub struct MemoryView {
    pub strategic_texts: Vec<String>,
    pub tactical_texts: Vec<String>,
}

impl MemoryView {
    /// Renders the `all_rules_context` block: two labeled numbered lists,
    /// with "(none)" standing in for an empty list.
    pub fn render_all_rules_context(&self) -> String {
        let mut out = String::from("Existing STRATEGIC rules:\n");
        push_numbered(&mut out, &self.strategic_texts);
        out.push_str("\n\nExisting TACTICAL rules (current task):\n");
        push_numbered(&mut out, &self.tactical_texts);
        out
    }
}

fn push_numbered(out: &mut String, texts: &[String]) {
    if texts.is_empty() {
        out.push_str("(none)");
        return;
    }
    for (i, text) in texts.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("{}. {}", i + 1, text));
    }
}

fn allowed_domains_binding(allowed: &[GuidelineDomain]) -> String {
    allowed
        .iter()
        .map(|d| d.wire_name())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Runs the classifier rubric over a draft. Decode failures are retried
/// once by the gateway; unknown domain strings map to `General`.
pub fn classify(
    gateway: &Gateway,
    draft: &GuidelineDraft,
    view: &MemoryView,
    allowed_domains: &[GuidelineDomain],
) -> Result<Classification, GatewayError> {
    let mut bindings = BTreeMap::new();
    bindings.insert("update_text".to_string(), draft.text.clone());
    bindings.insert("rationale".to_string(), draft.rationale.clone());
    bindings.insert(
        "initial_confidence".to_string(),
        format!("{:.2}", draft.confidence),
    );
    bindings.insert(
        "allowed_domains".to_string(),
        allowed_domains_binding(allowed_domains),
    );
    bindings.insert(
        "all_rules_context".to_string(),
        view.render_all_rules_context(),
    );

    let value = gateway.call_with_retry(RubricKind::Classifier, &bindings, 0)?;
    let out: ClassifierOut = match value {
        ContractValue::Classifier(out) => out,
        other => {
            return Err(GatewayError::MalformedOutput {
                kind: RubricKind::Classifier.tag().to_string(),
                detail: format!("unexpected contract value {other:?}"),
            })
        }
    };
    Ok(Classification {
        is_duplicate: out.is_duplicate,
        scope: match out.scope {
            ScopeLabel::Strategic => GuidelineScope::Strategic,
            ScopeLabel::Tactical => GuidelineScope::Tactical,
        },
        confidence: out.confidence,
        domain: GuidelineDomain::from_wire(&out.domain),
        reason: out.reason,
    })
}

/// Where a routed draft ended up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RoutingOutcome {
    Strategic(Guideline),
    Tactical(Guideline),
    DroppedDuplicate,
    RejectedLowConfidence,
}

impl RoutingOutcome {
    pub fn kind_str(&self) -> &'static str {
        match self {
            RoutingOutcome::Strategic(_) => "strategic",
            RoutingOutcome::Tactical(_) => "tactical",
            RoutingOutcome::DroppedDuplicate => "dropped_duplicate",
            RoutingOutcome::RejectedLowConfidence => "rejected_low_confidence",
        }
    }

    pub fn accepted(&self) -> Option<&Guideline> {
        match self {
            RoutingOutcome::Strategic(g) | RoutingOutcome::Tactical(g) => Some(g),
            _ => None,
        }
    }
}

/// Provenance for the guideline a routing decision may mint.
#[derive(Debug, Clone)]
pub struct GuidelineSource {
    pub agent_name: String,
    pub task_id: String,
    pub step_number: u32,
    pub stream: StreamLabel,
}

pub const DEFAULT_STRATEGIC_THRESHOLD: f64 = 0.85;
pub const DEFAULT_ACCEPT_THRESHOLD: f64 = 0.5;

/// Applies the routing decision table. Total for valid thresholds; the
/// draft's text is carried into the minted guideline untouched.
pub fn route(
    draft: &GuidelineDraft,
    cls: &Classification,
    c_thresh: f64,
    accept_thresh: f64,
    source: &GuidelineSource,
) -> RoutingOutcome {
    debug_assert!((0.0..=1.0).contains(&c_thresh));
    debug_assert!((0.0..=1.0).contains(&accept_thresh));
    debug_assert!(accept_thresh <= c_thresh);

    if cls.is_duplicate {
        return RoutingOutcome::DroppedDuplicate;
    }
    if cls.confidence < accept_thresh {
        return RoutingOutcome::RejectedLowConfidence;
    }
    let strategic = cls.scope == GuidelineScope::Strategic && cls.confidence >= c_thresh;
    let scope = if strategic {
        GuidelineScope::Strategic
    } else {
        GuidelineScope::Tactical
    };
    let guideline = Guideline {
        id: GuidelineId::derive(
            &source.agent_name,
            &source.task_id,
            source.step_number,
            &draft.text,
        ),
        text: draft.text.clone(),
        rationale: draft.rationale.clone(),
        confidence: cls.confidence,
        scope,
        domain: cls.domain,
        mode: draft.mode,
        source_agent: source.agent_name.clone(),
        source_task: source.task_id.clone(),
        created_at_step: source.step_number,
        stream: source.stream.clone(),
        merged_from: Vec::new(),
    };
    if strategic {
        RoutingOutcome::Strategic(guideline)
    } else {
        RoutingOutcome::Tactical(guideline)
    }
}
