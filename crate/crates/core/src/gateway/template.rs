//! Rubric templates and prompt rendering.
//!
//! The template sources live under `templates/` and are embedded at build
//! time. Placeholders use `{name}` syntax; literal braces are written as
//! `{{` and `}}` (they survive rendering as single braces, which is how the
//! JSON skeletons in the output-format sections are spelled).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use super::GatewayError;

/// Per-binding size budget. Traces can be enormous; anything longer than
/// this is cut and marked so the meta-agent knows it is looking at a prefix.
pub const BINDING_CHAR_BUDGET: usize = 4000;
pub const TRUNCATION_MARKER: &str = "…[truncated]";

/// Every meta-agent rubric in the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RubricKind {
    CorrectiveSynthesis,
    EnhancementEfficiency,
    EnhancementThoroughness,
    Selector,
    Classifier,
    Analyzer,
    Consolidation,
    SubsumptionVerify,
    ConflictResolve,
}

impl RubricKind {
    pub const ALL: [RubricKind; 9] = [
        RubricKind::CorrectiveSynthesis,
        RubricKind::EnhancementEfficiency,
        RubricKind::EnhancementThoroughness,
        RubricKind::Selector,
        RubricKind::Classifier,
        RubricKind::Analyzer,
        RubricKind::Consolidation,
        RubricKind::SubsumptionVerify,
        RubricKind::ConflictResolve,
    ];

    /// Short tag used in request logging and fixture file names.
    pub fn tag(&self) -> &'static str {
        match self {
            RubricKind::CorrectiveSynthesis => "corrective_synthesis",
            RubricKind::EnhancementEfficiency => "enhancement_efficiency",
            RubricKind::EnhancementThoroughness => "enhancement_thoroughness",
            RubricKind::Selector => "selector",
            RubricKind::Classifier => "classifier",
            RubricKind::Analyzer => "analyzer",
            RubricKind::Consolidation => "consolidation",
            RubricKind::SubsumptionVerify => "subsumption_verify",
            RubricKind::ConflictResolve => "conflict_resolve",
        }
    }

    pub fn from_tag(tag: &str) -> Option<RubricKind> {
        RubricKind::ALL.iter().copied().find(|k| k.tag() == tag)
    }

    /// Whether this rubric generates content (sampled at a diversity
    /// temperature) as opposed to making a decision (temperature 0).
    pub fn is_generative(&self) -> bool {
        matches!(
            self,
            RubricKind::CorrectiveSynthesis
                | RubricKind::EnhancementEfficiency
                | RubricKind::EnhancementThoroughness
        )
    }

    fn source(&self) -> &'static str {
        match self {
            RubricKind::CorrectiveSynthesis => include_str!("../../templates/corrective_synthesis.txt"),
            RubricKind::EnhancementEfficiency => include_str!("../../templates/enhancement_efficiency.txt"),
            RubricKind::EnhancementThoroughness => include_str!("../../templates/enhancement_thoroughness.txt"),
            RubricKind::Selector => include_str!("../../templates/selector.txt"),
            RubricKind::Classifier => include_str!("../../templates/classifier.txt"),
            RubricKind::Analyzer => include_str!("../../templates/analyzer.txt"),
            RubricKind::Consolidation => include_str!("../../templates/consolidation.txt"),
            RubricKind::SubsumptionVerify => include_str!("../../templates/subsumption_verify.txt"),
            RubricKind::ConflictResolve => include_str!("../../templates/conflict_resolve.txt"),
        }
    }
}

/// A prompt template plus the placeholder names it requires.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RubricTemplate {
    pub kind: RubricKind,
    pub template_text: String,
    pub required_bindings: BTreeSet<String>,
}

impl RubricTemplate {
    /// The built-in template for a rubric kind. Required bindings are
    /// extracted from the template text, so the two cannot drift apart.
    pub fn builtin(kind: RubricKind) -> &'static RubricTemplate {
        static TEMPLATES: OnceLock<Vec<RubricTemplate>> = OnceLock::new();
        let all = TEMPLATES.get_or_init(|| {
            RubricKind::ALL
                .iter()
                .map(|&kind| {
                    let text = kind.source().to_string();
                    let required = extract_placeholders(&text);
                    RubricTemplate {
                        kind,
                        template_text: text,
                        required_bindings: required,
                    }
                })
                .collect()
        });
        all.iter().find(|t| t.kind == kind).expect("all kinds present")
    }
}

/// Collects the `{name}` placeholders in a template, skipping `{{`/`}}`
/// escapes.
pub fn extract_placeholders(text: &str) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if i + 1 < bytes.len() && bytes[i + 1] == b'{' {
                i += 2;
                continue;
            }
            if let Some((name, end)) = placeholder_at(text, i) {
                names.insert(name.to_string());
                i = end;
                continue;
            }
        }
        if bytes[i] == b'}' && i + 1 < bytes.len() && bytes[i + 1] == b'}' {
            i += 2;
            continue;
        }
        i += 1;
    }
    names
}

/// If position `open` starts a well-formed placeholder, returns its name and
/// the index just past the closing brace.
fn placeholder_at(text: &str, open: usize) -> Option<(&str, usize)> {
    let rest = &text[open + 1..];
    let close = rest.find('}')?;
    let name = &rest[..close];
    if name.is_empty() {
        return None;
    }
    let valid = name
        .bytes()
        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
    if valid {
        Some((name, open + 1 + close + 1))
    } else {
        None
    }
}

fn truncate_binding(value: &str) -> String {
    if value.chars().count() <= BINDING_CHAR_BUDGET {
        return value.to_string();
    }
    let mut cut: String = value.chars().take(BINDING_CHAR_BUDGET).collect();
    cut.push_str(TRUNCATION_MARKER);
    cut
}

/// Fills a template with bindings. Every placeholder must be covered;
/// oversized binding values are truncated to [`BINDING_CHAR_BUDGET`] chars
/// with a marker. Substitution is single-pass: brace patterns inside binding
/// values are not re-expanded.
pub fn render_prompt(
    template: &RubricTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<String, GatewayError> {
    for required in &template.required_bindings {
        if !bindings.contains_key(required) {
            return Err(GatewayError::MissingBinding(required.clone()));
        }
    }
    let text = &template.template_text;
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if i + 1 < bytes.len() && bytes[i + 1] == b'{' => {
                out.push('{');
                i += 2;
            }
            b'}' if i + 1 < bytes.len() && bytes[i + 1] == b'}' => {
                out.push('}');
                i += 2;
            }
            b'{' => {
                if let Some((name, end)) = placeholder_at(text, i) {
                    let value = bindings.get(name).expect("checked above");
                    out.push_str(&truncate_binding(value));
                    i = end;
                } else {
                    out.push('{');
                    i += 1;
                }
            }
            _ => {
                // Advance one full UTF-8 character.
                let ch = text[i..].chars().next().expect("in bounds");
                out.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    Ok(out)
}
