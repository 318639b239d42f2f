//! Typed decoding of meta-agent JSON outputs.
//!
//! Models are told to emit pure JSON but routinely wrap it in code fences or
//! prose. Recovery is a single pass: take the first balanced top-level JSON
//! object in the text; if that does not parse, the output is malformed.

use serde_json::Value;

use super::{GatewayError, RubricKind};
use crate::domain::ConfidenceLabel;

/// Generator output with a concrete prompt addition.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorOut {
    pub update_text: String,
    pub rationale: String,
    pub confidence_label: ConfidenceLabel,
}

/// Best-of-N selector output.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorOut {
    pub selected_index: usize,
    pub rationale: String,
}

/// Classifier output: duplicate check, scope, refined confidence, domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOut {
    pub is_duplicate: bool,
    pub scope: ScopeLabel,
    pub confidence: f64,
    /// Raw domain string; mapping to a known domain happens in routing.
    pub domain: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScopeLabel {
    Strategic,
    Tactical,
}

/// Analyzer output: index groups for the three optimization categories.
/// Indices are 1-based positions into the rule list shown to the analyzer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnalyzerOut {
    pub consolidation: Vec<Vec<usize>>,
    pub subsumption: Vec<(usize, usize)>,
    pub conflicts: Vec<(usize, usize)>,
}

/// Consolidation (merge) output.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOut {
    pub rule: String,
    pub rationale: String,
}

/// Subsumption verification output.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsumeOut {
    pub subsumed: bool,
    pub reasoning: String,
}

/// Conflict resolution output.
#[derive(Debug, Clone, PartialEq)]
pub struct ConflictOut {
    pub rule: String,
    pub rationale: String,
}

/// Tagged union over every output schema the engine understands.
///
/// A generator response whose `update_text` is empty decodes to
/// [`ContractValue::NoImprovement`] rather than a [`GeneratorOut`] — the
/// model explicitly declining to suggest anything is not an error.
#[derive(Debug, Clone, PartialEq)]
pub enum ContractValue {
    Generator(GeneratorOut),
    NoImprovement { rationale: String },
    Selector(SelectorOut),
    Classifier(ClassifierOut),
    Analyzer(AnalyzerOut),
    Merge(MergeOut),
    Subsume(SubsumeOut),
    Conflict(ConflictOut),
}

impl ContractValue {
    /// Renders the value back into its canonical JSON wire shape.
    pub fn to_json_text(&self) -> String {
        let value = match self {
            ContractValue::Generator(g) => serde_json::json!({
                "update_text": g.update_text,
                "rationale": g.rationale,
                "confidence": match g.confidence_label {
                    ConfidenceLabel::Low => "low",
                    ConfidenceLabel::Medium => "medium",
                    ConfidenceLabel::High => "high",
                },
            }),
            ContractValue::NoImprovement { rationale } => serde_json::json!({
                "update_text": "",
                "rationale": rationale,
                "confidence": "low",
            }),
            ContractValue::Selector(s) => serde_json::json!({
                "selected_index": s.selected_index,
                "rationale": s.rationale,
            }),
            ContractValue::Classifier(c) => serde_json::json!({
                "is_duplicate": c.is_duplicate,
                "scope": match c.scope {
                    ScopeLabel::Strategic => "strategic",
                    ScopeLabel::Tactical => "tactical",
                },
                "confidence": c.confidence,
                "domain": c.domain,
                "reason": c.reason,
            }),
            ContractValue::Analyzer(a) => serde_json::json!({
                "consolidation": a.consolidation,
                "subsumption": a.subsumption.iter().map(|(g, s)| vec![*g, *s]).collect::<Vec<_>>(),
                "conflicts": a.conflicts.iter().map(|(x, y)| vec![*x, *y]).collect::<Vec<_>>(),
            }),
            ContractValue::Merge(m) => serde_json::json!({
                "rule": m.rule,
                "rationale": m.rationale,
            }),
            ContractValue::Subsume(s) => serde_json::json!({
                "subsumed": s.subsumed,
                "reasoning": s.reasoning,
            }),
            ContractValue::Conflict(c) => serde_json::json!({
                "rule": c.rule,
                "rationale": c.rationale,
            }),
        };
        serde_json::to_string_pretty(&value).expect("json value serializes")
    }
}

/// Extracts the first balanced top-level JSON object from raw model output,
/// skipping fences and surrounding prose. String literals and escapes are
/// honored while matching braces.
pub fn first_json_object(raw: &str) -> Option<&str> {
    let bytes = raw.as_bytes();
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + offset + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn malformed(kind: RubricKind, detail: impl Into<String>) -> GatewayError {
    GatewayError::MalformedOutput {
        kind: kind.tag().to_string(),
        detail: detail.into(),
    }
}

fn violation(field: &str) -> GatewayError {
    GatewayError::SchemaViolation(field.to_string())
}

fn require_str(obj: &Value, field: &str) -> Result<String, GatewayError> {
    obj.get(field)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| violation(field))
}

/// Free-text commentary fields tolerate absence; structural fields do not.
fn optional_str(obj: &Value, field: &str) -> String {
    obj.get(field).and_then(Value::as_str).unwrap_or("").to_string()
}

fn require_bool(obj: &Value, field: &str) -> Result<bool, GatewayError> {
    obj.get(field).and_then(Value::as_bool).ok_or_else(|| violation(field))
}

fn index_pairs(obj: &Value, field: &str) -> Result<Vec<(usize, usize)>, GatewayError> {
    let Some(value) = obj.get(field) else {
        return Ok(Vec::new());
    };
    let arr = value.as_array().ok_or_else(|| violation(field))?;
    let mut pairs = Vec::with_capacity(arr.len());
    for entry in arr {
        let pair = entry.as_array().ok_or_else(|| violation(field))?;
        if pair.len() != 2 {
            return Err(violation(field));
        }
        let a = pair[0].as_u64().ok_or_else(|| violation(field))?;
        let b = pair[1].as_u64().ok_or_else(|| violation(field))?;
        pairs.push((a as usize, b as usize));
    }
    Ok(pairs)
}

fn index_groups(obj: &Value, field: &str) -> Result<Vec<Vec<usize>>, GatewayError> {
    let Some(value) = obj.get(field) else {
        return Ok(Vec::new());
    };
    let arr = value.as_array().ok_or_else(|| violation(field))?;
    let mut groups = Vec::with_capacity(arr.len());
    for entry in arr {
        let group = entry.as_array().ok_or_else(|| violation(field))?;
        let mut indices = Vec::with_capacity(group.len());
        for idx in group {
            indices.push(idx.as_u64().ok_or_else(|| violation(field))? as usize);
        }
        groups.push(indices);
    }
    Ok(groups)
}

/// Decodes raw completion text against the output schema for `kind`.
pub fn parse_contract(kind: RubricKind, raw: &str) -> Result<ContractValue, GatewayError> {
    if raw.trim().is_empty() {
        return Err(malformed(kind, "empty output"));
    }
    let candidate = first_json_object(raw).ok_or_else(|| malformed(kind, "no JSON object found"))?;
    let obj: Value = serde_json::from_str(candidate)
        .map_err(|e| malformed(kind, format!("invalid JSON: {e}")))?;
    if !obj.is_object() {
        return Err(malformed(kind, "top-level value is not an object"));
    }

    match kind {
        RubricKind::CorrectiveSynthesis
        | RubricKind::EnhancementEfficiency
        | RubricKind::EnhancementThoroughness => {
            let update_text = require_str(&obj, "update_text")?;
            let rationale = optional_str(&obj, "rationale");
            if update_text.trim().is_empty() {
                return Ok(ContractValue::NoImprovement { rationale });
            }
            let label_raw = require_str(&obj, "confidence")?;
            let confidence_label =
                ConfidenceLabel::parse(&label_raw).ok_or_else(|| violation("confidence"))?;
            Ok(ContractValue::Generator(GeneratorOut {
                update_text,
                rationale,
                confidence_label,
            }))
        }
        RubricKind::Selector => {
            let selected_index = obj
                .get("selected_index")
                .and_then(Value::as_u64)
                .ok_or_else(|| violation("selected_index"))? as usize;
            Ok(ContractValue::Selector(SelectorOut {
                selected_index,
                rationale: optional_str(&obj, "rationale"),
            }))
        }
        RubricKind::Classifier => {
            let is_duplicate = require_bool(&obj, "is_duplicate")?;
            let scope_raw = require_str(&obj, "scope")?;
            let scope = match scope_raw.trim().to_ascii_lowercase().as_str() {
                "strategic" => ScopeLabel::Strategic,
                "tactical" => ScopeLabel::Tactical,
                _ => return Err(violation("scope")),
            };
            let confidence = obj
                .get("confidence")
                .and_then(Value::as_f64)
                .ok_or_else(|| violation("confidence"))?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(violation("confidence"));
            }
            Ok(ContractValue::Classifier(ClassifierOut {
                is_duplicate,
                scope,
                confidence,
                domain: optional_str(&obj, "domain"),
                reason: optional_str(&obj, "reason"),
            }))
        }
        RubricKind::Analyzer => Ok(ContractValue::Analyzer(AnalyzerOut {
            consolidation: index_groups(&obj, "consolidation")?,
            subsumption: index_pairs(&obj, "subsumption")?,
            conflicts: index_pairs(&obj, "conflicts")?,
        })),
        RubricKind::Consolidation => Ok(ContractValue::Merge(MergeOut {
            rule: require_str(&obj, "rule")?,
            rationale: optional_str(&obj, "rationale"),
        })),
        RubricKind::SubsumptionVerify => Ok(ContractValue::Subsume(SubsumeOut {
            subsumed: require_bool(&obj, "subsumed")?,
            reasoning: optional_str(&obj, "reasoning"),
        })),
        RubricKind::ConflictResolve => Ok(ContractValue::Conflict(ConflictOut {
            rule: require_str(&obj, "rule")?,
            rationale: optional_str(&obj, "rationale"),
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_output_parses() {
        let raw = r#"{"update_text":"Always define variables","rationale":"prevents NameError","confidence":"high"}"#;
        let parsed = parse_contract(RubricKind::CorrectiveSynthesis, raw).unwrap();
        assert_eq!(
            parsed,
            ContractValue::Generator(GeneratorOut {
                update_text: "Always define variables".into(),
                rationale: "prevents NameError".into(),
                confidence_label: ConfidenceLabel::High,
            })
        );
    }

    #[test]
    fn empty_update_text_is_no_improvement() {
        let raw = r#"{"update_text":"","rationale":"No improvement needed","confidence":"low"}"#;
        let parsed = parse_contract(RubricKind::EnhancementEfficiency, raw).unwrap();
        assert_eq!(
            parsed,
            ContractValue::NoImprovement {
                rationale: "No improvement needed".into()
            }
        );
    }

    #[test]
    fn fenced_classifier_output_parses() {
        let raw = "```json\n{\"is_duplicate\": false, \"scope\": \"strategic\", \"confidence\": 0.95, \"domain\": \"efficiency\", \"reason\": \"broad\"}\n```";
        let parsed = parse_contract(RubricKind::Classifier, raw).unwrap();
        match parsed {
            ContractValue::Classifier(c) => {
                assert!(!c.is_duplicate);
                assert_eq!(c.scope, ScopeLabel::Strategic);
                assert_eq!(c.confidence, 0.95);
                assert_eq!(c.domain, "efficiency");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn prose_wrapped_output_parses() {
        let raw = "Sure! Here is the JSON you asked for:\n{\"selected_index\": 1, \"rationale\": \"better\"}\nHope that helps.";
        let parsed = parse_contract(RubricKind::Selector, raw).unwrap();
        assert_eq!(
            parsed,
            ContractValue::Selector(SelectorOut {
                selected_index: 1,
                rationale: "better".into()
            })
        );
    }

    #[test]
    fn strings_containing_braces_do_not_break_matching() {
        let raw = r#"{"rule": "Use {curly} placeholders \" safely", "rationale": "r"}"#;
        let parsed = parse_contract(RubricKind::Consolidation, raw).unwrap();
        match parsed {
            ContractValue::Merge(m) => assert!(m.rule.contains("{curly}")),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn truncated_output_is_malformed() {
        let raw = r#"{"update_text":"Always check", "rationale":"cut of"#;
        let err = parse_contract(RubricKind::CorrectiveSynthesis, raw).unwrap_err();
        assert!(matches!(err, GatewayError::MalformedOutput { .. }));
    }

    #[test]
    fn out_of_range_confidence_is_schema_violation() {
        let raw = r#"{"is_duplicate": false, "scope": "tactical", "confidence": 1.5, "domain": "", "reason": ""}"#;
        let err = parse_contract(RubricKind::Classifier, raw).unwrap_err();
        assert_eq!(err, GatewayError::SchemaViolation("confidence".into()));
    }

    #[test]
    fn bad_scope_is_schema_violation() {
        let raw = r#"{"is_duplicate": false, "scope": "global", "confidence": 0.5, "domain": "", "reason": ""}"#;
        let err = parse_contract(RubricKind::Classifier, raw).unwrap_err();
        assert_eq!(err, GatewayError::SchemaViolation("scope".into()));
    }

    #[test]
    fn analyzer_accepts_missing_categories() {
        let raw = r#"{"subsumption": [[1, 2]]}"#;
        let parsed = parse_contract(RubricKind::Analyzer, raw).unwrap();
        assert_eq!(
            parsed,
            ContractValue::Analyzer(AnalyzerOut {
                consolidation: vec![],
                subsumption: vec![(1, 2)],
                conflicts: vec![],
            })
        );
    }

    #[test]
    fn analyzer_rejects_malformed_pairs() {
        let raw = r#"{"consolidation": [], "subsumption": [[1]], "conflicts": []}"#;
        let err = parse_contract(RubricKind::Analyzer, raw).unwrap_err();
        assert_eq!(err, GatewayError::SchemaViolation("subsumption".into()));
    }

    #[test]
    fn subsume_and_conflict_outputs_parse() {
        let s = parse_contract(RubricKind::SubsumptionVerify, r#"{"subsumed": false, "reasoning": "adds detail"}"#).unwrap();
        assert_eq!(
            s,
            ContractValue::Subsume(SubsumeOut {
                subsumed: false,
                reasoning: "adds detail".into()
            })
        );
        let c = parse_contract(RubricKind::ConflictResolve, r#"{"rule": "merged", "rationale": "r"}"#).unwrap();
        assert_eq!(
            c,
            ContractValue::Conflict(ConflictOut {
                rule: "merged".into(),
                rationale: "r".into()
            })
        );
    }

    #[test]
    fn round_trip_serialize_then_parse_is_identity() {
        let values = vec![
            (
                RubricKind::CorrectiveSynthesis,
                ContractValue::Generator(GeneratorOut {
                    update_text: "Always batch".into(),
                    rationale: "fewer calls".into(),
                    confidence_label: ConfidenceLabel::Medium,
                }),
            ),
            (
                RubricKind::EnhancementEfficiency,
                ContractValue::NoImprovement {
                    rationale: "fine as is".into(),
                },
            ),
            (
                RubricKind::Selector,
                ContractValue::Selector(SelectorOut {
                    selected_index: 3,
                    rationale: "most specific".into(),
                }),
            ),
            (
                RubricKind::Classifier,
                ContractValue::Classifier(ClassifierOut {
                    is_duplicate: true,
                    scope: ScopeLabel::Tactical,
                    confidence: 0.25,
                    domain: String::new(),
                    reason: "covered".into(),
                }),
            ),
            (
                RubricKind::Analyzer,
                ContractValue::Analyzer(AnalyzerOut {
                    consolidation: vec![vec![3, 4], vec![7, 8, 9]],
                    subsumption: vec![(1, 2)],
                    conflicts: vec![(5, 6)],
                }),
            ),
            (
                RubricKind::Consolidation,
                ContractValue::Merge(MergeOut {
                    rule: "merged rule".into(),
                    rationale: "combines".into(),
                }),
            ),
            (
                RubricKind::SubsumptionVerify,
                ContractValue::Subsume(SubsumeOut {
                    subsumed: true,
                    reasoning: "special case".into(),
                }),
            ),
            (
                RubricKind::ConflictResolve,
                ContractValue::Conflict(ConflictOut {
                    rule: "resolved".into(),
                    rationale: "priority".into(),
                }),
            ),
        ];
        for (kind, value) in values {
            let text = value.to_json_text();
            let reparsed = parse_contract(kind, &text).unwrap();
            assert_eq!(reparsed, value, "round trip for {kind:?}");
        }
    }

    #[test]
    fn never_panics_on_arbitrary_text() {
        let samples = [
            "",
            "{{{{{",
            "}}}}}",
            "{\"a\": \"\\",
            "no json at all",
            "{\"nested\": {\"deep\": {\"deeper\": 1}}}",
            "\u{1F600}{\"x\": 1}\u{1F600}",
        ];
        for s in samples {
            let _ = parse_contract(RubricKind::Classifier, s);
        }
    }
}
