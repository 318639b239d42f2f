//! Prompt assembly: composing the base prompt with learned guidelines.
//!
//! Rendering is a pure function of (base text, strategic list, tactical
//! list, placement), and the section format is fixed so replays are
//! byte-stable. Re-assembly always re-derives from the base — guidelines
//! are never appended onto a previously assembled text.

use serde::{Deserialize, Serialize};

use crate::domain::{Guideline, GuidelineDomain};

pub const STRATEGIC_HEADER: &str = "## Learned Guidelines (Strategic)";
pub const TACTICAL_HEADER: &str = "## Learned Guidelines (Current Task)";

/// Where assembled guideline sections are placed.
///
/// `Split` routes by scope (strategic → system, tactical → user).
/// `Hybrid` routes saved guidelines to the system text and online ones to
/// the user preamble; since saved = strategic and online = tactical, its
/// mechanical section placement coincides with `Split` — the two remain
/// distinct settings because they are distinct operator choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementStrategy {
    #[serde(rename = "system")]
    SystemAll,
    #[serde(rename = "user")]
    UserAll,
    Split,
    Hybrid,
}

impl PlacementStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlacementStrategy::SystemAll => "system",
            PlacementStrategy::UserAll => "user",
            PlacementStrategy::Split => "split",
            PlacementStrategy::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<PlacementStrategy> {
        match s.trim().to_ascii_lowercase().as_str() {
            "system" => Some(PlacementStrategy::SystemAll),
            "user" => Some(PlacementStrategy::UserAll),
            "split" => Some(PlacementStrategy::Split),
            "hybrid" => Some(PlacementStrategy::Hybrid),
            _ => None,
        }
    }
}

/// The effective prompt for one agent: base text plus assembled memories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptState {
    pub base_system_text: String,
    pub assembled_system_text: String,
    pub assembled_user_preamble: String,
    pub placement: PlacementStrategy,
    /// Incremented on every re-assembly; lets audits confirm that the
    /// prompt actually changed when an update was accepted.
    pub generation: u64,
}

impl PromptState {
    /// System text plus user preamble, the full bundle an agent sees.
    pub fn bundle(&self) -> String {
        if self.assembled_user_preamble.is_empty() {
            self.assembled_system_text.clone()
        } else {
            format!("{}\n{}", self.assembled_system_text, self.assembled_user_preamble)
        }
    }
}

/// Renders the strategic section: guidelines grouped by domain, domains in
/// canonical order, insertion order within a domain. `suppress` carries
/// texts that must not repeat (used for cross-section dedup).
fn render_strategic_section(strategic: &[&Guideline]) -> Option<String> {
    if strategic.is_empty() {
        return None;
    }
    let mut out = String::from(STRATEGIC_HEADER);
    for domain in GuidelineDomain::ALL {
        let in_domain: Vec<&&Guideline> = strategic.iter().filter(|g| g.domain == domain).collect();
        if in_domain.is_empty() {
            continue;
        }
        out.push_str("\n\n### ");
        out.push_str(domain.display_name());
        for g in in_domain {
            out.push_str("\n- ");
            out.push_str(&g.text);
        }
    }
    Some(out)
}

fn render_tactical_section(tactical: &[&Guideline]) -> Option<String> {
    if tactical.is_empty() {
        return None;
    }
    let mut out = String::from(TACTICAL_HEADER);
    for g in tactical {
        out.push_str("\n- ");
        out.push_str(&g.text);
    }
    Some(out)
}

fn append_section(target: &mut String, section: &str) {
    if !target.is_empty() {
        target.push_str("\n\n");
    }
    target.push_str(section);
}

/// Composes the effective prompt. Duplicate guideline texts appear once in
/// the whole bundle — within a list the first occurrence wins, and across
/// lists the strategic copy wins. Empty memories leave the base text
/// untouched and the user preamble empty.
pub fn assemble(
    base: &str,
    strategic: &[Guideline],
    tactical: &[Guideline],
    placement: PlacementStrategy,
) -> PromptState {
    assert!(!base.is_empty(), "base prompt must be non-empty");

    let mut seen: Vec<&str> = Vec::new();
    let mut strategic_kept: Vec<&Guideline> = Vec::new();
    for g in strategic {
        if !seen.contains(&g.text.as_str()) {
            seen.push(&g.text);
            strategic_kept.push(g);
        }
    }
    let mut tactical_kept: Vec<&Guideline> = Vec::new();
    for g in tactical {
        if !seen.contains(&g.text.as_str()) {
            seen.push(&g.text);
            tactical_kept.push(g);
        }
    }

    let strategic_section = render_strategic_section(&strategic_kept);
    let tactical_section = render_tactical_section(&tactical_kept);

    let mut system_text = base.to_string();
    let mut user_preamble = String::new();

    let mut place = |section: Option<String>, to_system: bool| {
        if let Some(section) = section {
            if to_system {
                system_text.push_str("\n\n");
                system_text.push_str(&section);
            } else {
                append_section(&mut user_preamble, &section);
            }
        }
    };

    match placement {
        PlacementStrategy::SystemAll => {
            place(strategic_section, true);
            place(tactical_section, true);
        }
        PlacementStrategy::UserAll => {
            place(strategic_section, false);
            place(tactical_section, false);
        }
        // Strategic (saved) guidelines to the system text, tactical
        // (online) guidelines to the user preamble.
        PlacementStrategy::Split | PlacementStrategy::Hybrid => {
            place(strategic_section, true);
            place(tactical_section, false);
        }
    }

    PromptState {
        base_system_text: base.to_string(),
        assembled_system_text: system_text,
        assembled_user_preamble: user_preamble,
        placement,
        generation: 0,
    }
}

/// Full re-derivation from the stored base text with the generation counter
/// advanced. The previous assembled texts are discarded, never extended.
pub fn reassemble_after_update(
    state: &PromptState,
    strategic: &[Guideline],
    tactical: &[Guideline],
) -> PromptState {
    let mut next = assemble(&state.base_system_text, strategic, tactical, state.placement);
    next.generation = state.generation + 1;
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GuidelineId, GuidelineMode, GuidelineScope, StreamLabel};

    fn guideline(text: &str, domain: GuidelineDomain, scope: GuidelineScope) -> Guideline {
        Guideline {
            id: GuidelineId::derive("a", "t", 1, text),
            text: text.to_string(),
            rationale: "r".to_string(),
            confidence: 0.9,
            scope,
            domain,
            mode: GuidelineMode::Corrective,
            source_agent: "a".to_string(),
            source_task: "t".to_string(),
            created_at_step: 1,
            stream: StreamLabel::Efficiency,
            merged_from: Vec::new(),
        }
    }

    fn strat(text: &str, domain: GuidelineDomain) -> Guideline {
        guideline(text, domain, GuidelineScope::Strategic)
    }

    fn tact(text: &str) -> Guideline {
        guideline(text, GuidelineDomain::General, GuidelineScope::Tactical)
    }

    #[test]
    fn empty_memories_leave_base_untouched() {
        let state = assemble("base prompt", &[], &[], PlacementStrategy::SystemAll);
        assert_eq!(state.assembled_system_text, "base prompt");
        assert_eq!(state.assembled_user_preamble, "");
    }

    #[test]
    fn system_all_puts_both_sections_in_system_text() {
        let state = assemble(
            "base",
            &[strat("s1", GuidelineDomain::Efficiency)],
            &[tact("t1")],
            PlacementStrategy::SystemAll,
        );
        assert!(state.assembled_system_text.contains(STRATEGIC_HEADER));
        assert!(state.assembled_system_text.contains(TACTICAL_HEADER));
        assert!(state.assembled_system_text.contains("- s1"));
        assert!(state.assembled_system_text.contains("- t1"));
        assert_eq!(state.assembled_user_preamble, "");
    }

    #[test]
    fn user_all_leaves_system_as_base() {
        let state = assemble(
            "base",
            &[strat("s1", GuidelineDomain::Safety)],
            &[tact("t1")],
            PlacementStrategy::UserAll,
        );
        assert_eq!(state.assembled_system_text, "base");
        assert!(state.assembled_user_preamble.contains(STRATEGIC_HEADER));
        assert!(state.assembled_user_preamble.contains(TACTICAL_HEADER));
    }

    #[test]
    fn split_and_hybrid_route_strategic_to_system_tactical_to_user() {
        for placement in [PlacementStrategy::Split, PlacementStrategy::Hybrid] {
            let state = assemble(
                "base",
                &[strat("s1", GuidelineDomain::ToolUsage)],
                &[tact("t1")],
                placement,
            );
            assert!(state.assembled_system_text.contains("- s1"));
            assert!(!state.assembled_system_text.contains("- t1"));
            assert!(state.assembled_user_preamble.contains("- t1"));
            assert!(!state.assembled_user_preamble.contains("- s1"));
        }
    }

    #[test]
    fn base_is_exact_prefix_under_all_placements() {
        for placement in [
            PlacementStrategy::SystemAll,
            PlacementStrategy::UserAll,
            PlacementStrategy::Split,
            PlacementStrategy::Hybrid,
        ] {
            let state = assemble(
                "the base text",
                &[strat("s", GuidelineDomain::General)],
                &[tact("t")],
                placement,
            );
            assert!(state.assembled_system_text.starts_with("the base text"));
        }
    }

    #[test]
    fn duplicate_texts_render_once_strategic_wins() {
        let state = assemble(
            "base",
            &[strat("same rule", GuidelineDomain::Efficiency)],
            &[tact("same rule"), tact("other rule")],
            PlacementStrategy::SystemAll,
        );
        let occurrences = state.assembled_system_text.matches("same rule").count();
        assert_eq!(occurrences, 1);
        // It lives in the strategic section, before the tactical header.
        let strategic_pos = state.assembled_system_text.find(STRATEGIC_HEADER).unwrap();
        let rule_pos = state.assembled_system_text.find("same rule").unwrap();
        let tactical_pos = state.assembled_system_text.find(TACTICAL_HEADER).unwrap();
        assert!(strategic_pos < rule_pos && rule_pos < tactical_pos);
        assert!(state.assembled_system_text.contains("other rule"));
    }

    #[test]
    fn domains_render_in_canonical_order() {
        let state = assemble(
            "base",
            &[
                strat("safety rule", GuidelineDomain::Safety),
                strat("tools rule", GuidelineDomain::ToolUsage),
                strat("eff rule", GuidelineDomain::Efficiency),
            ],
            &[],
            PlacementStrategy::SystemAll,
        );
        let text = &state.assembled_system_text;
        let tool = text.find("### Tool Usage").unwrap();
        let eff = text.find("### Efficiency").unwrap();
        let safety = text.find("### Safety").unwrap();
        assert!(tool < eff && eff < safety);
    }

    #[test]
    fn reassembly_is_idempotent_and_bumps_generation() {
        let strategic = vec![strat("s1", GuidelineDomain::General)];
        let tactical = vec![tact("t1")];
        let first = assemble("base", &strategic, &tactical, PlacementStrategy::SystemAll);
        let second = reassemble_after_update(&first, &strategic, &tactical);
        assert_eq!(first.assembled_system_text, second.assembled_system_text);
        assert_eq!(first.assembled_user_preamble, second.assembled_user_preamble);
        assert_eq!(second.generation, first.generation + 1);
    }

    #[test]
    fn adding_then_removing_a_guideline_restores_original_output() {
        let strategic = vec![strat("s1", GuidelineDomain::General)];
        let original = assemble("base", &strategic, &[], PlacementStrategy::SystemAll);
        let grown = reassemble_after_update(&original, &strategic, &[tact("temp")]);
        let shrunk = reassemble_after_update(&grown, &strategic, &[]);
        assert_eq!(shrunk.assembled_system_text, original.assembled_system_text);
        assert_eq!(shrunk.assembled_user_preamble, original.assembled_user_preamble);
    }

    #[test]
    fn base_appears_exactly_once_after_many_reassemblies() {
        let strategic = vec![strat("s1", GuidelineDomain::General)];
        let mut state = assemble("UNIQUE-BASE-MARKER", &strategic, &[], PlacementStrategy::SystemAll);
        for _ in 0..10 {
            state = reassemble_after_update(&state, &strategic, &[tact("t1")]);
        }
        // Substring-count oracle: the base text must not accumulate.
        assert_eq!(state.assembled_system_text.matches("UNIQUE-BASE-MARKER").count(), 1);
        assert_eq!(state.generation, 10);
    }
}
