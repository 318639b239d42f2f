//! Property tests over the serialization and parsing surfaces.

use proptest::prelude::*;

use evoprompt_core::domain::{
    Guideline, GuidelineDomain, GuidelineId, GuidelineMode, GuidelineScope, StreamLabel,
};
use evoprompt_core::gateway::{extract_placeholders, parse_contract, RubricKind};
use evoprompt_core::memory::{OptimizerLimits, StrategicMemory};

fn arb_domain() -> impl Strategy<Value = GuidelineDomain> {
    prop::sample::select(GuidelineDomain::ALL.to_vec())
}

fn arb_stream() -> impl Strategy<Value = StreamLabel> {
    prop_oneof![
        Just(StreamLabel::Efficiency),
        Just(StreamLabel::Thoroughness),
        "[a-z]{1,8}".prop_map(StreamLabel::Custom),
    ]
}

prop_compose! {
    fn arb_guideline()(
        text in "[ -~]{1,80}",
        rationale in "[ -~]{0,40}",
        confidence in 0.0f64..=1.0,
        strategic in any::<bool>(),
        corrective in any::<bool>(),
        domain in arb_domain(),
        stream in arb_stream(),
        step in 1u32..100,
    ) -> Guideline {
        Guideline {
            id: GuidelineId::derive("agent", "task", step, &text),
            text,
            rationale,
            confidence,
            scope: if strategic { GuidelineScope::Strategic } else { GuidelineScope::Tactical },
            domain,
            mode: if corrective { GuidelineMode::Corrective } else { GuidelineMode::Enhancement },
            source_agent: "agent".to_string(),
            source_task: "task".to_string(),
            created_at_step: step,
            stream,
            merged_from: Vec::new(),
        }
    }
}

proptest! {
    /// Guidelines survive the persistence encoding byte-for-value.
    #[test]
    fn guideline_round_trips_through_json(g in arb_guideline()) {
        let text = serde_json::to_string(&g).unwrap();
        let back: Guideline = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, g);
    }

    /// Whole stores round-trip through their snapshot text, buckets and all.
    #[test]
    fn strategic_snapshot_round_trips(guidelines in prop::collection::vec(arb_guideline(), 0..25)) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = StrategicMemory::new("agent", StreamLabel::Efficiency, OptimizerLimits::default());
        for (i, mut g) in guidelines.into_iter().enumerate() {
            // Bypass cap logic: build buckets directly with unique texts.
            g.text = format!("{i} {}", g.text);
            let mut bucket = store.bucket(g.domain).to_vec();
            bucket.push(g.clone());
            store.replace_bucket(g.domain, bucket);
        }
        store.save(dir.path()).unwrap();
        let loaded = StrategicMemory::load(
            dir.path(),
            &StreamLabel::Efficiency,
            "agent",
            OptimizerLimits::default(),
        ).unwrap();
        prop_assert_eq!(loaded, store);
    }

    /// Arbitrary text never panics the contract parser, for any rubric.
    #[test]
    fn contract_parsing_never_panics(raw in "\\PC*", kind_index in 0usize..9) {
        let _ = parse_contract(RubricKind::ALL[kind_index], &raw);
    }

    /// Placeholder extraction never reports names that are not actually
    /// scannable placeholders (round trip through a synthetic template).
    #[test]
    fn extracted_placeholders_exist_in_text(names in prop::collection::btree_set("[a-z_]{1,10}", 0..5)) {
        let mut template = String::from("prefix {{literal}} ");
        for name in &names {
            template.push_str(&format!("[{{{name}}}] "));
        }
        let extracted = extract_placeholders(&template);
        prop_assert_eq!(extracted, names);
    }
}
