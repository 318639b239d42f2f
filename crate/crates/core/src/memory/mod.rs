//! Guideline memories: per-task tactical store and persistent strategic
//! store with per-domain caps and the consolidation pipeline.

mod optimizer;

pub use optimizer::{
    optimize_domain, render_rules_list, ConflictRecord, ConsolidationRecord, OptimizationReport,
    OptimizerLimits, SubsumptionRecord,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Guideline, GuidelineDomain, StreamLabel};
use crate::gateway::Gateway;

pub const DEFAULT_TACTICAL_CAP: usize = 20;
pub const SNAPSHOT_VERSION: &str = "1";

/// Task-scoped guideline store. Cleared when the task ends.
#[derive(Debug, Clone, PartialEq)]
pub struct TacticalMemory {
    pub task_id: String,
    pub cap: usize,
    entries: Vec<Guideline>,
}

impl TacticalMemory {
    pub fn new(task_id: impl Into<String>, cap: usize) -> TacticalMemory {
        TacticalMemory {
            task_id: task_id.into(),
            cap: cap.max(1),
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[Guideline] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.entries.iter().map(|g| g.text.clone()).collect()
    }

    /// Appends a guideline. When the store would exceed its cap, the
    /// lowest-confidence entry — the newcomer included — is evicted, with
    /// ties broken toward the oldest entry.
    pub fn insert(&mut self, g: Guideline) {
        self.entries.push(g);
        if self.entries.len() > self.cap {
            let evict = self
                .entries
                .iter()
                .enumerate()
                .min_by(|(ia, a), (ib, b)| {
                    a.confidence
                        .partial_cmp(&b.confidence)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(ia.cmp(ib))
                })
                .map(|(i, _)| i)
                .expect("store is non-empty");
            self.entries.remove(evict);
        }
    }

    /// Empties the store for the next task.
    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Result of a strategic insert attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategicInsert {
    /// Inserted; carries the optimization report when the insert pushed the
    /// bucket over its cap and the pipeline ran.
    Inserted(Option<OptimizationReport>),
    /// An entry with identical text already sits in the bucket.
    RejectedDuplicateText,
}

/// Persistent per-(agent, stream) guideline store bucketed by domain.
///
/// A bucket never ends an insert above its cap unless the optimizer itself
/// failed (fail-open: the over-cap state is kept, flagged in the report,
/// and re-triggers on the next insert).
#[derive(Debug, Clone, PartialEq)]
pub struct StrategicMemory {
    pub agent_name: String,
    pub stream: StreamLabel,
    pub limits: OptimizerLimits,
    buckets: BTreeMap<GuidelineDomain, Vec<Guideline>>,
}

/// On-disk form of a strategic store: one JSON document per (agent, stream).
#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    version: String,
    agent_name: String,
    stream: StreamLabel,
    buckets: BTreeMap<GuidelineDomain, Vec<Guideline>>,
}

impl StrategicMemory {
    pub fn new(agent_name: impl Into<String>, stream: StreamLabel, limits: OptimizerLimits) -> StrategicMemory {
        StrategicMemory {
            agent_name: agent_name.into(),
            stream,
            limits,
            buckets: BTreeMap::new(),
        }
    }

    pub fn bucket(&self, domain: GuidelineDomain) -> &[Guideline] {
        self.buckets.get(&domain).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn buckets(&self) -> &BTreeMap<GuidelineDomain, Vec<Guideline>> {
        &self.buckets
    }

    pub fn total_len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    /// All guidelines in domain order, the order prompt assembly uses.
    pub fn all(&self) -> Vec<Guideline> {
        let mut out = Vec::with_capacity(self.total_len());
        for domain in GuidelineDomain::ALL {
            if let Some(bucket) = self.buckets.get(&domain) {
                out.extend(bucket.iter().cloned());
            }
        }
        out
    }

    pub fn texts(&self) -> Vec<String> {
        self.all().into_iter().map(|g| g.text).collect()
    }

    /// Replaces one bucket wholesale; used by the CLI's forced optimization.
    pub fn replace_bucket(&mut self, domain: GuidelineDomain, entries: Vec<Guideline>) {
        if entries.is_empty() {
            self.buckets.remove(&domain);
        } else {
            self.buckets.insert(domain, entries);
        }
    }

    /// Inserts a strategic guideline into its domain bucket. Exceeding the
    /// per-domain cap triggers the optimization pipeline on that bucket.
    pub fn insert(&mut self, g: Guideline, gateway: &Gateway) -> StrategicInsert {
        let domain = g.domain;
        let bucket = self.buckets.entry(domain).or_default();
        if bucket.iter().any(|existing| existing.text == g.text) {
            return StrategicInsert::RejectedDuplicateText;
        }
        bucket.push(g);
        if bucket.len() <= self.limits.per_domain_cap {
            return StrategicInsert::Inserted(None);
        }
        let (optimized, report) = optimize_domain(bucket, domain, gateway, &self.limits);
        *bucket = optimized;
        StrategicInsert::Inserted(Some(report))
    }

    /// Path of this store's snapshot under a stream-scoped memory root:
    /// `<root>/<stream>/<agent_name>.json`.
    pub fn snapshot_path(root: &Path, stream: &StreamLabel, agent_name: &str) -> PathBuf {
        root.join(stream.as_str()).join(format!("{agent_name}.json"))
    }

    /// Persists the store. Field-for-field lossless: `load(save(m)) == m`.
    pub fn save(&self, root: &Path) -> Result<(), MemoryError> {
        let path = Self::snapshot_path(root, &self.stream, &self.agent_name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let snapshot = Snapshot {
            version: SNAPSHOT_VERSION.to_string(),
            agent_name: self.agent_name.clone(),
            stream: self.stream.clone(),
            buckets: self.buckets.clone(),
        };
        let text = serde_json::to_string_pretty(&snapshot).expect("snapshot serializes");
        fs::write(&path, text)?;
        Ok(())
    }

    pub fn load(
        root: &Path,
        stream: &StreamLabel,
        agent_name: &str,
        limits: OptimizerLimits,
    ) -> Result<StrategicMemory, MemoryError> {
        let path = Self::snapshot_path(root, stream, agent_name);
        let text = fs::read_to_string(&path)?;
        Self::from_snapshot_text(&text, limits)
    }

    pub fn from_snapshot_text(text: &str, limits: OptimizerLimits) -> Result<StrategicMemory, MemoryError> {
        let snapshot: Snapshot = serde_json::from_str(text).map_err(|e| MemoryError::CorruptSnapshot {
            kind: SnapshotFault::Parse,
            detail: e.to_string(),
        })?;
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(MemoryError::CorruptSnapshot {
                kind: SnapshotFault::Version,
                detail: format!(
                    "snapshot version {:?} does not match current {:?}",
                    snapshot.version, SNAPSHOT_VERSION
                ),
            });
        }
        Ok(StrategicMemory {
            agent_name: snapshot.agent_name,
            stream: snapshot.stream,
            limits,
            buckets: snapshot.buckets,
        })
    }

    /// Loads the snapshot if one exists, otherwise starts empty.
    pub fn load_or_new(
        root: &Path,
        stream: &StreamLabel,
        agent_name: &str,
        limits: OptimizerLimits,
    ) -> Result<StrategicMemory, MemoryError> {
        let path = Self::snapshot_path(root, stream, agent_name);
        if path.is_file() {
            Self::load(root, stream, agent_name, limits)
        } else {
            Ok(StrategicMemory::new(agent_name, stream.clone(), limits))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotFault {
    Version,
    Parse,
}

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("corrupt snapshot ({kind:?}): {detail}")]
    CorruptSnapshot { kind: SnapshotFault, detail: String },
    #[error("memory io: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{GuidelineId, GuidelineMode, GuidelineScope};
    use crate::gateway::{FnProvider, Gateway};

    pub(crate) fn guideline(text: &str, confidence: f64, domain: GuidelineDomain) -> Guideline {
        Guideline {
            id: GuidelineId::derive("a", "t", 1, text),
            text: text.to_string(),
            rationale: "r".to_string(),
            confidence,
            scope: GuidelineScope::Strategic,
            domain,
            mode: GuidelineMode::Enhancement,
            source_agent: "a".to_string(),
            source_task: "t".to_string(),
            created_at_step: 1,
            stream: StreamLabel::Efficiency,
            merged_from: Vec::new(),
        }
    }

    fn inert_gateway() -> Gateway {
        Gateway::new(Box::new(FnProvider(|_: &crate::gateway::CompletionRequest| {
            Ok(r#"{"consolidation": [], "subsumption": [], "conflicts": []}"#.to_string())
        })))
    }

    #[test]
    fn tactical_insert_into_empty_store() {
        let mut store = TacticalMemory::new("t1", 20);
        store.insert(guideline("g1", 0.9, GuidelineDomain::General));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn tactical_full_store_evicts_lowest_confidence() {
        let mut store = TacticalMemory::new("t1", 20);
        store.insert(guideline("weak", 0.5, GuidelineDomain::General));
        for i in 0..19 {
            store.insert(guideline(&format!("g{i}"), 0.8, GuidelineDomain::General));
        }
        assert_eq!(store.len(), 20);
        store.insert(guideline("strong", 0.9, GuidelineDomain::General));
        assert_eq!(store.len(), 20);
        assert!(!store.texts().contains(&"weak".to_string()));
        assert!(store.texts().contains(&"strong".to_string()));
    }

    #[test]
    fn tactical_newcomer_below_all_is_itself_evicted() {
        let mut store = TacticalMemory::new("t1", 20);
        for i in 0..20 {
            store.insert(guideline(&format!("g{i}"), 0.8, GuidelineDomain::General));
        }
        store.insert(guideline("too weak", 0.3, GuidelineDomain::General));
        assert_eq!(store.len(), 20);
        assert!(!store.texts().contains(&"too weak".to_string()));
    }

    #[test]
    fn tactical_tie_break_evicts_oldest() {
        let mut store = TacticalMemory::new("t1", 2);
        store.insert(guideline("oldest", 0.5, GuidelineDomain::General));
        store.insert(guideline("middle", 0.5, GuidelineDomain::General));
        store.insert(guideline("newest", 0.5, GuidelineDomain::General));
        assert_eq!(store.texts(), vec!["middle".to_string(), "newest".to_string()]);
    }

    #[test]
    fn clear_empties_tactical_and_is_idempotent() {
        let mut store = TacticalMemory::new("t1", 20);
        store.insert(guideline("g", 0.9, GuidelineDomain::General));
        store.clear();
        assert!(store.is_empty());
        store.clear();
        assert!(store.is_empty());
    }

    #[test]
    fn strategic_insert_below_cap_skips_optimization() {
        let gateway = inert_gateway();
        let mut store = StrategicMemory::new("a", StreamLabel::Efficiency, OptimizerLimits::default());
        for i in 0..9 {
            store.insert(guideline(&format!("g{i}"), 0.9, GuidelineDomain::Efficiency), &gateway);
        }
        let outcome = store.insert(guideline("g9", 0.9, GuidelineDomain::Efficiency), &gateway);
        assert_eq!(outcome, StrategicInsert::Inserted(None));
        assert_eq!(store.bucket(GuidelineDomain::Efficiency).len(), 10);
    }

    #[test]
    fn strategic_insert_over_cap_triggers_optimization() {
        let gateway = inert_gateway();
        let mut store = StrategicMemory::new("a", StreamLabel::Efficiency, OptimizerLimits::default());
        for i in 0..10 {
            store.insert(guideline(&format!("g{i}"), 0.9, GuidelineDomain::Efficiency), &gateway);
        }
        let outcome = store.insert(guideline("g10", 0.9, GuidelineDomain::Efficiency), &gateway);
        match outcome {
            StrategicInsert::Inserted(Some(report)) => {
                assert_eq!(report.before_count, 11);
            }
            other => panic!("expected optimization report, got {other:?}"),
        }
    }

    #[test]
    fn strategic_duplicate_text_rejected_before_insert() {
        let gateway = inert_gateway();
        let mut store = StrategicMemory::new("a", StreamLabel::Efficiency, OptimizerLimits::default());
        store.insert(guideline("same", 0.9, GuidelineDomain::Safety), &gateway);
        let outcome = store.insert(guideline("same", 0.8, GuidelineDomain::Safety), &gateway);
        assert_eq!(outcome, StrategicInsert::RejectedDuplicateText);
        assert_eq!(store.bucket(GuidelineDomain::Safety).len(), 1);
    }

    #[test]
    fn snapshot_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let gateway = inert_gateway();
        let mut store = StrategicMemory::new("browser", StreamLabel::Thoroughness, OptimizerLimits::default());
        store.insert(guideline("g1", 0.91, GuidelineDomain::ToolUsage), &gateway);
        store.insert(guideline("g2", 0.87, GuidelineDomain::Safety), &gateway);
        store.insert(guideline("g3", 0.99, GuidelineDomain::Efficiency), &gateway);
        store.save(dir.path()).unwrap();
        let loaded = StrategicMemory::load(
            dir.path(),
            &StreamLabel::Thoroughness,
            "browser",
            OptimizerLimits::default(),
        )
        .unwrap();
        assert_eq!(loaded, store);
    }

    #[test]
    fn snapshot_version_gate() {
        let text = r#"{"version": "0", "agent_name": "a", "stream": "efficiency", "buckets": {}}"#;
        let err = StrategicMemory::from_snapshot_text(text, OptimizerLimits::default()).unwrap_err();
        match err {
            MemoryError::CorruptSnapshot { kind, .. } => assert_eq!(kind, SnapshotFault::Version),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn truncated_snapshot_is_a_parse_fault() {
        let text = r#"{"version": "1", "agent_name": "a", "stre"#;
        let err = StrategicMemory::from_snapshot_text(text, OptimizerLimits::default()).unwrap_err();
        match err {
            MemoryError::CorruptSnapshot { kind, .. } => assert_eq!(kind, SnapshotFault::Parse),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn clearing_tactical_leaves_strategic_untouched() {
        let gateway = inert_gateway();
        let mut strategic = StrategicMemory::new("a", StreamLabel::Efficiency, OptimizerLimits::default());
        strategic.insert(guideline("keep me", 0.9, GuidelineDomain::General), &gateway);
        let mut tactical = TacticalMemory::new("t1", 20);
        tactical.insert(guideline("temp", 0.9, GuidelineDomain::General));
        tactical.clear();
        assert_eq!(strategic.total_len(), 1);
    }
}
