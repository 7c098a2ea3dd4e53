//! Shared memory buffer: the per-case state every agent reads and the
//! orchestrator writes.
//!
//! Lists are append-only, the sufficiency flag is sticky and a finalized case
//! rejects further writes. The triage panel is held outside the shortlist and
//! is never pruned.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::clinical::{SafetyMetrics, ThresholdBand};
use crate::ingest::PatientCase;
use crate::llm::UsageLedger;

pub const SNAPSHOT_VERSION: u32 = 1;
pub const DEFAULT_SHORTLIST_K: usize = 3;
pub const DEFAULT_MAX_ROUNDS: u32 = 3;

#[derive(Debug, Error)]
pub enum SmbError {
    #[error("case is finalized")]
    FinalizedCase,
    #[error("round limit {0} reached")]
    RoundLimit(u32),
    #[error("relevance {0} outside 1..=10")]
    Relevance(u8),
    #[error("snapshot: {0}")]
    Snapshot(#[from] serde_json::Error),
    #[error("snapshot version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageOrigin {
    TriagePanel,
    Coder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    /// Relative to the case artifact directory.
    pub path: PathBuf,
    pub caption: String,
    pub relevance: u8,
    pub source_iteration: u32,
    pub origin: ImageOrigin,
}

/// A failed coder attempt kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedAttempt {
    pub script: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalculationResult {
    pub task_description: String,
    pub value: Option<Value>,
    pub interpretation: String,
    pub figure_paths: Vec<PathBuf>,
    /// Script of the final attempt, verbatim.
    pub executed_script: String,
    pub success: bool,
    pub error_detail: Option<String>,
    pub iteration: u32,
    /// Earlier attempts for the same task that failed lint or execution.
    #[serde(default)]
    pub failed_attempts: Vec<FailedAttempt>,
}

impl CalculationResult {
    pub fn is_consistent(&self) -> bool {
        !self.success || (self.value.is_some() && !self.interpretation.trim().is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub esi: u8,
    pub pain: u8,
    pub los_hours: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scene {
    Triage,
    Analysis,
    Critique,
    Prescription,
    Dispatch,
    Ranking,
    Synthesis,
    ZeroShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEvent {
    pub round: u32,
    pub scene: Scene,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseState {
    pub version: u32,
    pub prompt_version: String,
    pub patient: PatientCase,
    pub clinical_context: String,
    pub thresholds: Vec<ThresholdBand>,
    pub safety: SafetyMetrics,
    pub triage_panel: Option<ImageRecord>,
    pub calc_results: Vec<CalculationResult>,
    pub doctor_notes: Vec<String>,
    pub doctor_estimates: Vec<Estimates>,
    pub consultant_notes: Vec<String>,
    pub shortlist: Vec<ImageRecord>,
    pub shortlist_k: usize,
    pub round: u32,
    pub max_rounds: u32,
    pub sufficient: bool,
    pub finalized: bool,
    pub usage: UsageLedger,
    pub warnings: Vec<String>,
    pub events: Vec<SceneEvent>,
}

/// Orders records by relevance (high first), then newer iteration, keeping
/// input order for full ties, and keeps the first `k`. Returns
/// `(kept, pruned)`.
pub fn rank_records(records: Vec<ImageRecord>, k: usize) -> (Vec<ImageRecord>, Vec<ImageRecord>) {
    let mut all = records;
    all.sort_by(|a, b| {
        b.relevance
            .cmp(&a.relevance)
            .then(b.source_iteration.cmp(&a.source_iteration))
    });
    let pruned = all.split_off(k.min(all.len()));
    (all, pruned)
}

impl CaseState {
    pub fn new(patient: PatientCase, shortlist_k: usize, max_rounds: u32, prompt_version: &str) -> Self {
        CaseState {
            version: SNAPSHOT_VERSION,
            prompt_version: prompt_version.to_string(),
            patient,
            clinical_context: String::new(),
            thresholds: Vec::new(),
            safety: SafetyMetrics::default(),
            triage_panel: None,
            calc_results: Vec::new(),
            doctor_notes: Vec::new(),
            doctor_estimates: Vec::new(),
            consultant_notes: Vec::new(),
            shortlist: Vec::new(),
            shortlist_k,
            round: 0,
            max_rounds,
            sufficient: false,
            finalized: false,
            usage: UsageLedger::default(),
            warnings: Vec::new(),
            events: Vec::new(),
        }
    }

    fn writable(&self) -> Result<(), SmbError> {
        if self.finalized {
            Err(SmbError::FinalizedCase)
        } else {
            Ok(())
        }
    }

    pub fn set_triage(
        &mut self,
        context: String,
        thresholds: Vec<ThresholdBand>,
        safety: SafetyMetrics,
        panel: Option<ImageRecord>,
    ) -> Result<(), SmbError> {
        self.writable()?;
        self.clinical_context = context;
        self.thresholds = thresholds;
        self.safety = safety;
        self.triage_panel = panel;
        Ok(())
    }

    pub fn append_result(&mut self, result: CalculationResult) -> Result<(), SmbError> {
        self.writable()?;
        self.calc_results.push(result);
        Ok(())
    }

    pub fn append_doctor_note(&mut self, note: String, estimates: Estimates) -> Result<(), SmbError> {
        self.writable()?;
        self.doctor_notes.push(note);
        self.doctor_estimates.push(estimates);
        Ok(())
    }

    pub fn append_consultant_note(&mut self, note: String) -> Result<(), SmbError> {
        self.writable()?;
        self.consultant_notes.push(note);
        Ok(())
    }

    /// Once true, stays true.
    pub fn set_sufficient(&mut self, sufficient: bool) -> Result<(), SmbError> {
        self.writable()?;
        self.sufficient |= sufficient;
        Ok(())
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("{}: {message}", self.patient.visit_id);
        self.warnings.push(message);
    }

    pub fn log_event(&mut self, scene: Scene, summary: impl Into<String>) -> Result<(), SmbError> {
        self.writable()?;
        self.events.push(SceneEvent {
            round: self.round,
            scene,
            summary: summary.into(),
        });
        Ok(())
    }

    pub fn begin_round(&mut self) -> Result<u32, SmbError> {
        self.writable()?;
        if self.round >= self.max_rounds {
            return Err(SmbError::RoundLimit(self.max_rounds));
        }
        self.round += 1;
        Ok(self.round)
    }

    /// Merges new reviews into the shortlist and returns the records that were
    /// pruned. Pruned files stay on disk.
    pub fn merge_shortlist(&mut self, new: Vec<ImageRecord>) -> Result<Vec<ImageRecord>, SmbError> {
        self.writable()?;
        if let Some(bad) = new.iter().find(|r| !(1..=10).contains(&r.relevance)) {
            return Err(SmbError::Relevance(bad.relevance));
        }
        let mut all = std::mem::take(&mut self.shortlist);
        all.extend(new);
        let (kept, pruned) = rank_records(all, self.shortlist_k);
        self.shortlist = kept;
        Ok(pruned)
    }

    pub fn finalize(&mut self) {
        self.finalized = true;
    }

    pub fn latest_estimates(&self) -> Option<Estimates> {
        self.doctor_estimates.last().copied()
    }

    /// Panel first (if any), then the shortlist.
    pub fn context_images(&self) -> Vec<&ImageRecord> {
        self.triage_panel.iter().chain(self.shortlist.iter()).collect()
    }

    pub fn snapshot(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn restore(json: &str) -> Result<CaseState, SmbError> {
        let state: CaseState = serde_json::from_str(json)?;
        if state.version != SNAPSHOT_VERSION {
            return Err(SmbError::Version {
                found: state.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{GroundTruth, Vitals, Window};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    pub(crate) fn patient() -> PatientCase {
        let start = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        PatientCase {
            visit_id: "V1".into(),
            age: 60,
            gender: "F".into(),
            ethnicity: "Unknown".into(),
            chief_complaint: "Dyspnea".into(),
            pmh: vec![],
            meds: vec![],
            vitals: Vitals::new(),
            truth: GroundTruth {
                esi: 2,
                los_hours: 8.0,
                pain: 3,
            },
            window: Window {
                start,
                end: start + chrono::Duration::hours(24),
            },
        }
    }

    fn rec(relevance: u8, source_iteration: u32, name: &str) -> ImageRecord {
        ImageRecord {
            path: PathBuf::from(format!("images/{name}.png")),
            caption: name.into(),
            relevance,
            source_iteration,
            origin: ImageOrigin::Coder,
        }
    }

    fn names(s: &CaseState) -> Vec<String> {
        s.shortlist.iter().map(|r| r.caption.clone()).collect()
    }

    #[test]
    fn simple_ordering() {
        let mut s = CaseState::new(patient(), 3, 3, "v1");
        s.merge_shortlist(vec![rec(9, 1, "a"), rec(8, 1, "b")]).unwrap();
        s.merge_shortlist(vec![rec(10, 2, "c")]).unwrap();
        assert_eq!(names(&s), ["c", "a", "b"]);
    }

    #[test]
    fn newer_tie_wins() {
        let mut s = CaseState::new(patient(), 3, 3, "v1");
        s.merge_shortlist(vec![rec(9, 1, "a"), rec(8, 1, "b"), rec(7, 1, "old")]).unwrap();
        let pruned = s.merge_shortlist(vec![rec(7, 2, "new")]).unwrap();
        assert_eq!(names(&s), ["a", "b", "new"]);
        assert_eq!(pruned[0].caption, "old");
    }

    #[test]
    fn full_tie_keeps_existing_first() {
        let mut s = CaseState::new(patient(), 1, 3, "v1");
        s.merge_shortlist(vec![rec(5, 1, "first")]).unwrap();
        s.merge_shortlist(vec![rec(5, 1, "second")]).unwrap();
        assert_eq!(names(&s), ["first"]);
    }

    #[test]
    fn relevance_checked() {
        let mut s = CaseState::new(patient(), 3, 3, "v1");
        assert!(matches!(s.merge_shortlist(vec![rec(0, 1, "x")]), Err(SmbError::Relevance(0))));
        assert!(matches!(s.merge_shortlist(vec![rec(11, 1, "x")]), Err(SmbError::Relevance(11))));
    }

    #[test]
    fn sticky_sufficiency_and_finalize_guard() {
        let mut s = CaseState::new(patient(), 3, 3, "v1");
        s.set_sufficient(true).unwrap();
        s.set_sufficient(false).unwrap();
        assert!(s.sufficient);
        s.append_consultant_note("c".into()).unwrap();
        assert_eq!(s.consultant_notes, ["c"]);
        s.finalize();
        assert!(matches!(s.append_consultant_note("d".into()), Err(SmbError::FinalizedCase)));
        assert!(matches!(s.set_sufficient(true), Err(SmbError::FinalizedCase)));
        assert_eq!(s.consultant_notes.len(), 1);
    }

    #[test]
    fn round_limit() {
        let mut s = CaseState::new(patient(), 3, 2, "v1");
        assert_eq!(s.begin_round().unwrap(), 1);
        assert_eq!(s.begin_round().unwrap(), 2);
        assert!(matches!(s.begin_round(), Err(SmbError::RoundLimit(2))));
    }

    #[test]
    fn snapshot_roundtrip_keeps_scripts() {
        let mut s = CaseState::new(patient(), 3, 3, "v1");
        let script = "x = 1\nresult = {'v': x / 3}\ninterpretation = 'ok'\n";
        s.append_result(CalculationResult {
            task_description: "t".into(),
            value: Some(serde_json::json!({"v": 1.0 / 3.0})),
            interpretation: "ok".into(),
            figure_paths: vec![PathBuf::from("images/a.png")],
            executed_script: script.into(),
            success: true,
            error_detail: None,
            iteration: 1,
            failed_attempts: vec![],
        })
        .unwrap();
        let snap = s.snapshot();
        assert!(snap.contains(&serde_json::to_string(script).unwrap()));
        let back = CaseState::restore(&snap).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.snapshot(), snap);
    }

    #[test]
    fn restore_rejects_other_versions() {
        let mut s = CaseState::new(patient(), 3, 3, "v1");
        s.version = 99;
        assert!(matches!(
            CaseState::restore(&s.snapshot()),
            Err(SmbError::Version { found: 99, .. })
        ));
    }

    /// Reference: repeatedly pick the best remaining record by explicit
    /// comparison of (relevance, iteration, earliest position).
    fn reference_top_k(records: &[ImageRecord], k: usize) -> Vec<ImageRecord> {
        let mut left: Vec<(usize, &ImageRecord)> = records.iter().enumerate().collect();
        let mut out = Vec::new();
        while out.len() < k && !left.is_empty() {
            let mut best = 0;
            for i in 1..left.len() {
                let (pi, a) = left[i];
                let (pb, b) = left[best];
                let better = a.relevance > b.relevance
                    || (a.relevance == b.relevance && a.source_iteration > b.source_iteration)
                    || (a.relevance == b.relevance && a.source_iteration == b.source_iteration && pi < pb);
                if better {
                    best = i;
                }
            }
            out.push(left.remove(best).1.clone());
        }
        out
    }

    proptest! {
        #[test]
        fn shortlist_matches_reference(batches in prop::collection::vec(prop::collection::vec((1u8..=10, 0u32..4), 0..5), 1..5), k in 1usize..5) {
            let mut s = CaseState::new(patient(), k, 3, "v1");
            let mut seen: Vec<ImageRecord> = Vec::new();
            let mut n = 0;
            for batch in batches {
                let recs: Vec<ImageRecord> = batch.into_iter().map(|(r, it)| { n += 1; rec(r, it, &n.to_string()) }).collect();
                s.merge_shortlist(recs.clone()).unwrap();
                // reference operates on current shortlist + new batch, in that order
                let mut pool = seen.clone();
                pool.extend(recs);
                seen = reference_top_k(&pool, k);
                prop_assert_eq!(&s.shortlist, &seen);
                prop_assert!(s.shortlist.len() <= k);
                prop_assert!(s.shortlist.windows(2).all(|w| w[0].relevance >= w[1].relevance));
            }
        }

        #[test]
        fn append_only(notes in prop::collection::vec("[a-z]{0,8}", 0..10)) {
            let mut s = CaseState::new(patient(), 3, 3, "v1");
            let mut prev: Vec<String> = Vec::new();
            for n in notes {
                s.append_consultant_note(n).unwrap();
                prop_assert_eq!(&s.consultant_notes[..prev.len()], &prev[..]);
                prev = s.consultant_notes.clone();
            }
        }
    }
}
