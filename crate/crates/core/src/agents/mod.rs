//! The role-conditioned agents: triage, doctor (analysis, prescription,
//! ranking), consultant, coder, synthesizer and the single-call zero-shot
//! baseline.
//!
//! Each agent assembles its prompt from the versioned templates in
//! [`prompts`], makes its model calls through [`LlmClient`] and validates the
//! output before anything reaches the shared memory buffer.

mod coder;
mod consultant;
mod doctor;
pub mod lint;
pub mod panel;
pub mod prompts;
mod synthesis;
mod triage;

use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{AgentRole, LlmError, SchemaId, StructuredOutput};
use crate::sandbox::ExecutorError;
use crate::smb::{CalculationResult, CaseState, SmbError};

pub use coder::{coder_generate, solve_task, task_artifact_dir, CoderOptions};
pub use consultant::{consultant_critique, parse_consultant};
pub use doctor::{doctor_analyze, doctor_prescribe, doctor_rank, parse_estimates};
pub use lint::{coder_static_lint, LintViolation};
pub use panel::{render_vitals_panel, PanelError};
pub use prompts::{PromptError, Template, PROMPT_VERSION};
pub use synthesis::{final_figures, format_vitals_raw, run_zero_shot, synthesize, RAW_SAMPLES};
pub use triage::{resolve_thresholds, run_triage, seed_results, TriageOutput, TriageResponse, PANEL_FILE};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("{} output could not be parsed after repair: {message}", agent.as_str())]
    Parse {
        agent: AgentRole,
        message: String,
        attempts: Vec<String>,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("triage panel: {0}")]
    TriagePanel(#[from] PanelError),
    #[error(transparent)]
    State(#[from] SmbError),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoctorAnalysis {
    pub markdown: String,
    pub esi: u8,
    pub pain: u8,
    pub los_hours: f64,
    pub reflection_present: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsultantFeedback {
    pub markdown: String,
    pub critique: String,
    pub differentials: Vec<String>,
    pub rule_out_tasks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct TaskSpec {
    /// Plain-language instruction for the coder.
    pub description: String,
    /// Whether the task is expected to save at least one figure.
    pub produces_plot: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct PrescriptionResponse {
    pub tasks: Vec<TaskSpec>,
}

impl StructuredOutput for PrescriptionResponse {
    const SCHEMA_ID: SchemaId = SchemaId::Prescription;
    fn validate(&self) -> Result<(), String> {
        if self.tasks.iter().any(|t| t.description.trim().is_empty()) {
            return Err("task descriptions must be non-empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrescription {
    pub tasks: Vec<TaskSpec>,
    /// Plot tasks kept after the `max_images` cap.
    pub requested_plots: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ImageReview {
    /// 1-based position of the image in the order presented.
    pub image_index: u32,
    /// Clinical relevance from 1 (low) to 10 (high).
    pub relevance: u8,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct RankingDecision {
    pub reviews: Vec<ImageReview>,
    pub is_sufficient: bool,
}

impl StructuredOutput for RankingDecision {
    const SCHEMA_ID: SchemaId = SchemaId::Ranking;
    fn validate(&self) -> Result<(), String> {
        if let Some(r) = self.reviews.iter().find(|r| r.relevance > 10) {
            return Err(format!("relevance {} for image {} exceeds 10", r.relevance, r.image_index));
        }
        Ok(())
    }
}

/// Every image in `1..=n` reviewed exactly once.
pub fn check_review_indices(decision: &RankingDecision, n: usize) -> Result<(), String> {
    let mut seen = vec![false; n];
    for r in &decision.reviews {
        let i = r.image_index as usize;
        if i == 0 || i > n {
            return Err(format!("image_index {i} out of range 1..={n}"));
        }
        if std::mem::replace(&mut seen[i - 1], true) {
            return Err(format!("image_index {i} reviewed more than once"));
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(format!("image {} has no review; rate every image", missing + 1));
    }
    Ok(())
}

fn check_estimates(esi: u8, pain: u8, los: f64) -> Result<(), String> {
    if !(1..=5).contains(&esi) {
        return Err(format!("esi_level {esi} outside 1..=5"));
    }
    if pain > 10 {
        return Err(format!("pain_score {pain} outside 0..=10"));
    }
    if !(los.is_finite() && los > 0.0) {
        return Err(format!("ed_los {los} must be a positive number of hours"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct SynthesisResponse {
    /// ESI level 1-5.
    pub esi_level: u8,
    /// Pain score 0-10.
    pub pain_score: u8,
    /// Predicted ED length of stay in hours.
    pub ed_los: f64,
    /// Clinical interpretation citing figures inline as (Figure N).
    pub narrative: String,
    /// Short factual caption per figure, in figure order.
    pub figure_captions: Vec<String>,
}

impl StructuredOutput for SynthesisResponse {
    const SCHEMA_ID: SchemaId = SchemaId::Synthesis;
    fn validate(&self) -> Result<(), String> {
        check_estimates(self.esi_level, self.pain_score, self.ed_los)?;
        if self.narrative.trim().is_empty() {
            return Err("narrative is empty".into());
        }
        Ok(())
    }
}

/// Metrics the zero-shot model computes itself from the raw samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct DerivedMetrics {
    pub shock_index: Option<f64>,
    pub map_mmhg: Option<f64>,
    pub qsofa: Option<u8>,
    pub sirs: Option<u8>,
    pub pulse_pressure_mmhg: Option<f64>,
    pub spo2_trend_per_hour: Option<f64>,
    pub hr_volatility_bpm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ZeroShotResponse {
    /// ESI level 1-5.
    pub esi_level: u8,
    /// Pain score 0-10.
    pub pain_score: u8,
    /// Predicted ED length of stay in hours.
    pub ed_los: f64,
    /// Assessment with pathophysiologic justification of the estimates.
    pub narrative: String,
    pub derived_metrics: DerivedMetrics,
}

impl StructuredOutput for ZeroShotResponse {
    const SCHEMA_ID: SchemaId = SchemaId::ZeroShot;
    fn validate(&self) -> Result<(), String> {
        check_estimates(self.esi_level, self.pain_score, self.ed_los)?;
        if self.narrative.trim().is_empty() {
            return Err("narrative is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalAssessment {
    pub esi_level: u8,
    pub pain_score: u8,
    pub ed_los_hours: f64,
    pub narrative: String,
    pub figure_captions: Vec<String>,
    /// Figures referenced as Figure 1..N, relative to the case directory.
    pub figures: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_reported: Option<DerivedMetrics>,
}

/// Numbered calculation history used by every prompt that shows results.
pub fn render_calculations(results: &[CalculationResult]) -> String {
    if results.is_empty() {
        return "No calculations available yet.".to_string();
    }
    results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let head = format!("{}. {} [iteration {}]", i + 1, r.task_description, r.iteration);
            if !r.success {
                return format!(
                    "{head}\n   Status: FAILED ({})",
                    r.error_detail.as_deref().unwrap_or("no detail")
                );
            }
            let value = r
                .value
                .as_ref()
                .map(|v| serde_json::to_string(v).expect("value serializes"))
                .unwrap_or_default();
            let mut s = format!("{head}\n   Result: {value}\n   Interpretation: {}", r.interpretation);
            if !r.figure_paths.is_empty() {
                let figs: Vec<String> = r.figure_paths.iter().map(|p| p.display().to_string()).collect();
                s.push_str(&format!("\n   Figures: {}", figs.join(", ")));
            }
            s
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Absolute path of an artifact recorded relative to the case directory.
pub(crate) fn resolve(case_dir: &Path, rel: &Path) -> PathBuf {
    if rel.is_absolute() {
        rel.to_path_buf()
    } else {
        case_dir.join(rel)
    }
}

/// Bullet list, or a placeholder line for empty input.
pub(crate) fn bullet_list(items: &[String], empty: &str) -> String {
    if items.is_empty() {
        empty.to_string()
    } else {
        items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
    }
}

pub(crate) fn latest_analysis(state: &CaseState) -> &str {
    state.doctor_notes.last().map(String::as_str).unwrap_or("")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decision(indices: &[u32]) -> RankingDecision {
        RankingDecision {
            reviews: indices
                .iter()
                .map(|&i| ImageReview {
                    image_index: i,
                    relevance: 5,
                    rationale: String::new(),
                })
                .collect(),
            is_sufficient: false,
        }
    }

    #[test]
    fn review_index_rules() {
        assert!(check_review_indices(&decision(&[2, 1, 3]), 3).is_ok());
        assert!(check_review_indices(&decision(&[]), 0).is_ok());
        assert!(check_review_indices(&decision(&[9]), 4).unwrap_err().contains("out of range"));
        assert!(check_review_indices(&decision(&[1, 1]), 2).unwrap_err().contains("more than once"));
        assert!(check_review_indices(&decision(&[1]), 2).unwrap_err().contains("no review"));
        assert!(check_review_indices(&decision(&[0]), 1).is_err());
    }

    #[test]
    fn estimate_ranges() {
        assert!(check_estimates(1, 0, 0.5).is_ok());
        assert!(check_estimates(6, 0, 1.0).is_err());
        assert!(check_estimates(3, 11, 1.0).is_err());
        assert!(check_estimates(3, 5, 0.0).is_err());
        assert!(check_estimates(3, 5, f64::NAN).is_err());
    }

    #[test]
    fn calculation_rendering() {
        assert_eq!(render_calculations(&[]), "No calculations available yet.");
        let ok = CalculationResult {
            task_description: "Calculate MAP".into(),
            value: Some(serde_json::json!({"value": 70.0})),
            interpretation: "MAP 70 mmHg".into(),
            figure_paths: vec![PathBuf::from("images/a.png")],
            executed_script: String::new(),
            success: true,
            error_detail: None,
            iteration: 1,
            failed_attempts: vec![],
        };
        let mut bad = ok.clone();
        bad.success = false;
        bad.error_detail = Some("boom".into());
        let s = render_calculations(&[ok, bad]);
        assert_eq!(
            s,
            "1. Calculate MAP [iteration 1]\n   Result: {\"value\":70.0}\n   Interpretation: MAP 70 mmHg\n   Figures: images/a.png\n2. Calculate MAP [iteration 1]\n   Status: FAILED (boom)"
        );
    }
}
