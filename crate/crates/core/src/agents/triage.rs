use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::panel::{render_vitals_panel, PanelError};
use super::prompts::{self, Template};
use super::AgentError;
use crate::clinical::{compute_all, summarize_vitals, Metric, SafetyMetrics, ThresholdBand};
use crate::ingest::{PatientCase, Signal};
use crate::llm::{AgentRole, LlmClient, Part, SchemaId, StructuredOutput};
use crate::llm::UsageLedger;
use crate::smb::{CalculationResult, CaseState, ImageOrigin, ImageRecord, SmbError};

/// Panel location relative to the case directory.
pub const PANEL_FILE: &str = "images/triage_panel.png";

/// What the triage model is asked to return. Any metric values it volunteers
/// are ignored; the safety metrics always come from the local kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct TriageResponse {
    /// Patient profile summary and specific risks for the medical team.
    pub clinical_context: String,
    /// Personalized bands; signals left out keep the standard bands.
    #[serde(default)]
    pub thresholds: Vec<ThresholdBand>,
}

impl StructuredOutput for TriageResponse {
    const SCHEMA_ID: SchemaId = SchemaId::Triage;
    fn validate(&self) -> Result<(), String> {
        if self.clinical_context.trim().is_empty() {
            return Err("clinical_context is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageOutput {
    pub clinical_context: String,
    pub thresholds: Vec<ThresholdBand>,
    pub safety: SafetyMetrics,
    pub panel: Option<ImageRecord>,
    pub warnings: Vec<String>,
}

impl TriageOutput {
    /// Writes the triage baseline into the buffer and seeds the calculation
    /// history with the deterministic safety metrics.
    pub fn apply(self, state: &mut CaseState) -> Result<(), SmbError> {
        for w in &self.warnings {
            state.warn(w.clone());
        }
        for r in seed_results(&self.safety) {
            state.append_result(r)?;
        }
        state.set_triage(self.clinical_context, self.thresholds, self.safety, self.panel)
    }
}

/// Merges proposed bands over the defaults. A SpO2 band is lifted to 100% at
/// the top; any band that is still invalid falls back to the default.
pub fn resolve_thresholds(proposed: &[ThresholdBand], defaults: &[ThresholdBand]) -> (Vec<ThresholdBand>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(defaults.len());
    for default in defaults {
        let mut chosen = *default;
        for p in proposed.iter().filter(|p| p.signal == default.signal) {
            let mut p = *p;
            if p.signal == Signal::Spo2 && (p.normal_high < 100.0 || p.warn_high < 100.0) {
                p.normal_high = 100.0;
                p.warn_high = 100.0;
                warnings.push("triage SpO2 band raised to 100% at the top".to_string());
            }
            match p.validate() {
                Ok(()) => {
                    chosen = p;
                    break;
                }
                Err(e) => warnings.push(format!("triage band rejected, using default: {e}")),
            }
        }
        out.push(chosen);
    }
    (out, warnings)
}

fn list_or_none(items: &[String]) -> String {
    if items.is_empty() {
        "None recorded".to_string()
    } else {
        items.join(", ")
    }
}

/// Safety baseline: local metrics, one model call for context and bands, and
/// the vitals panel shaded with the resolved bands.
pub fn run_triage(
    client: &LlmClient,
    case: &PatientCase,
    defaults: &[ThresholdBand],
    case_dir: &Path,
    ledger: &mut UsageLedger,
) -> Result<TriageOutput, AgentError> {
    let safety = compute_all(case);
    let user = prompts::render(
        Template::TriageUser,
        &[
            ("age", &case.age.to_string()),
            ("gender", &case.gender),
            ("ethnicity", &case.ethnicity),
            ("chief_complaint", &case.chief_complaint),
            ("vitals_summary", &summarize_vitals(&case.vitals)),
            ("pmh", &list_or_none(&case.pmh)),
            ("meds", &list_or_none(&case.meds)),
        ],
    )?;
    let request = client.request(
        AgentRole::Triage,
        &prompts::system(Template::TriageSystem),
        vec![Part::text(user)],
        None,
    );
    let reply = client.complete_structured::<TriageResponse>(&request, ledger, |_| Ok(()))?;
    let (thresholds, mut warnings) = resolve_thresholds(&reply.value.thresholds, defaults);

    let panel = match render_vitals_panel(&case.vitals, &thresholds, &case_dir.join(PANEL_FILE)) {
        Ok(layout) => {
            let names: Vec<&str> = layout.signals.iter().map(|s| s.label()).collect();
            Some(ImageRecord {
                path: PathBuf::from(PANEL_FILE),
                caption: format!("Vitals panel ({}) with personalized normal and warning bands", names.join(", ")),
                relevance: 10,
                source_iteration: 0,
                origin: ImageOrigin::TriagePanel,
            })
        }
        Err(PanelError::NoData) => {
            warnings.push("no vitals to plot; triage panel skipped".into());
            None
        }
        Err(e) => return Err(e.into()),
    };

    Ok(TriageOutput {
        clinical_context: reply.value.clinical_context.trim().to_string(),
        thresholds,
        safety,
        panel,
        warnings,
    })
}

fn metric_result<T: Copy + Into<f64>>(
    task: &str,
    metric: &Option<Metric<T>>,
    unit: &str,
    interpret: impl Fn(f64) -> String,
) -> CalculationResult {
    let base = CalculationResult {
        task_description: task.to_string(),
        value: None,
        interpretation: String::new(),
        figure_paths: Vec::new(),
        executed_script: String::new(),
        success: false,
        error_detail: None,
        iteration: 0,
        failed_attempts: Vec::new(),
    };
    match metric {
        Some(m) => {
            let v: f64 = m.value.into();
            CalculationResult {
                value: Some(json!({
                    "value": v,
                    "unit": unit,
                    "start": m.span.start.to_rfc3339(),
                    "end": m.span.end.to_rfc3339(),
                })),
                interpretation: interpret(v),
                success: true,
                ..base
            }
        }
        None => CalculationResult {
            error_detail: Some("insufficient data".into()),
            ..base
        },
    }
}

/// The deterministic triage metrics as iteration-0 calculation results, so
/// later prompts and the coder dedup see them like any other calculation.
pub fn seed_results(s: &SafetyMetrics) -> Vec<CalculationResult> {
    vec![
        metric_result("Calculate Shock Index", &s.shock_index, "ratio", |v| {
            format!("Shock Index {v:.2} ({})", if v >= 0.9 { "elevated, >= 0.9" } else { "below 0.9" })
        }),
        metric_result("Calculate MAP", &s.map_mmhg, "mmHg", |v| {
            format!("MAP {v:.1} mmHg ({})", if v < 65.0 { "below 65, hypoperfusion risk" } else { "at least 65" })
        }),
        metric_result("Calculate qSOFA", &s.qsofa_vitals, "points", |v| {
            format!("Vitals-only qSOFA {v:.0}/2 ({})", if v >= 2.0 { "positive" } else { "negative" })
        }),
        metric_result("Calculate SIRS", &s.sirs_vitals, "criteria", |v| {
            format!("Vitals-only SIRS {v:.0}/3 ({})", if v >= 2.0 { "criteria met" } else { "criteria not met" })
        }),
        metric_result("Calculate Pulse Pressure", &s.pulse_pressure_mmhg, "mmHg", |v| {
            let note = if v < 25.0 {
                "narrow"
            } else if v > 60.0 {
                "wide"
            } else {
                "within 25-60"
            };
            format!("Pulse pressure {v:.1} mmHg ({note})")
        }),
        metric_result("Calculate SpO2 Trend", &s.spo2_trend_per_hour, "%/h", |v| {
            format!("SpO2 trend {v:+.2} %/h over the window")
        }),
        metric_result("Calculate HR Volatility", &s.hr_volatility_bpm, "bpm", |v| {
            format!("HR standard deviation {v:.2} bpm over the window")
        }),
    ]
}
