use std::path::Path;

use super::prompts::{self, Template};
use super::{bullet_list, render_calculations, resolve, AgentError, FinalAssessment, SynthesisResponse, ZeroShotResponse};
use crate::clinical::summarize_vitals;
use crate::ingest::{PatientCase, Signal, Vitals};
use crate::llm::UsageLedger;
use crate::llm::{AgentRole, LlmClient, Part};
use crate::smb::{CaseState, ImageRecord};

/// Samples per signal shown to the zero-shot model.
pub const RAW_SAMPLES: usize = 30;

/// The last [`RAW_SAMPLES`] readings of each signal, one line per reading.
pub fn format_vitals_raw(vitals: &Vitals, per_signal: usize) -> String {
    let mut blocks = Vec::new();
    for signal in Signal::ALL {
        let series = vitals.series(signal);
        if series.is_empty() {
            continue;
        }
        let tail = &series[series.len().saturating_sub(per_signal)..];
        let mut block = format!("{} ({}):", signal.label(), signal.unit());
        for s in tail {
            block.push_str(&format!("\n- {}: {:.1}", s.timestamp.format("%Y-%m-%d %H:%M:%S"), s.value));
        }
        blocks.push(block);
    }
    if blocks.is_empty() {
        "No vital sign samples recorded.".to_string()
    } else {
        blocks.join("\n\n")
    }
}

fn doctor_evolution(state: &CaseState) -> String {
    state
        .doctor_notes
        .iter()
        .enumerate()
        .map(|(i, note)| {
            let consult = state
                .consultant_notes
                .get(i)
                .map(String::as_str)
                .unwrap_or("(no consultant note this iteration)");
            format!("### Iteration {}\n\n**Doctor:**\n{note}\n\n**Consultant:**\n{consult}", i + 1)
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Figures handed to the synthesizer: the shortlist, or the triage panel
/// when no coder figure survived.
pub fn final_figures(state: &CaseState) -> Vec<ImageRecord> {
    if state.shortlist.is_empty() {
        state.triage_panel.iter().cloned().collect()
    } else {
        state.shortlist.clone()
    }
}

/// Synthesis scene. ESI, pain and LOS are always the doctor's latest
/// estimates; a disagreeing synthesizer value is replaced and a warning kept.
pub fn synthesize(client: &LlmClient, state: &mut CaseState, case_dir: &Path) -> Result<FinalAssessment, AgentError> {
    let figures = final_figures(state);
    let reviews = if figures.is_empty() {
        "No figures available.".to_string()
    } else {
        figures
            .iter()
            .enumerate()
            .map(|(i, f)| format!("Figure {}: {} (relevance {}/10)", i + 1, f.caption, f.relevance))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let user = prompts::render(
        Template::SynthesizerUser,
        &[
            ("clinical_context", &state.clinical_context),
            ("vitals_summary", &summarize_vitals(&state.patient.vitals)),
            ("calculation_results", &render_calculations(&state.calc_results)),
            ("doctor_evolution", &doctor_evolution(state)),
            ("image_reviews", &reviews),
        ],
    )?;
    let mut parts = vec![Part::text(user)];
    for (i, f) in figures.iter().enumerate() {
        parts.push(Part::text(format!("Figure {}:", i + 1)));
        parts.push(Part::image(resolve(case_dir, &f.path)));
    }
    let request = client.request(
        AgentRole::Synthesizer,
        &prompts::system(Template::SynthesizerSystem),
        parts,
        None,
    );
    let reply = client.complete_structured::<SynthesisResponse>(&request, &mut state.usage, |_| Ok(()))?;
    let mut out = reply.value;

    if let Some(doc) = state.latest_estimates() {
        let mut overridden = Vec::new();
        if out.esi_level != doc.esi {
            overridden.push(format!("ESI {} -> {}", out.esi_level, doc.esi));
            out.esi_level = doc.esi;
        }
        if out.pain_score != doc.pain {
            overridden.push(format!("pain {} -> {}", out.pain_score, doc.pain));
            out.pain_score = doc.pain;
        }
        if out.ed_los != doc.los_hours {
            overridden.push(format!("LOS {} -> {}", out.ed_los, doc.los_hours));
            out.ed_los = doc.los_hours;
        }
        if !overridden.is_empty() {
            state.warn(format!("synthesizer values replaced by the doctor's: {}", overridden.join(", ")));
        }
    }
    if out.figure_captions.len() > figures.len() {
        state.warn(format!(
            "synthesizer returned {} captions for {} figures; extras dropped",
            out.figure_captions.len(),
            figures.len()
        ));
        out.figure_captions.truncate(figures.len());
    }

    Ok(FinalAssessment {
        esi_level: out.esi_level,
        pain_score: out.pain_score,
        ed_los_hours: out.ed_los,
        narrative: out.narrative.trim().to_string(),
        figure_captions: out.figure_captions,
        figures: figures.into_iter().map(|f| f.path).collect(),
        self_reported: None,
    })
}

/// Single-call baseline on the raw record: no tools, no images, and the
/// model reports the derived metrics it computed itself.
pub fn run_zero_shot(client: &LlmClient, case: &PatientCase, ledger: &mut UsageLedger) -> Result<FinalAssessment, AgentError> {
    let user = prompts::render(
        Template::ZeroShotUser,
        &[
            ("age", &case.age.to_string()),
            ("gender", &case.gender),
            ("ethnicity", &case.ethnicity),
            ("chief_complaint", &case.chief_complaint),
            ("vitals_summary", &summarize_vitals(&case.vitals)),
            ("vitals_raw", &format_vitals_raw(&case.vitals, RAW_SAMPLES)),
            ("pmh_list", &bullet_list(&case.pmh, "- None recorded")),
            ("meds_list", &bullet_list(&case.meds, "- None recorded")),
        ],
    )?;
    let request = client.request(
        AgentRole::Zeroshot,
        &prompts::system(Template::ZeroShotSystem),
        vec![Part::text(user)],
        None,
    );
    let reply = client.complete_structured::<ZeroShotResponse>(&request, ledger, |_| Ok(()))?;
    let r = reply.value;
    Ok(FinalAssessment {
        esi_level: r.esi_level,
        pain_score: r.pain_score,
        ed_los_hours: r.ed_los,
        narrative: r.narrative.trim().to_string(),
        figure_captions: Vec::new(),
        figures: Vec::new(),
        self_reported: Some(r.derived_metrics),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::VitalsSample;
    use chrono::{Duration, TimeZone, Utc};

    #[test]
    fn raw_vitals_keep_the_tail() {
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let v = Vitals::from_samples((0..40).map(|i| VitalsSample {
            timestamp: t0 + Duration::minutes(i),
            value: i as f64,
            signal: Signal::Hr,
        }));
        let s = format_vitals_raw(&v, RAW_SAMPLES);
        assert_eq!(s.lines().count(), 31);
        assert!(s.starts_with("HR (bpm):\n- 2024-01-01 00:10:00: 10.0"));
        assert!(s.ends_with("00:39:00: 39.0"));
        assert_eq!(format_vitals_raw(&Vitals::new(), 30), "No vital sign samples recorded.");
    }
}
