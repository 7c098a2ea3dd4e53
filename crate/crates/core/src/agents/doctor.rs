use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;

use super::prompts::{self, Template};
use super::{
    check_review_indices, latest_analysis, render_calculations, resolve, AgentError, ConsultantFeedback,
    DoctorAnalysis, PrescriptionResponse, RankingDecision, TaskPrescription,
};
use crate::clinical::summarize_vitals;
use crate::llm::{repair_note, AgentRole, LlmClient, Part};
use crate::smb::{CaseState, Estimates, ImageOrigin, ImageRecord};

fn regexes() -> &'static [Regex; 4] {
    static RE: OnceLock<[Regex; 4]> = OnceLock::new();
    RE.get_or_init(|| {
        let num = r"(\d+(?:\.\d+)?)";
        [
            Regex::new(r"(?i)\bESI\b[^0-9\n]{0,30}?([1-5])\b").unwrap(),
            Regex::new(r"(?i)\bpain(?:\s*score)?\b[^0-9\n]{0,30}?(\d{1,2})\b").unwrap(),
            Regex::new(&format!(
                r"(?i)(?:length\s+of\s+stay|\bLOS\b)[^0-9\n]{{0,40}}?{num}(?:\s*(?:-|\u{{2013}}|to)\s*{num})?"
            ))
            .unwrap(),
            Regex::new(r"(?im)reflection\**\s*:?\s*\**\s*\S").unwrap(),
        ]
    })
}

/// Pulls ESI, pain and LOS out of the acuity section of a doctor analysis.
/// A LOS range resolves to its midpoint. The boolean reports whether a
/// reflection on previous estimates is present.
pub fn parse_estimates(text: &str) -> Result<(Estimates, bool), String> {
    let section = text
        .rfind("Acuity Estimation")
        .map(|i| &text[i..])
        .unwrap_or(text);
    let [esi_re, pain_re, los_re, reflection_re] = regexes();
    let esi: u8 = esi_re
        .captures(section)
        .and_then(|c| c[1].parse().ok())
        .ok_or("no ESI level (1-5) found under Acuity Estimation")?;
    let pain: u8 = pain_re
        .captures(section)
        .and_then(|c| c[1].parse().ok())
        .filter(|p| *p <= 10)
        .ok_or("no pain score (0-10) found under Acuity Estimation")?;
    let los = los_re
        .captures(section)
        .and_then(|c| {
            let lo: f64 = c[1].parse().ok()?;
            match c.get(2) {
                Some(hi) => Some((lo + hi.as_str().parse::<f64>().ok()?) / 2.0),
                None => Some(lo),
            }
        })
        .filter(|h| h.is_finite() && *h > 0.0)
        .ok_or("no ED length of stay in hours found under Acuity Estimation")?;
    let reflection = reflection_re.is_match(section);
    Ok((
        Estimates {
            esi,
            pain,
            los_hours: los,
        },
        reflection,
    ))
}

fn context_image_parts(state: &CaseState, case_dir: &Path) -> Vec<Part> {
    state
        .context_images()
        .into_iter()
        .flat_map(|img| {
            [
                Part::text(format!("Image: {} ({})", img.path.display(), img.caption)),
                Part::image(resolve(case_dir, &img.path)),
            ]
        })
        .collect()
}

/// Analysis scene: working diagnosis plus the current acuity estimates. One
/// repair is attempted if the estimates cannot be read.
pub fn doctor_analyze(client: &LlmClient, state: &mut CaseState, case_dir: &Path) -> Result<DoctorAnalysis, AgentError> {
    let user = prompts::render(
        Template::DoctorAnalysis,
        &[
            ("iteration", &state.round.to_string()),
            ("clinical_context", &state.clinical_context),
            ("vitals_summary", &summarize_vitals(&state.patient.vitals)),
            ("calculation_results", &render_calculations(&state.calc_results)),
        ],
    )?;
    let mut parts = vec![Part::text(user)];
    parts.extend(context_image_parts(state, case_dir));
    let request = client.request(AgentRole::Doctor, &prompts::system(Template::DoctorSystem), parts, None);

    let mut attempts = Vec::new();
    let mut current = request.clone();
    for _ in 0..2 {
        let reply = client.complete(&current, &mut state.usage)?;
        let text = reply.text.trim().to_string();
        match parse_estimates(&text) {
            Ok((est, reflection)) => {
                if !reflection && state.round > 1 {
                    state.warn(format!("round {}: doctor analysis has no reflection on prior estimates", state.round));
                }
                state.append_doctor_note(text.clone(), est)?;
                return Ok(DoctorAnalysis {
                    markdown: text,
                    esi: est.esi,
                    pain: est.pain,
                    los_hours: est.los_hours,
                    reflection_present: reflection,
                });
            }
            Err(e) => {
                current = request.clone();
                current.parts.push(Part::text(repair_note(&text, &e)));
                attempts.push(text);
                if attempts.len() == 2 {
                    return Err(AgentError::Parse {
                        agent: AgentRole::Doctor,
                        message: e,
                        attempts,
                    });
                }
            }
        }
    }
    unreachable!("loop returns on the second attempt")
}

fn norm(s: &str) -> String {
    s.trim().to_string()
}

/// Prescription scene. Tasks already answered by a successful calculation or
/// repeated within the list are dropped, and plot tasks are capped at
/// `max_images`.
pub fn doctor_prescribe(
    client: &LlmClient,
    state: &mut CaseState,
    analysis: &DoctorAnalysis,
    feedback: &ConsultantFeedback,
    max_images: usize,
) -> Result<TaskPrescription, AgentError> {
    let user = prompts::render(
        Template::DoctorPrescription,
        &[
            ("doctor_analysis", &analysis.markdown),
            ("consultant_feedback", &feedback.markdown),
            ("max_images", &max_images.to_string()),
        ],
    )?;
    let request = client.request(
        AgentRole::Doctor,
        &prompts::system(Template::DoctorSystem),
        vec![Part::text(user)],
        None,
    );
    let reply = client.complete_structured::<PrescriptionResponse>(&request, &mut state.usage, |_| Ok(()))?;

    let mut seen: HashSet<String> = state
        .calc_results
        .iter()
        .filter(|r| r.success)
        .map(|r| norm(&r.task_description))
        .collect();
    let mut plots = 0;
    let mut tasks = Vec::new();
    for mut t in reply.value.tasks {
        t.description = t.description.trim().to_string();
        if !seen.insert(norm(&t.description)) {
            log::debug!("dropping duplicate task {:?}", t.description);
            continue;
        }
        if t.produces_plot {
            if plots == max_images {
                state.warn(format!("plot task over the limit of {max_images} dropped: {}", t.description));
                continue;
            }
            plots += 1;
        }
        tasks.push(t);
    }
    Ok(TaskPrescription {
        tasks,
        requested_plots: plots,
    })
}

/// Ranking scene: rates this round's figures, merges them into the
/// shortlist and records the sufficiency vote. `candidates` pairs each
/// figure (relative to `case_dir`) with the task that produced it.
pub fn doctor_rank(
    client: &LlmClient,
    state: &mut CaseState,
    candidates: &[(PathBuf, String)],
    case_dir: &Path,
) -> Result<RankingDecision, AgentError> {
    let user = prompts::render(
        Template::RankingUser,
        &[
            ("clinical_context", &state.clinical_context),
            ("doctor_analysis", latest_analysis(state)),
            ("calculation_results", &render_calculations(&state.calc_results)),
            ("num_images", &candidates.len().to_string()),
        ],
    )?;
    let mut parts = vec![Part::text(user)];
    for (i, (path, task)) in candidates.iter().enumerate() {
        parts.push(Part::text(format!("Image {}: {} (task: {task})", i + 1, path.display())));
        parts.push(Part::image(resolve(case_dir, path)));
    }
    let request = client.request(AgentRole::Doctor, &prompts::system(Template::RankingSystem), parts, None);
    let n = candidates.len();
    let reply = client.complete_structured::<RankingDecision>(&request, &mut state.usage, |d| {
        check_review_indices(d, n)
    })?;
    let decision = reply.value;

    let records = decision
        .reviews
        .iter()
        .map(|r| {
            let (path, task) = &candidates[r.image_index as usize - 1];
            ImageRecord {
                path: path.clone(),
                caption: task.clone(),
                relevance: r.relevance.max(1),
                source_iteration: state.round,
                origin: ImageOrigin::Coder,
            }
        })
        .collect();
    let pruned = state.merge_shortlist(records)?;
    for p in pruned {
        log::debug!("pruned {} (relevance {})", p.path.display(), p.relevance);
    }
    state.set_sufficient(decision.is_sufficient)?;
    Ok(decision)
}
