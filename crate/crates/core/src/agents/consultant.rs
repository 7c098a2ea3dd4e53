use std::sync::OnceLock;

use regex::Regex;

use super::prompts::{self, Template};
use super::{render_calculations, AgentError, ConsultantFeedback, DoctorAnalysis};
use crate::clinical::summarize_vitals;
use crate::llm::{repair_note, AgentRole, LlmClient, Part};
use crate::smb::CaseState;

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Critique,
    Differentials,
    Tasks,
}

fn heading(line: &str) -> Option<Section> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^#{1,4}\s*(.+?)\s*#*$").unwrap());
    let title = re.captures(line.trim())?.get(1)?.as_str().to_lowercase();
    if title.starts_with("critique") {
        Some(Section::Critique)
    } else if title.starts_with("differential") {
        Some(Section::Differentials)
    } else if title.starts_with("rule-out") || title.starts_with("rule out") {
        Some(Section::Tasks)
    } else {
        None
    }
}

fn bullet(line: &str) -> Option<&str> {
    let t = line.trim_start();
    let rest = t
        .strip_prefix("- ")
        .or_else(|| t.strip_prefix("* "))
        .or_else(|| {
            let digits = t.find(|c: char| !c.is_ascii_digit())?;
            (digits > 0).then(|| t[digits..].strip_prefix(". "))?
        })?;
    let rest = rest.trim();
    (!rest.is_empty()).then_some(rest)
}

/// Splits the consultant markdown into its three sections. All three
/// headings must be present and the critique must be non-empty.
pub fn parse_consultant(text: &str) -> Result<ConsultantFeedback, String> {
    let mut current = None;
    let mut found = [false; 3];
    let mut critique = Vec::new();
    let mut differentials = Vec::new();
    let mut tasks = Vec::new();
    for line in text.lines() {
        if let Some(s) = heading(line) {
            found[s as usize] = true;
            current = Some(s);
            continue;
        }
        match current {
            Some(Section::Critique) => critique.push(line),
            Some(Section::Differentials) => differentials.extend(bullet(line).map(String::from)),
            Some(Section::Tasks) => tasks.extend(bullet(line).map(String::from)),
            None => {}
        }
    }
    let names = ["# Critique", "# Differential Diagnosis", "# Rule-out Tasks"];
    if let Some(i) = found.iter().position(|f| !f) {
        return Err(format!("missing section {}", names[i]));
    }
    let critique = critique.join("\n").trim().to_string();
    if critique.is_empty() {
        return Err("the Critique section is empty".into());
    }
    Ok(ConsultantFeedback {
        markdown: text.trim().to_string(),
        critique,
        differentials,
        rule_out_tasks: tasks,
    })
}

/// Critique scene. The consultant sees text only; one repair is attempted
/// if the sections cannot be read.
pub fn consultant_critique(
    client: &LlmClient,
    state: &mut CaseState,
    analysis: &DoctorAnalysis,
) -> Result<ConsultantFeedback, AgentError> {
    let user = prompts::render(
        Template::ConsultantUser,
        &[
            ("clinical_context", &state.clinical_context),
            ("vitals_summary", &summarize_vitals(&state.patient.vitals)),
            ("calculation_results", &render_calculations(&state.calc_results)),
            ("doctor_analysis", &analysis.markdown),
        ],
    )?;
    let request = client.request(
        AgentRole::Consultant,
        &prompts::system(Template::ConsultantSystem),
        vec![Part::text(user)],
        None,
    );
    let mut attempts = Vec::new();
    let mut current = request.clone();
    loop {
        let reply = client.complete(&current, &mut state.usage)?;
        match parse_consultant(&reply.text) {
            Ok(feedback) => {
                state.append_consultant_note(feedback.markdown.clone())?;
                return Ok(feedback);
            }
            Err(e) if attempts.is_empty() => {
                current = request.clone();
                current.parts.push(Part::text(repair_note(&reply.text, &e)));
                attempts.push(reply.text);
            }
            Err(e) => {
                attempts.push(reply.text);
                return Err(AgentError::Parse {
                    agent: AgentRole::Consultant,
                    message: e,
                    attempts,
                });
            }
        }
    }
}
