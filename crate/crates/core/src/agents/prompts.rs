//! Versioned prompt templates with strict `{placeholder}` interpolation.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

pub const PROMPT_VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template {template}: no value for {{{name}}}")]
    Missing { template: &'static str, name: String },
    #[error("template {template}: unknown variable {name:?}")]
    Unknown { template: &'static str, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    ZeroShotSystem,
    ZeroShotUser,
    TriageSystem,
    TriageUser,
    DoctorSystem,
    DoctorAnalysis,
    DoctorPrescription,
    RankingSystem,
    RankingUser,
    ConsultantSystem,
    ConsultantUser,
    CoderSystem,
    CoderUser,
    SynthesizerSystem,
    SynthesizerUser,
}

impl Template {
    pub const ALL: [Template; 15] = [
        Template::ZeroShotSystem,
        Template::ZeroShotUser,
        Template::TriageSystem,
        Template::TriageUser,
        Template::DoctorSystem,
        Template::DoctorAnalysis,
        Template::DoctorPrescription,
        Template::RankingSystem,
        Template::RankingUser,
        Template::ConsultantSystem,
        Template::ConsultantUser,
        Template::CoderSystem,
        Template::CoderUser,
        Template::SynthesizerSystem,
        Template::SynthesizerUser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::ZeroShotSystem => "zeroshot_system",
            Template::ZeroShotUser => "zeroshot_user",
            Template::TriageSystem => "triage_system",
            Template::TriageUser => "triage_user",
            Template::DoctorSystem => "doctor_system",
            Template::DoctorAnalysis => "doctor_analysis",
            Template::DoctorPrescription => "doctor_prescription",
            Template::RankingSystem => "ranking_system",
            Template::RankingUser => "ranking_user",
            Template::ConsultantSystem => "consultant_system",
            Template::ConsultantUser => "consultant_user",
            Template::CoderSystem => "coder_system",
            Template::CoderUser => "coder_user",
            Template::SynthesizerSystem => "synthesizer_system",
            Template::SynthesizerUser => "synthesizer_user",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Template::ZeroShotSystem => include_str!("../../prompts/v1/zeroshot_system.txt"),
            Template::ZeroShotUser => include_str!("../../prompts/v1/zeroshot_user.txt"),
            Template::TriageSystem => include_str!("../../prompts/v1/triage_system.txt"),
            Template::TriageUser => include_str!("../../prompts/v1/triage_user.txt"),
            Template::DoctorSystem => include_str!("../../prompts/v1/doctor_system.txt"),
            Template::DoctorAnalysis => include_str!("../../prompts/v1/doctor_analysis.txt"),
            Template::DoctorPrescription => include_str!("../../prompts/v1/doctor_prescription.txt"),
            Template::RankingSystem => include_str!("../../prompts/v1/ranking_system.txt"),
            Template::RankingUser => include_str!("../../prompts/v1/ranking_user.txt"),
            Template::ConsultantSystem => include_str!("../../prompts/v1/consultant_system.txt"),
            Template::ConsultantUser => include_str!("../../prompts/v1/consultant_user.txt"),
            Template::CoderSystem => include_str!("../../prompts/v1/coder_system.txt"),
            Template::CoderUser => include_str!("../../prompts/v1/coder_user.txt"),
            Template::SynthesizerSystem => include_str!("../../prompts/v1/synthesizer_system.txt"),
            Template::SynthesizerUser => include_str!("../../prompts/v1/synthesizer_user.txt"),
        }
    }

    pub fn placeholders(self) -> BTreeSet<&'static str> {
        placeholder_re()
            .captures_iter(self.source())
            .map(|c| c.get(1).expect("group").as_str())
            .collect()
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("valid regex"))
}

/// Fills every placeholder. Every variable must be used and every
/// placeholder supplied.
pub fn render(template: Template, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let wanted = template.placeholders();
    for (name, _) in vars {
        if !wanted.contains(name) {
            return Err(PromptError::Unknown {
                template: template.name(),
                name: name.to_string(),
            });
        }
    }
    let mut missing = None;
    let out = placeholder_re().replace_all(template.source(), |c: &regex::Captures| {
        let name = &c[1];
        match vars.iter().find(|(n, _)| *n == name) {
            Some((_, v)) => v.to_string(),
            None => {
                missing.get_or_insert_with(|| name.to_string());
                String::new()
            }
        }
    });
    match missing {
        Some(name) => Err(PromptError::Missing {
            template: template.name(),
            name,
        }),
        None => Ok(out.trim_end().to_string()),
    }
}

/// A template with no placeholders, such as a system prompt.
pub fn system(template: Template) -> String {
    debug_assert!(template.placeholders().is_empty(), "{} has placeholders", template.name());
    template.source().trim_end().to_string()
}
