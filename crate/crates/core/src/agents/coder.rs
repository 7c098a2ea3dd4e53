use std::path::{Path, PathBuf};

use super::lint::{coder_static_lint, describe, strip_fences};
use super::prompts::{self, Template};
use super::{render_calculations, AgentError, TaskSpec};
use crate::clinical::summarize_vitals;
use crate::llm::{repair_note, AgentRole, LlmClient, Part};
use crate::sandbox::{ExecRequest, ExecStatus, Executor};
use crate::smb::{CalculationResult, CaseState, FailedAttempt};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoderOptions {
    /// Model calls per task, shared by lint rejections and runtime failures.
    pub max_attempts: u32,
    pub max_images: usize,
    pub timeout_s: u64,
}

impl Default for CoderOptions {
    fn default() -> Self {
        CoderOptions {
            max_attempts: 3,
            max_images: 3,
            timeout_s: 30,
        }
    }
}

/// One coder call. The previous failure, if any, is appended so the model
/// can fix it. Returns the script with any markdown fence removed.
pub fn coder_generate(
    client: &LlmClient,
    state: &mut CaseState,
    task: &str,
    parameters: &str,
    previous: Option<&FailedAttempt>,
) -> Result<String, AgentError> {
    let user = prompts::render(
        Template::CoderUser,
        &[
            ("vitals_summary", &summarize_vitals(&state.patient.vitals)),
            ("parameters", parameters),
            ("clinical_context", &state.clinical_context),
            ("calculation_results", &render_calculations(&state.calc_results)),
            ("task_description", task),
        ],
    )?;
    let mut parts = vec![Part::text(user)];
    if let Some(p) = previous {
        parts.push(Part::text(repair_note(&p.script, &p.error)));
    }
    let request = client.request(AgentRole::Coder, &prompts::system(Template::CoderSystem), parts, None);
    let reply = client.complete(&request, &mut state.usage)?;
    Ok(strip_fences(&reply.text))
}

/// Directory the sandbox writes figures for one task into, relative to the
/// case directory. Unique per round and task so figures never collide.
pub fn task_artifact_dir(round: u32, task_index: usize) -> PathBuf {
    PathBuf::from("images").join(format!("r{round}_t{task_index}"))
}

/// Generate, lint and execute until the script succeeds or the attempt
/// budget runs out. The result is returned, not appended.
pub fn solve_task(
    client: &LlmClient,
    state: &mut CaseState,
    task: &TaskSpec,
    task_index: usize,
    opts: &CoderOptions,
    executor: &mut dyn Executor,
    case_dir: &Path,
) -> Result<CalculationResult, AgentError> {
    let parameters = format!(
        "iteration={}, task_index={task_index}, max_images={}",
        state.round, opts.max_images
    );
    let rel_dir = task_artifact_dir(state.round, task_index);
    let art_dir = case_dir.join(&rel_dir);
    let mut failed: Vec<FailedAttempt> = Vec::new();

    for _ in 0..opts.max_attempts.max(1) {
        let script = coder_generate(client, state, &task.description, &parameters, failed.last())?;
        if let Err(v) = coder_static_lint(&script) {
            failed.push(FailedAttempt {
                script,
                error: format!("Static check failed:\n{}", describe(&v)),
            });
            continue;
        }
        let request = ExecRequest::for_case(&state.patient, &script, &art_dir, opts.timeout_s);
        let response = executor.execute(&request)?.checked(&art_dir);
        state.usage.record_exec(AgentRole::Coder, response.wall_ms);
        if response.status == ExecStatus::Ok {
            return Ok(CalculationResult {
                task_description: task.description.clone(),
                value: response.result,
                interpretation: response.interpretation.unwrap_or_default().trim().to_string(),
                figure_paths: response.figures.iter().map(|f| rel_dir.join(f)).collect(),
                executed_script: script,
                success: true,
                error_detail: None,
                iteration: state.round,
                failed_attempts: failed,
            });
        }
        let status = serde_json::to_value(response.status).expect("status serializes");
        failed.push(FailedAttempt {
            script,
            error: format!(
                "Execution failed ({}):\n{}",
                status.as_str().unwrap_or("error"),
                response.stderr_excerpt.trim()
            ),
        });
    }

    let last = failed.pop().expect("at least one attempt");
    Ok(CalculationResult {
        task_description: task.description.clone(),
        value: None,
        interpretation: String::new(),
        figure_paths: Vec::new(),
        executed_script: last.script,
        success: false,
        error_detail: Some(last.error),
        iteration: state.round,
        failed_attempts: failed,
    })
}
