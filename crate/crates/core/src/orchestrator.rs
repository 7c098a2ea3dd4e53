//! The five-scene case state machine: triage, then up to `max_rounds` of
//! analysis, critique, prescription, dispatch and ranking, then synthesis.
//!
//! Every scene boundary rewrites `snapshot.json`, so an aborted case always
//! leaves a readable partial state next to a `failure.json`.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    consultant_critique, doctor_analyze, doctor_prescribe, doctor_rank, run_triage, run_zero_shot, solve_task,
    synthesize, AgentError, CoderOptions, FinalAssessment, TaskSpec, PROMPT_VERSION,
};
use crate::clinical::{default_thresholds, ThresholdBand};
use crate::config::Config;
use crate::ingest::PatientCase;
use crate::llm::{BackendMode, LlmClient, LlmError, UsageLedger};
use crate::sandbox::Executor;
use crate::smb::{CaseState, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Agentic,
    Zeroshot,
}

impl RunMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Agentic => "agentic",
            RunMode::Zeroshot => "zeroshot",
        }
    }
}

impl std::str::FromStr for RunMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "agentic" => Ok(RunMode::Agentic),
            "zeroshot" | "zero-shot" => Ok(RunMode::Zeroshot),
            other => Err(format!("unknown mode {other:?} (agentic|zeroshot)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: RunMode,
    pub model_name: String,
    pub max_rounds: u32,
    pub shortlist_k: usize,
    pub max_images: usize,
    pub coder_retries: u32,
    pub sandbox_timeout_s: u64,
    pub backend: BackendMode,
    pub artifact_dir: PathBuf,
    /// Bands used when triage proposes none or invalid ones.
    pub thresholds: Vec<ThresholdBand>,
}

impl RunConfig {
    pub fn new(mode: RunMode, model_name: &str, artifact_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            mode,
            model_name: model_name.to_string(),
            max_rounds: crate::smb::DEFAULT_MAX_ROUNDS,
            shortlist_k: crate::smb::DEFAULT_SHORTLIST_K,
            max_images: 3,
            coder_retries: 3,
            sandbox_timeout_s: 30,
            backend: BackendMode::Replay,
            artifact_dir: artifact_dir.into(),
            thresholds: default_thresholds(),
        }
    }

    pub fn from_config(config: &Config, mode: RunMode, model_name: &str, artifact_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            max_rounds: config.run.max_rounds,
            shortlist_k: config.run.shortlist_k,
            max_images: config.run.max_images,
            coder_retries: config.run.coder_retries,
            sandbox_timeout_s: config.run.sandbox_timeout_s,
            backend: config.run.backend,
            thresholds: config.thresholds.clone(),
            ..RunConfig::new(mode, model_name, artifact_dir)
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_rounds < 1 {
            return Err("max_rounds must be at least 1".into());
        }
        if self.shortlist_k < 1 {
            return Err("shortlist_k must be at least 1".into());
        }
        if self.coder_retries < 1 {
            return Err("coder_retries must be at least 1".into());
        }
        Ok(())
    }

    /// `<artifact_dir>/<model>/<mode>/<visit_id>`, made absolute so sandbox
    /// workers resolve figure paths against the same root.
    pub fn case_dir(&self, visit_id: &str) -> PathBuf {
        let dir = self
            .artifact_dir
            .join(self.model_name.replace(['/', '\\'], "_"))
            .join(self.mode.as_str())
            .join(visit_id);
        std::path::absolute(&dir).unwrap_or(dir)
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("case {visit_id}: {scene:?} scene failed: {source}")]
    Agent {
        visit_id: String,
        scene: Scene,
        #[source]
        source: AgentError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl OrchestratorError {
    /// The replay digest when the failure was a transcript miss.
    pub fn replay_miss(&self) -> Option<&str> {
        match self {
            OrchestratorError::Agent {
                source: AgentError::Llm(LlmError::ReplayMiss { digest, .. }),
                ..
            } => Some(digest),
            _ => None,
        }
    }
}

/// Written next to the partial snapshot when a case aborts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureReport {
    pub visit_id: String,
    pub scene: Scene,
    pub round: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageFile {
    pub visit_id: String,
    pub model_name: String,
    pub mode: RunMode,
    pub usage: UsageLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRunReport {
    pub visit_id: String,
    pub mode: RunMode,
    pub model_name: String,
    pub final_assessment: FinalAssessment,
    pub rounds_used: u32,
    pub terminated_early: bool,
    pub usage: UsageLedger,
    pub warnings: Vec<String>,
    pub case_dir: PathBuf,
    /// Files written for the case, relative to `case_dir`.
    pub artifacts: Vec<PathBuf>,
}

pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const FINAL_FILE: &str = "final_assessment.json";
pub const USAGE_FILE: &str = "usage.json";
pub const FAILURE_FILE: &str = "failure.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary file so readers never see a torn file.
fn write_atomic(path: &Path, contents: &str) -> Result<(), OrchestratorError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

struct CaseRun<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    state: CaseState,
    scene: Scene,
}

impl CaseRun<'_> {
    fn checkpoint(&self) -> Result<(), OrchestratorError> {
        write_atomic(&self.dir.join(SNAPSHOT_FILE), &format!("{}\n", self.state.snapshot()))
    }

    fn enter(&mut self, scene: Scene) {
        self.scene = scene;
        log::info!("{} round {}: {scene:?}", self.state.patient.visit_id, self.state.round);
    }

    /// Records the scene in the event log and checkpoints.
    fn done(&mut self, summary: String) -> Result<(), OrchestratorError> {
        let scene = self.scene;
        self.state.log_event(scene, summary).map_err(|e| self.fail(e.into()))?;
        self.checkpoint()
    }

    fn fail(&self, source: AgentError) -> OrchestratorError {
        OrchestratorError::Agent {
            visit_id: self.state.patient.visit_id.clone(),
            scene: self.scene,
            source,
        }
    }

    /// Persists the partial state and a failure report, then returns the
    /// error unchanged.
    fn abort(&self, err: OrchestratorError) -> OrchestratorError {
        let report = FailureReport {
            visit_id: self.state.patient.visit_id.clone(),
            scene: self.scene,
            round: self.state.round,
            error: err.to_string(),
        };
        if let Err(e) = self
            .checkpoint()
            .and_then(|_| write_atomic(&self.dir.join(FAILURE_FILE), &to_json(&report)))
        {
            log::error!("could not persist failure state: {e}");
        }
        if let Err(e) = write_scripts(&self.state, &self.dir) {
            log::error!("could not persist scripts: {e}");
        }
        err
    }

    fn finish(
        mut self,
        final_assessment: FinalAssessment,
        rounds_used: u32,
    ) -> Result<CaseRunReport, OrchestratorError> {
        self.state.finalize();
        self.checkpoint()?;
        write_atomic(&self.dir.join(FINAL_FILE), &to_json(&final_assessment))?;
        let usage = UsageFile {
            visit_id: self.state.patient.visit_id.clone(),
            model_name: self.cfg.model_name.clone(),
            mode: self.cfg.mode,
            usage: self.state.usage.clone(),
        };
        write_atomic(&self.dir.join(USAGE_FILE), &to_json(&usage))?;
        let mut artifacts = vec![
            PathBuf::from(SNAPSHOT_FILE),
            PathBuf::from(FINAL_FILE),
            PathBuf::from(USAGE_FILE),
        ];
        artifacts.extend(write_scripts(&self.state, &self.dir)?);
        artifacts.extend(self.state.triage_panel.iter().map(|p| p.path.clone()));
        for r in &self.state.calc_results {
            artifacts.extend(r.figure_paths.iter().cloned());
        }
        Ok(CaseRunReport {
            visit_id: self.state.patient.visit_id.clone(),
            mode: self.cfg.mode,
            model_name: self.cfg.model_name.clone(),
            final_assessment,
            rounds_used,
            terminated_early: self.state.sufficient && rounds_used < self.cfg.max_rounds,
            usage: self.state.usage.clone(),
            warnings: self.state.warnings.clone(),
            case_dir: self.dir,
            artifacts,
        })
    }
}

/// Every coder attempt as a standalone file under `scripts/`, named by the
/// position of its calculation result and the attempt number.
fn write_scripts(state: &CaseState, dir: &Path) -> Result<Vec<PathBuf>, OrchestratorError> {
    let mut written = Vec::new();
    for (i, r) in state.calc_results.iter().enumerate() {
        if r.executed_script.is_empty() {
            continue;
        }
        let attempts = r
            .failed_attempts
            .iter()
            .map(|a| a.script.as_str())
            .chain(std::iter::once(r.executed_script.as_str()));
        for (k, script) in attempts.enumerate() {
            let rel = PathBuf::from("scripts").join(format!("calc{:02}_r{}_attempt{}.py", i + 1, r.iteration, k + 1));
            let path = dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::write(&path, script).map_err(io_err(&path))?;
            written.push(rel);
        }
    }
    Ok(written)
}

fn looks_like_plot(task: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(plot|graph|chart|visuali[sz]|histogram|scatter|figure|heat ?map|phase.space|overlay)").unwrap()
    })
    .is_match(task)
}

/// Dispatch order: doctor tasks first, then consultant rule-outs that are not
/// exact duplicates of a doctor task or a successful calculation.
pub fn dispatch_queue(state: &CaseState, doctor_tasks: &[TaskSpec], rule_outs: &[String]) -> Vec<TaskSpec> {
    let mut seen: HashSet<&str> = state
        .calc_results
        .iter()
        .filter(|r| r.success)
        .map(|r| r.task_description.trim())
        .collect();
    let mut queue = Vec::new();
    for t in doctor_tasks {
        if seen.insert(t.description.trim()) {
            queue.push(t.clone());
        }
    }
    for r in rule_outs {
        if seen.insert(r.trim()) {
            queue.push(TaskSpec {
                description: r.trim().to_string(),
                produces_plot: looks_like_plot(r),
            });
        }
    }
    queue
}

/// Runs the full agentic pipeline for one case and writes its artifact
/// directory under `cfg.artifact_dir/visit_id`.
pub fn run_agentic_case(
    client: &LlmClient,
    case: &PatientCase,
    cfg: &RunConfig,
    executor: &mut dyn Executor,
) -> Result<CaseRunReport, OrchestratorError> {
    cfg.validate().map_err(OrchestratorError::Config)?;
    let mut run = CaseRun {
        cfg,
        dir: cfg.case_dir(&case.visit_id),
        state: CaseState::new(case.clone(), cfg.shortlist_k, cfg.max_rounds, PROMPT_VERSION),
        scene: Scene::Triage,
    };
    match agentic_scenes(client, &mut run, executor) {
        Ok((final_assessment, rounds)) => run.finish(final_assessment, rounds),
        Err(e) => Err(run.abort(e)),
    }
}

fn agentic_scenes(
    client: &LlmClient,
    run: &mut CaseRun<'_>,
    executor: &mut dyn Executor,
) -> Result<(FinalAssessment, u32), OrchestratorError> {
    let dir = run.dir.clone();
    let coder = CoderOptions {
        max_attempts: run.cfg.coder_retries,
        max_images: run.cfg.max_images,
        timeout_s: run.cfg.sandbox_timeout_s,
    };

    run.enter(Scene::Triage);
    let triage = run_triage(client, &run.state.patient, &run.cfg.thresholds, &dir, &mut run.state.usage)
        .map_err(|e| run.fail(e))?;
    let adjusted = triage
        .thresholds
        .iter()
        .filter(|b| !run.cfg.thresholds.contains(b))
        .count();
    triage.apply(&mut run.state).map_err(|e| run.fail(e.into()))?;
    run.done(format!("baseline set; {adjusted} personalized bands"))?;

    while !run.state.sufficient && run.state.round < run.cfg.max_rounds {
        run.state.begin_round().map_err(|e| run.fail(e.into()))?;

        run.enter(Scene::Analysis);
        let analysis = doctor_analyze(client, &mut run.state, &dir).map_err(|e| run.fail(e))?;
        run.done(format!(
            "ESI {}, pain {}, LOS {}h",
            analysis.esi, analysis.pain, analysis.los_hours
        ))?;

        run.enter(Scene::Critique);
        let feedback = consultant_critique(client, &mut run.state, &analysis).map_err(|e| run.fail(e))?;
        run.done(format!(
            "{} differentials, {} rule-out tasks",
            feedback.differentials.len(),
            feedback.rule_out_tasks.len()
        ))?;

        run.enter(Scene::Prescription);
        let prescription =
            doctor_prescribe(client, &mut run.state, &analysis, &feedback, run.cfg.max_images).map_err(|e| run.fail(e))?;
        let queue = dispatch_queue(&run.state, &prescription.tasks, &feedback.rule_out_tasks);
        run.done(format!(
            "{} doctor tasks, {} dispatched",
            prescription.tasks.len(),
            queue.len()
        ))?;

        run.enter(Scene::Dispatch);
        let mut candidates = Vec::new();
        let mut failed = 0;
        for (i, task) in queue.iter().enumerate() {
            let result =
                solve_task(client, &mut run.state, task, i + 1, &coder, executor, &dir).map_err(|e| run.fail(e))?;
            if result.success {
                candidates.extend(result.figure_paths.iter().map(|p| (p.clone(), task.description.clone())));
            } else {
                failed += 1;
            }
            run.state.append_result(result).map_err(|e| run.fail(e.into()))?;
        }
        run.done(format!(
            "{} tasks, {failed} failed, {} figures",
            queue.len(),
            candidates.len()
        ))?;

        run.enter(Scene::Ranking);
        let decision = doctor_rank(client, &mut run.state, &candidates, &dir).map_err(|e| run.fail(e))?;
        run.done(format!(
            "{} reviewed, shortlist {}, sufficient={}",
            decision.reviews.len(),
            run.state.shortlist.len(),
            decision.is_sufficient
        ))?;
    }

    run.enter(Scene::Synthesis);
    let final_assessment = synthesize(client, &mut run.state, &dir).map_err(|e| run.fail(e))?;
    run.done(format!(
        "final ESI {}, pain {}, LOS {}h, {} figures",
        final_assessment.esi_level,
        final_assessment.pain_score,
        final_assessment.ed_los_hours,
        final_assessment.figures.len()
    ))?;
    Ok((final_assessment, run.state.round))
}

/// Single-call baseline. The snapshot holds the patient and usage only; no
/// images or scripts are produced.
pub fn run_zero_shot_case(
    client: &LlmClient,
    case: &PatientCase,
    cfg: &RunConfig,
) -> Result<CaseRunReport, OrchestratorError> {
    cfg.validate().map_err(OrchestratorError::Config)?;
    let mut run = CaseRun {
        cfg,
        dir: cfg.case_dir(&case.visit_id),
        state: CaseState::new(case.clone(), cfg.shortlist_k, cfg.max_rounds, PROMPT_VERSION),
        scene: Scene::ZeroShot,
    };
    run.enter(Scene::ZeroShot);
    let outcome = run_zero_shot(client, case, &mut run.state.usage).map_err(|e| run.fail(e));
    match outcome.and_then(|f| {
        run.done(format!(
            "ESI {}, pain {}, LOS {}h",
            f.esi_level, f.pain_score, f.ed_los_hours
        ))?;
        Ok(f)
    }) {
        Ok(f) => run.finish(f, 0),
        Err(e) => Err(run.abort(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_detection() {
        assert!(looks_like_plot("Plot HR vs SpO2 scatter"));
        assert!(looks_like_plot("Rolling SD visualization"));
        assert!(!looks_like_plot("Calculate the mean RR over the last 2 hours"));
    }

    #[test]
    fn config_bounds() {
        let mut cfg = RunConfig::new(RunMode::Agentic, "m", "/tmp/x");
        assert!(cfg.validate().is_ok());
        cfg.max_rounds = 0;
        assert!(cfg.validate().is_err());
        cfg.max_rounds = 1;
        cfg.shortlist_k = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("zeroshot".parse::<RunMode>().unwrap(), RunMode::Zeroshot);
        assert_eq!("agentic".parse::<RunMode>().unwrap(), RunMode::Agentic);
        assert!("both".parse::<RunMode>().is_err());
    }
}
