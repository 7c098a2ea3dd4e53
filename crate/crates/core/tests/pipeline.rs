use std::fs;
use std::path::Path;
use std::sync::Arc;

use vivaldi::config::Config;
use vivaldi::llm::{model_profile, LlmClient, RecordingBackend, ReplayBackend};
use vivaldi::orchestrator::{
    run_agentic_case, run_zero_shot_case, RunConfig, RunMode, FAILURE_FILE, FINAL_FILE, SNAPSHOT_FILE, USAGE_FILE,
};
use vivaldi::smb::CaseState;
use vivaldi::synthetic::{synthetic_case, team_backend, CoderBehavior, SyntheticExecutor, TeamScript};

const MODEL: &str = "gpt-5.2";

fn client(script: TeamScript) -> LlmClient {
    let profile = model_profile(&Config::default(), MODEL).unwrap();
    LlmClient::new(Arc::new(team_backend(script)), profile)
}

fn snapshot(dir: &Path) -> CaseState {
    serde_json::from_str(&fs::read_to_string(dir.join(SNAPSHOT_FILE)).unwrap()).unwrap()
}

#[test]
fn never_sufficient_runs_all_rounds() {
    let out = tempfile::tempdir().unwrap();
    let case = synthetic_case("V1", 1);
    let script = TeamScript {
        sufficient_at: None,
        ..TeamScript::default()
    };
    let cfg = RunConfig::new(RunMode::Agentic, MODEL, out.path());
    let report = run_agentic_case(&client(script), &case, &cfg, &mut SyntheticExecutor::default()).unwrap();
    assert_eq!(report.rounds_used, 3);
    assert!(!report.terminated_early);

    let state = snapshot(&report.case_dir);
    assert!(state.finalized);
    assert_eq!(state.doctor_notes.len(), 3);
    assert_eq!(state.consultant_notes.len(), 3);
    assert!(state.shortlist.len() <= 3);
    assert!(state
        .shortlist
        .windows(2)
        .all(|w| w[0].relevance >= w[1].relevance));
    for img in state.shortlist.iter().chain(&state.triage_panel) {
        assert!(report.case_dir.join(&img.path).is_file(), "{}", img.path.display());
    }
    // Estimates follow the doctor's last round, not the synthesizer.
    assert_eq!(report.final_assessment.esi_level, 2);
    assert_eq!(report.final_assessment.ed_los_hours, 7.0);
    for f in [FINAL_FILE, USAGE_FILE] {
        assert!(report.case_dir.join(f).is_file());
    }
    assert!(report.case_dir.join("images/triage_panel.png").is_file());
    assert!(fs::read_dir(report.case_dir.join("scripts")).unwrap().count() > 0);
}

#[test]
fn early_sufficiency_stops_after_one_round() {
    let out = tempfile::tempdir().unwrap();
    let script = TeamScript {
        sufficient_at: Some(1),
        ..TeamScript::default()
    };
    let cfg = RunConfig::new(RunMode::Agentic, MODEL, out.path());
    let report =
        run_agentic_case(&client(script), &synthetic_case("V2", 2), &cfg, &mut SyntheticExecutor::default()).unwrap();
    assert_eq!(report.rounds_used, 1);
    assert!(report.terminated_early);
    assert_eq!(report.final_assessment.esi_level, 3);
}

#[test]
fn adversarial_synthesizer_is_overridden() {
    let out = tempfile::tempdir().unwrap();
    let script = TeamScript {
        synthesizer_estimates: Some((5, 0, 1.0)),
        ..TeamScript::default()
    };
    let cfg = RunConfig::new(RunMode::Agentic, MODEL, out.path());
    let report =
        run_agentic_case(&client(script), &synthetic_case("V3", 3), &cfg, &mut SyntheticExecutor::default()).unwrap();
    let f = &report.final_assessment;
    assert_eq!((f.esi_level, f.pain_score, f.ed_los_hours), (2, 4, 7.0));
    assert!(report
        .warnings
        .iter()
        .any(|w| w.contains("synthesizer values replaced")));
}

#[test]
fn coder_failures_are_recorded_not_fatal() {
    let out = tempfile::tempdir().unwrap();
    let script = TeamScript {
        coder: CoderBehavior::AlwaysImport,
        sufficient_at: Some(1),
        ..TeamScript::default()
    };
    let cfg = RunConfig::new(RunMode::Agentic, MODEL, out.path());
    let mut exec = SyntheticExecutor::default();
    let report = run_agentic_case(&client(script), &synthetic_case("V4", 4), &cfg, &mut exec).unwrap();
    assert_eq!(exec.executed, 0, "lint must stop every script before execution");
    let state = snapshot(&report.case_dir);
    let coder: Vec<_> = state.calc_results.iter().filter(|r| r.iteration > 0).collect();
    assert!(!coder.is_empty());
    for r in coder {
        assert!(!r.success);
        assert_eq!(r.failed_attempts.len(), 2);
        assert!(r.error_detail.as_deref().unwrap().contains("Static check failed"));
    }
    // No coder figure survived, so the final figure is the triage panel.
    assert_eq!(report.final_assessment.figures.len(), 1);
}

#[test]
fn repaired_script_succeeds() {
    let out = tempfile::tempdir().unwrap();
    let script = TeamScript {
        coder: CoderBehavior::FailFirst,
        sufficient_at: Some(1),
        ..TeamScript::default()
    };
    let cfg = RunConfig::new(RunMode::Agentic, MODEL, out.path());
    let report =
        run_agentic_case(&client(script), &synthetic_case("V5", 5), &cfg, &mut SyntheticExecutor::default()).unwrap();
    let state = snapshot(&report.case_dir);
    let coder: Vec<_> = state.calc_results.iter().filter(|r| r.iteration > 0).collect();
    assert!(coder.iter().all(|r| r.success && r.failed_attempts.len() == 1));
}

#[test]
fn record_then_replay_is_byte_identical() {
    let rec = tempfile::tempdir().unwrap();
    let transcript = rec.path().join("transcript.jsonl");
    let profile = model_profile(&Config::default(), MODEL).unwrap();
    let case = synthetic_case("V6", 6);

    let recording = RecordingBackend::create(Box::new(team_backend(TeamScript::default())), &transcript).unwrap();
    let client = LlmClient::new(Arc::new(recording), profile.clone());
    let cfg = RunConfig::new(RunMode::Agentic, MODEL, rec.path().join("live"));
    run_agentic_case(&client, &case, &cfg, &mut SyntheticExecutor::default()).unwrap();

    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let client = LlmClient::new(Arc::new(ReplayBackend::open(&transcript).unwrap()), profile.clone());
        let cfg = RunConfig::new(RunMode::Agentic, MODEL, rec.path().join(run));
        let report = run_agentic_case(&client, &case, &cfg, &mut SyntheticExecutor::default()).unwrap();
        outputs.push((
            fs::read(report.case_dir.join(SNAPSHOT_FILE)).unwrap(),
            fs::read(report.case_dir.join(FINAL_FILE)).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let live = fs::read(cfg.case_dir("V6").join(FINAL_FILE)).unwrap();
    assert_eq!(live, outputs[0].1);
}

#[test]
fn replay_miss_aborts_with_partial_snapshot() {
    let out = tempfile::tempdir().unwrap();
    let profile = model_profile(&Config::default(), MODEL).unwrap();
    let client = LlmClient::new(Arc::new(ReplayBackend::from_entries([])), profile);
    let cfg = RunConfig::new(RunMode::Agentic, MODEL, out.path());
    let err = run_agentic_case(&client, &synthetic_case("V7", 7), &cfg, &mut SyntheticExecutor::default()).unwrap_err();
    assert!(err.replay_miss().is_some());
    let dir = cfg.case_dir("V7");
    assert!(dir.join(FAILURE_FILE).is_file());
    assert!(!snapshot(&dir).finalized);
    assert!(!dir.join(FINAL_FILE).exists());
}

#[test]
fn zero_shot_reports_self_computed_metrics() {
    let out = tempfile::tempdir().unwrap();
    let cfg = RunConfig::new(RunMode::Zeroshot, MODEL, out.path());
    let report = run_zero_shot_case(&client(TeamScript::default()), &synthetic_case("V8", 8), &cfg).unwrap();
    assert_eq!(report.rounds_used, 0);
    let metrics = report.final_assessment.self_reported.unwrap();
    assert!(metrics.shock_index.is_some() && metrics.qsofa.is_some());
    assert!(report.final_assessment.figures.is_empty());
    assert!(!report.case_dir.join("images").exists());
    assert_eq!(report.usage.total().model_calls, 1);
}
