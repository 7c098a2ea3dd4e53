//! Runs the full agent loop on one synthetic case with a scripted team and
//! the in-process executor, then prints the final assessment.

use std::sync::Arc;

use vivaldi::config::Config;
use vivaldi::llm::{model_profile, LlmClient};
use vivaldi::orchestrator::{run_agentic_case, RunConfig, RunMode};
use vivaldi::synthetic::{synthetic_case, team_backend, SyntheticExecutor, TeamScript};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = tempfile::tempdir()?;
    let profile = model_profile(&Config::default(), "gpt-5.2")?;
    let client = LlmClient::new(Arc::new(team_backend(TeamScript::default())), profile);
    let cfg = RunConfig::new(RunMode::Agentic, "gpt-5.2", out.path());
    let mut executor = SyntheticExecutor::default();

    let report = run_agentic_case(&client, &synthetic_case("DEMO-1", 1), &cfg, &mut executor)?;
    let f = &report.final_assessment;
    println!(
        "{}: ESI {}, pain {}, LOS {} h after {} rounds ({} scripts executed)",
        report.visit_id, f.esi_level, f.pain_score, f.ed_los_hours, report.rounds_used, executor.executed
    );
    for (i, caption) in f.figure_captions.iter().enumerate() {
        println!("  Figure {}: {caption}", i + 1);
    }
    for w in &report.warnings {
        println!("  warning: {w}");
    }
    println!("artifacts under {}:", report.case_dir.display());
    for a in &report.artifacts {
        println!("  {}", a.display());
    }
    Ok(())
}
