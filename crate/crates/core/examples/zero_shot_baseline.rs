//! Single-call baseline that sees the raw vitals as text and reports its own
//! derived metrics next to the deterministic ones.

use std::sync::Arc;

use vivaldi::agents::{format_vitals_raw, RAW_SAMPLES};
use vivaldi::clinical::compute_all;
use vivaldi::config::Config;
use vivaldi::llm::{model_profile, LlmClient};
use vivaldi::orchestrator::{run_zero_shot_case, RunConfig, RunMode};
use vivaldi::synthetic::{synthetic_case, team_backend, TeamScript};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = tempfile::tempdir()?;
    let case = synthetic_case("DEMO-ZS", 5);
    println!("{}", format_vitals_raw(&case.vitals, RAW_SAMPLES).lines().take(6).collect::<Vec<_>>().join("\n"));

    let profile = model_profile(&Config::default(), "gpt-5.2")?;
    let client = LlmClient::new(Arc::new(team_backend(TeamScript::default())), profile);
    let cfg = RunConfig::new(RunMode::Zeroshot, "gpt-5.2", out.path());
    let report = run_zero_shot_case(&client, &case, &cfg)?;

    let f = &report.final_assessment;
    println!("\nESI {}, pain {}, LOS {} h", f.esi_level, f.pain_score, f.ed_los_hours);
    let reference = compute_all(&case);
    if let Some(m) = &f.self_reported {
        println!("self-reported shock index {:?}, reference {:?}", m.shock_index, reference.shock_index.map(|x| x.value));
        println!("self-reported qSOFA {:?}, reference {:?}", m.qsofa, reference.qsofa_vitals.map(|x| x.value));
    }
    Ok(())
}
