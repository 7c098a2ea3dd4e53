//! Records model traffic to a transcript, then serves the same requests from
//! it without any model behind the client.

use std::sync::Arc;

use vivaldi::config::Config;
use vivaldi::llm::{model_profile, AgentRole, LlmClient, Part, RecordingBackend, ReplayBackend, ScriptedBackend, UsageLedger};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let transcript = dir.path().join("transcript.jsonl");
    let profile = model_profile(&Config::default(), "gpt-5.2")?;


    let echo = ScriptedBackend::new(|r| Ok(format!("Noted: {} words received.", r.text().split_whitespace().count())));
    let recorder = RecordingBackend::create(Box::new(echo), &transcript)?;
    let live = LlmClient::new(Arc::new(recorder), profile.clone());
    let request = live.request(
        AgentRole::Consultant,
        "You review clinical reasoning.",
        vec![Part::text("HR rose from 88 to 118 over four hours. Comment briefly.")],
        None,
    );
    let mut ledger = UsageLedger::default();
    let first = live.complete(&request, &mut ledger)?;
    println!("recorded: {}", first.text);

    let replay = LlmClient::new(Arc::new(ReplayBackend::open(&transcript)?), profile.clone());
    let again = replay.complete(&request, &mut ledger)?;
    println!("replayed: {}", again.text);
    assert_eq!(first.text, again.text);

    let mut other = request.clone();
    other.parts = vec![Part::text("A request that was never recorded.")];
    println!("unseen request: {}", replay.complete(&other, &mut ledger).unwrap_err());
    println!("{} calls accounted", ledger.total().model_calls);
    Ok(())
}
