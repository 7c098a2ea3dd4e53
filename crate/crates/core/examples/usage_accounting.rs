//! Per-agent cost accounting across two recorded cases.

use vivaldi::eval::{render_usage_markdown, usage_report};
use vivaldi::llm::{AgentRole, UsageLedger};
use vivaldi::orchestrator::{RunMode, UsageFile};

fn main() {
    let mut files = Vec::new();
    for (i, scale) in [1u64, 2].into_iter().enumerate() {
        let mut usage = UsageLedger::default();
        usage.record_call(AgentRole::Triage, 1800 * scale, 400, 3_000 * scale);
        for _ in 0..3 {
            usage.record_call(AgentRole::Doctor, 6000, 900, 9_000);
            usage.record_call(AgentRole::Consultant, 4000, 500, 5_000);
            usage.record_call(AgentRole::Coder, 2500, 700, 4_000);
            usage.record_exec(AgentRole::Coder, 1_200);
        }
        usage.record_call(AgentRole::Synthesizer, 7000, 1200, 12_000);
        files.push(UsageFile {
            visit_id: format!("V{i}"),
            model_name: "gpt-5.2".into(),
            mode: RunMode::Agentic,
            usage,
        });
    }
    let total: u64 = files.iter().map(|f| f.usage.total().total_tokens()).sum();
    println!("{total} tokens over {} cases\n", files.len());
    println!("{}", render_usage_markdown(&usage_report(&files)));
}
