//! Per-agent token and wall-clock accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AgentRole;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentUsage {
    pub model_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Model latency plus any sandbox execution time charged to the agent.
    pub duration_ms: u64,
}

impl AgentUsage {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    fn add(&mut self, other: &AgentUsage) {
        self.model_calls += other.model_calls;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.duration_ms += other.duration_ms;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    pub agents: BTreeMap<AgentRole, AgentUsage>,
}

impl UsageLedger {
    pub fn record_call(&mut self, role: AgentRole, prompt_tokens: u64, completion_tokens: u64, latency_ms: u64) {
        let u = self.agents.entry(role).or_default();
        u.model_calls += 1;
        u.prompt_tokens += prompt_tokens;
        u.completion_tokens += completion_tokens;
        u.duration_ms += latency_ms;
    }

    pub fn record_exec(&mut self, role: AgentRole, wall_ms: u64) {
        self.agents.entry(role).or_default().duration_ms += wall_ms;
    }

    pub fn total(&self) -> AgentUsage {
        let mut t = AgentUsage::default();
        for u in self.agents.values() {
            t.add(u);
        }
        t
    }

    pub fn merge(&mut self, other: &UsageLedger) {
        for (role, u) in &other.agents {
            self.agents.entry(*role).or_default().add(u);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_are_additive() {
        let mut l = UsageLedger::default();
        l.record_call(AgentRole::Doctor, 100, 20, 300);
        l.record_call(AgentRole::Doctor, 50, 10, 200);
        l.record_call(AgentRole::Coder, 10, 5, 40);
        l.record_exec(AgentRole::Coder, 60);
        let t = l.total();
        assert_eq!(t.model_calls, 3);
        assert_eq!(t.prompt_tokens, 160);
        assert_eq!(t.completion_tokens, 35);
        assert_eq!(t.duration_ms, 600);
        assert_eq!(l.agents[&AgentRole::Coder].duration_ms, 100);

        let mut m = UsageLedger::default();
        m.merge(&l);
        m.merge(&l);
        assert_eq!(m.total().total_tokens(), 2 * t.total_tokens());
    }

    #[test]
    fn serializes_with_role_keys() {
        let mut l = UsageLedger::default();
        l.record_call(AgentRole::Zeroshot, 1, 2, 3);
        let json = serde_json::to_string(&l).unwrap();
        assert!(json.contains("\"zeroshot\""));
        let back: UsageLedger = serde_json::from_str(&json).unwrap();
        assert_eq!(back, l);
    }
}
