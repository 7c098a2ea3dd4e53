use std::fs;
use std::sync::Arc;

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use vivaldi::config::Config;
use vivaldi::ingest::{
    build_benchmark, write_index, CsvTables, PlausibilityRanges, Signal, Vitals, VitalsSample, MIN_SAMPLES,
};
use vivaldi::llm::{model_profile, request_hash, AgentRole, ChatRequest, LlmClient, Part, UsageLedger};
use vivaldi::orchestrator::{run_agentic_case, RunConfig, RunMode};
use vivaldi::synthetic::{planted_corpus, synthetic_case, team_backend, write_corpus, SyntheticExecutor, TeamScript};

fn temps(values: &[f64]) -> Vitals {
    let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    Vitals::from_samples(values.iter().enumerate().map(|(i, &v)| VitalsSample {
        timestamp: t0 + Duration::minutes(i as i64),
        value: v,
        signal: Signal::Temp,
    }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn unit_normalization_is_idempotent(values in prop::collection::vec(25.0f64..112.0, 1..30)) {
        let once = temps(&values).normalize_units();
        prop_assert_eq!(once.clone().normalize_units(), once);
    }

    #[test]
    fn plausibility_filter_partitions_input(
        raw in prop::collection::vec((0usize..6, 0.0f64..300.0), 1..80)
    ) {
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let input = Vitals::from_samples(raw.iter().enumerate().map(|(i, &(s, v))| VitalsSample {
            timestamp: t0 + Duration::seconds(i as i64),
            value: v,
            signal: Signal::ALL[s],
        }));
        let ranges = PlausibilityRanges::default();
        let (kept, report) = input.clone().filter_plausible(&ranges);
        for s in Signal::ALL {
            let dropped = report.dropped.get(&s).copied().unwrap_or(0);
            prop_assert_eq!(kept.count(s) + dropped, input.count(s));
            prop_assert!(kept.series(s).iter().all(|x| ranges.contains(s, x.value)));
            prop_assert!(kept.series(s).iter().all(|x| input.series(s).contains(x)));
        }
    }

    #[test]
    fn request_hash_tracks_image_content(a in prop::collection::vec(any::<u8>(), 1..64), b in prop::collection::vec(any::<u8>(), 1..64)) {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2, p3) = (dir.path().join("1.png"), dir.path().join("2.png"), dir.path().join("3.png"));
        fs::write(&p1, &a).unwrap();
        fs::write(&p2, &a).unwrap();
        fs::write(&p3, &b).unwrap();
        let req = |p: &std::path::Path| ChatRequest {
            model: "m".into(),
            role: AgentRole::Doctor,
            system: "s".into(),
            parts: vec![Part::text("look"), Part::image(p)],
            temperature: 0.2,
            schema_id: None,
        };
        let h1 = request_hash(&req(&p1)).unwrap();
        prop_assert_eq!(&h1, &request_hash(&req(&p1)).unwrap());
        prop_assert_eq!(&h1, &request_hash(&req(&p2)).unwrap());
        prop_assert_eq!(h1 == request_hash(&req(&p3)).unwrap(), a == b);
    }

    #[test]
    fn ledger_totals_are_additive(calls in prop::collection::vec((0usize..6, 0u64..5000, 0u64..800, 0u64..9000), 0..50)) {
        let mut ledger = UsageLedger::default();
        let (mut p, mut c, mut d) = (0, 0, 0);
        for &(role, pt, ct, ms) in &calls {
            ledger.record_call(AgentRole::ALL[role], pt, ct, ms);
            p += pt;
            c += ct;
            d += ms;
        }
        let t = ledger.total();
        prop_assert_eq!((t.model_calls, t.prompt_tokens, t.completion_tokens, t.duration_ms), (calls.len() as u64, p, c, d));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn index_entries_are_rescannable_and_deterministic(seed in 0u64..1000) {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_corpus(dir.path(), &planted_corpus(seed).visits).unwrap();
        let tables = CsvTables::load(&paths).unwrap();
        let ranges = PlausibilityRanges::default();
        let build = build_benchmark(&tables, &ranges);
        for e in &build.entries {
            prop_assert_eq!(e.window_end - e.window_start, Duration::hours(24));
            prop_assert!(e.core_count() >= MIN_SAMPLES && e.medium_count() >= MIN_SAMPLES);
            prop_assert!((1..=5).contains(&e.truth.esi) && e.truth.pain <= 10 && e.truth.los_hours > 0.0);
            let raw = tables.case(&e.visit_id).unwrap();
            let (raw, _) = vivaldi::ingest::preprocess(raw, &ranges);
            let clipped = raw.vitals.clip(e.window_start, e.window_end);
            for s in Signal::ALL {
                prop_assert_eq!(clipped.count(s), e.counts.get(&s).copied().unwrap_or(0));
            }
        }
        let bytes = |entries| {
            let mut out = Vec::new();
            write_index(&mut out, entries).unwrap();
            out
        };
        let again = build_benchmark(&CsvTables::load(&paths).unwrap(), &ranges);
        prop_assert_eq!(bytes(&build.entries), bytes(&again.entries));
    }

    #[test]
    fn pipeline_respects_round_and_adoption_rules(
        sufficient_at in prop::option::of(1u32..4),
        estimates in prop::collection::vec((1u8..=5, 0u8..=10, 1u32..48), 1..4),
        synth in prop::option::of((1u8..=5, 0u8..=10, 1u32..48)),
        seed in 0u64..100,
    ) {
        let estimates: Vec<(u8, u8, f64)> = estimates.into_iter().map(|(e, p, l)| (e, p, f64::from(l) / 2.0)).collect();
        let script = TeamScript {
            sufficient_at,
            estimates: estimates.clone(),
            synthesizer_estimates: synth.map(|(e, p, l)| (e, p, f64::from(l) / 2.0)),
            ..TeamScript::default()
        };
        let out = tempfile::tempdir().unwrap();
        let client = LlmClient::new(Arc::new(team_backend(script)), model_profile(&Config::default(), "gpt-5.2").unwrap());
        let cfg = RunConfig::new(RunMode::Agentic, "gpt-5.2", out.path());
        let report = run_agentic_case(&client, &synthetic_case("P", seed), &cfg, &mut SyntheticExecutor::default()).unwrap();

        let expected_rounds = sufficient_at.unwrap_or(3).min(3);
        prop_assert_eq!(report.rounds_used, expected_rounds);
        let last = estimates[(expected_rounds as usize - 1).min(estimates.len() - 1)];
        let f = &report.final_assessment;
        prop_assert_eq!((f.esi_level, f.pain_score, f.ed_los_hours), last);
        prop_assert!(f.figures.len() <= 3);
    }
}
