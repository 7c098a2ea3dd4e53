//! Evaluation functions against independent brute-force oracles.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use vivaldi::eval::{
    confusion_matrix, delta_table, esi_f1, mae, qsofa_f1, review_scores, MeansTable, MetricTriple,
    PredictionRecord, Rating, ReviewRecord,
};
use vivaldi::orchestrator::RunMode;

use common::{esi_f1_oracle, f1_oracle, mean_std_oracle, EPS};

fn rating(i: u8) -> Rating {
    [Rating::No, Rating::Partially, Rating::Yes][i as usize % 3]
}

fn record(truth: Option<u8>, pred: Option<u8>) -> PredictionRecord {
    let triple = |q| MetricTriple {
        shock_index: None,
        map_mmhg: None,
        qsofa: q,
    };
    PredictionRecord {
        visit_id: "v".into(),
        mode: RunMode::Zeroshot,
        model_name: "m".into(),
        esi_pred: 3,
        pain_pred: 0,
        los_pred: 1.0,
        esi_true: 3,
        pain_true: 0,
        los_true: 1.0,
        predicted: triple(pred),
        reference: triple(truth),
    }
}

fn esi_pairs() -> impl Strategy<Value = Vec<(u8, u8)>> {
    prop::collection::vec((1u8..=5, 1u8..=5), 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn esi_f1_matches_oracle(pairs in esi_pairs()) {
        prop_assert!((esi_f1(&pairs).unwrap() - esi_f1_oracle(&pairs)).abs() < EPS);
    }

    #[test]
    fn mae_matches_oracle(pairs in prop::collection::vec((0.0f64..24.0, 0.0f64..24.0), 1..40)) {
        let mut total = 0.0;
        for (p, t) in &pairs {
            total += if p > t { p - t } else { t - p };
        }
        prop_assert!((mae(&pairs).unwrap() - total / pairs.len() as f64).abs() < EPS);
    }

    #[test]
    fn qsofa_f1_matches_oracle(
        scores in prop::collection::vec((prop::option::weighted(0.9, 0u8..=2), prop::option::weighted(0.9, 0u8..=2)), 1..40)
    ) {
        let records: Vec<_> = scores.iter().map(|&(t, p)| record(t, p)).collect();
        let flags: Vec<(bool, bool)> = scores
            .iter()
            .filter(|(t, p)| t.is_some() && p.is_some())
            .map(|(t, p)| (t.unwrap() >= 2, p.unwrap() >= 2))
            .collect();
        match f1_oracle(&flags) {
            Some(expected) => prop_assert!((qsofa_f1(&records).unwrap() - expected).abs() < EPS),
            None => prop_assert!(qsofa_f1(&records).is_err()),
        }
    }

    #[test]
    fn confusion_matrix_matches_oracle(pairs in esi_pairs()) {
        let m = confusion_matrix(&pairs);
        for truth in 1..=5u8 {
            let row: Vec<&(u8, u8)> = pairs.iter().filter(|p| p.0 == truth).collect();
            match m[truth as usize - 1] {
                None => prop_assert!(row.is_empty()),
                Some(pct) => {
                    for pred in 1..=5u8 {
                        let k = row.iter().filter(|p| p.1 == pred).count() as f64;
                        prop_assert!((pct[pred as usize - 1] - 100.0 * k / row.len() as f64).abs() < EPS);
                    }
                }
            }
        }
    }

    #[test]
    fn review_scores_match_oracle(
        rows in prop::collection::vec((0u8..3, 0u8..2, 0u8..3, 0u8..3, 0u8..3, 0u8..3, 1u8..=5, 1u8..=5), 1..30)
    ) {
        let reviews: Vec<ReviewRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| ReviewRecord {
                visit_id: format!("v{i}"),
                model_name: format!("model{}", r.0),
                mode: if r.1 == 0 { RunMode::Zeroshot } else { RunMode::Agentic },
                factuality: rating(r.2),
                justification: rating(r.3),
                relevance: rating(r.4),
                trust: rating(r.5),
                chart_comprehensibility: r.6,
                clinical_utility: r.7,
            })
            .collect();
        let got = review_scores(&reviews, |r| r.model_name.clone(), &[]).unwrap();
        let mut groups: BTreeMap<String, Vec<&ReviewRecord>> = BTreeMap::new();
        for r in &reviews {
            groups.entry(r.model_name.clone()).or_default().push(r);
        }
        prop_assert_eq!(got.len(), groups.len());
        for (k, rs) in groups {
            let s = &got[&k];
            prop_assert_eq!(s.n, rs.len());
            let score = |r: Rating| match r { Rating::No => 0.0, Rating::Partially => 50.0, Rating::Yes => 100.0 };
            let dims: [(Vec<f64>, _); 6] = [
                (rs.iter().map(|r| score(r.factuality)).collect(), s.factuality),
                (rs.iter().map(|r| score(r.justification)).collect(), s.justification),
                (rs.iter().map(|r| score(r.relevance)).collect(), s.relevance),
                (rs.iter().map(|r| score(r.trust)).collect(), s.trust),
                (rs.iter().map(|r| f64::from(r.chart_comprehensibility)).collect(), s.chart_comprehensibility),
                (rs.iter().map(|r| f64::from(r.clinical_utility)).collect(), s.clinical_utility),
            ];
            for (values, got) in dims {
                let (mean, std) = mean_std_oracle(&values);
                prop_assert!((got.mean - mean).abs() < EPS && (got.std - std).abs() < EPS);
            }
        }
    }

    #[test]
    fn delta_table_matches_oracle(
        cells in prop::collection::btree_map(("[a-c]", "[xyz]"), (0.0f64..100.0, 0.0f64..100.0), 1..9)
    ) {
        let mut z = MeansTable::new();
        let mut a = MeansTable::new();
        for ((model, metric), (zv, av)) in &cells {
            z.entry(model.clone()).or_default().insert(metric.clone(), *zv);
            a.entry(model.clone()).or_default().insert(metric.clone(), *av);
        }
        let d = delta_table(&z, &a).unwrap();
        for ((model, metric), (zv, av)) in &cells {
            prop_assert_eq!(d[model][metric], av - zv);
        }
        // Any metric present on one side only is rejected.
        let mut extra = a.clone();
        extra.values_mut().next().unwrap().insert("only_here".into(), 1.0);
        prop_assert!(delta_table(&z, &extra).is_err());
    }
}

#[test]
fn fig2_row_from_five_records() {
    let pairs = [(1, 2), (1, 2), (1, 3), (1, 2), (1, 2)];
    assert_eq!(confusion_matrix(&pairs)[0], Some([0.0, 80.0, 20.0, 0.0, 0.0]));
}

#[test]
fn two_element_group_normalization() {
    let r = |rel| ReviewRecord {
        visit_id: "v".into(),
        model_name: "m".into(),
        mode: RunMode::Agentic,
        factuality: Rating::Yes,
        justification: Rating::Yes,
        relevance: rel,
        trust: Rating::No,
        chart_comprehensibility: 4,
        clinical_utility: 4,
    };
    let s = &review_scores(&[r(Rating::Yes), r(Rating::Partially)], |r| r.model_name.clone(), &[]).unwrap()["m"];
    assert_eq!(s.relevance.mean, 75.0);
    assert!((s.relevance.std - 35.355_339_059_327_38).abs() < 1e-12);
    assert_eq!((s.trust.mean, s.trust.std), (0.0, 0.0));
}
