//! Triage scores, the ESI confusion matrix and review summaries computed from
//! hand-made records.

use vivaldi::eval::{evaluate, render_markdown, MetricTriple, PredictionRecord, Rating, ReviewRecord};
use vivaldi::orchestrator::RunMode;

fn prediction(id: usize, mode: RunMode, esi: (u8, u8), los: (f64, f64), si: (f64, f64)) -> PredictionRecord {
    PredictionRecord {
        visit_id: format!("V{id}"),
        mode,
        model_name: "gpt-5.2".into(),
        esi_pred: esi.0,
        esi_true: esi.1,
        pain_pred: 4,
        pain_true: 5,
        los_pred: los.0,
        los_true: los.1,
        predicted: MetricTriple { shock_index: Some(si.0), map_mmhg: None, qsofa: Some(u8::from(si.0 > 1.0) * 2) },
        reference: MetricTriple { shock_index: Some(si.1), map_mmhg: None, qsofa: Some(u8::from(si.1 > 1.0) * 2) },
    }
}

fn review(id: usize, mode: RunMode, relevance: Rating) -> ReviewRecord {
    ReviewRecord {
        visit_id: format!("V{id}"),
        model_name: "gpt-5.2".into(),
        mode,
        factuality: Rating::Yes,
        justification: Rating::Partially,
        relevance,
        trust: Rating::Partially,
        chart_comprehensibility: 4,
        clinical_utility: 3,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases = [((2, 2), (6.0, 5.5), (1.1, 1.1)), ((3, 3), (4.0, 7.0), (0.7, 0.7)), ((3, 2), (5.0, 9.0), (0.9, 1.2))];
    let mut predictions = Vec::new();
    let mut reviews = Vec::new();
    for (i, &(esi, los, si)) in cases.iter().enumerate() {
        predictions.push(prediction(i, RunMode::Agentic, esi, los, (si.1, si.1)));
        predictions.push(prediction(i, RunMode::Zeroshot, (3, esi.1), los, si));
        reviews.push(review(i, RunMode::Agentic, Rating::Yes));
        reviews.push(review(i, RunMode::Zeroshot, if i == 0 { Rating::Yes } else { Rating::Partially }));
    }
    let report = evaluate(&predictions, Some(&reviews))?;
    println!("{}", render_markdown(&report));
    Ok(())
}
