//! Deterministic safety metrics for a synthetic septic presentation.

use vivaldi::clinical::{compute_all, map_series, shock_index_series, summarize_vitals};
use vivaldi::synthetic::synthetic_case;

fn main() {
    // Seed 1 maps to the septic trajectory.
    let case = synthetic_case("DEMO-SEPSIS", 1);
    println!("{}\n", summarize_vitals(&case.vitals));

    let m = compute_all(&case);
    let show = |name: &str, v: Option<String>| println!("{name:<22}{}", v.unwrap_or_else(|| "n/a".into()));
    show("shock index", m.shock_index.as_ref().map(|x| format!("{:.2}", x.value)));
    show("MAP (mmHg)", m.map_mmhg.as_ref().map(|x| format!("{:.1}", x.value)));
    show("qSOFA (vitals)", m.qsofa_vitals.as_ref().map(|x| x.value.to_string()));
    show("SIRS (vitals)", m.sirs_vitals.as_ref().map(|x| x.value.to_string()));
    show("pulse pressure", m.pulse_pressure_mmhg.as_ref().map(|x| format!("{:.1}", x.value)));
    show("SpO2 trend (%/h)", m.spo2_trend_per_hour.as_ref().map(|x| format!("{:+.2}", x.value)));
    show("HR volatility (bpm)", m.hr_volatility_bpm.as_ref().map(|x| format!("{:.1}", x.value)));

    let si = shock_index_series(&case.vitals);
    let map = map_series(&case.vitals);
    println!("\n{} paired SI points, {} paired MAP points", si.len(), map.len());
    if let (Some(first), Some(last)) = (si.first(), si.last()) {
        println!("SI moved from {:.2} to {:.2}", first.1, last.1);
    }
}
