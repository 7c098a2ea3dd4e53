//! Renders the multi-signal triage panel with default threshold bands.

use vivaldi::agents::render_vitals_panel;
use vivaldi::clinical::default_thresholds;
use vivaldi::synthetic::synthetic_case;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vivaldi_panel.png"));
    let case = synthetic_case("DEMO-HYPOXIC", 2);
    let layout = render_vitals_panel(&case.vitals, &default_thresholds(), &out)?;
    println!("wrote {} ({} subplots)", out.display(), layout.signals.len());
    Ok(())
}
