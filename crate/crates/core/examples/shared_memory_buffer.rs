//! The per-case shared state: rounds, shortlist merging and snapshots.

use std::path::PathBuf;

use vivaldi::smb::{CaseState, ImageOrigin, ImageRecord};
use vivaldi::synthetic::synthetic_case;

fn figure(name: &str, relevance: u8, round: u32) -> ImageRecord {
    ImageRecord {
        path: PathBuf::from(format!("images/{name}.png")),
        caption: name.replace('_', " "),
        relevance,
        source_iteration: round,
        origin: ImageOrigin::Coder,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut state = CaseState::new(synthetic_case("DEMO", 3), 3, 3, "v1");

    let batches = [
        vec![figure("hr_trend", 6, 1), figure("spo2_trend", 8, 1)],
        vec![figure("shock_index", 9, 2), figure("map_trend", 5, 2), figure("rr_trend", 6, 2)],
    ];
    for batch in batches {
        let round = state.begin_round()?;
        let pruned = state.merge_shortlist(batch)?;
        let kept: Vec<_> = state.shortlist.iter().map(|r| (r.caption.as_str(), r.relevance)).collect();
        let dropped: Vec<_> = pruned.iter().map(|r| r.caption.as_str()).collect();
        println!("round {round}: shortlist {kept:?}, pruned {dropped:?}");
    }

    state.finalize();
    println!("writes after finalize fail: {}", state.begin_round().unwrap_err());

    let json = state.snapshot();
    let restored = CaseState::restore(&json)?;
    assert_eq!(restored, state);
    println!("snapshot round-trips ({} bytes)", json.len());
    Ok(())
}
