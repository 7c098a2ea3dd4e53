//! Builds the benchmark index from a synthetic four-table corpus and prints
//! what was kept, what was excluded and why.

use vivaldi::ingest::{build_benchmark, write_index, CsvTables, PlausibilityRanges};
use vivaldi::synthetic::{planted_corpus, write_corpus};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let corpus = planted_corpus(42);
    let paths = write_corpus(dir.path(), &corpus.visits)?;

    let tables = CsvTables::load(&paths)?;
    let build = build_benchmark(&tables, &PlausibilityRanges::default());

    for e in &build.entries {
        println!(
            "{}  window {} .. {}  core {}  medium {}  ESI {}",
            e.visit_id,
            e.window_start.format("%m-%d %H:%M"),
            e.window_end.format("%m-%d %H:%M"),
            e.core_count(),
            e.medium_count(),
            e.truth.esi
        );
    }
    for x in &build.report.excluded {
        println!("excluded {}: {} ({})", x.visit_id, x.reason.as_str(), x.detail);
    }
    println!("implausible samples dropped: {:?}", build.report.dropped_samples);

    let mut jsonl = Vec::new();
    write_index(&mut jsonl, &build.entries)?;
    println!("index.jsonl would be {} bytes", jsonl.len());
    Ok(())
}
