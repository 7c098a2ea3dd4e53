use std::fs;
use std::path::{Path, PathBuf};

use vivaldi::agents::{coder_static_lint, PROMPT_VERSION};
use vivaldi::agents::lint::LintViolation;
use vivaldi::clinical::{compute_all, summarize_vitals};
use vivaldi::ingest::PatientCase;
use vivaldi::smb::CaseState;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn tiny_case() -> PatientCase {
    serde_json::from_str(&fs::read_to_string(fixture("tiny_case.json")).unwrap()).unwrap()
}

/// Compares against a stored golden file; `UPDATE_GOLDENS=1` rewrites it.
fn golden(rel: &str, actual: &str) {
    let path = fixture(rel);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap();
    assert_eq!(actual, expected, "{} differs", path.display());
}

#[test]
fn vitals_summary_matches_golden() {
    golden("tiny_summary.txt", &format!("{}\n", summarize_vitals(&tiny_case().vitals)));
}

#[test]
fn fresh_snapshot_matches_golden() {
    let state = CaseState::new(tiny_case(), 3, 3, PROMPT_VERSION);
    golden("tiny_fresh_snapshot.json", &format!("{}\n", state.snapshot()));
    let back = CaseState::restore(&state.snapshot()).unwrap();
    assert_eq!(back.snapshot(), state.snapshot());
}

#[test]
fn tiny_case_metrics_by_hand() {
    let m = compute_all(&tiny_case());
    // Latest SBP 98 at 11:02 pairs with HR 104 at 11:00 and DBP 61 at 11:02.
    assert_eq!(m.shock_index.unwrap().value, 104.0 / 98.0);
    assert_eq!(m.map_mmhg.unwrap().value, (98.0 + 2.0 * 61.0) / 3.0);
    assert_eq!(m.pulse_pressure_mmhg.unwrap().value, 37.0);
    assert_eq!(m.qsofa_vitals.unwrap().value, 2);
    assert!(m.sirs_vitals.is_none(), "no temperature recorded");
}

fn corpus(dir: &str) -> Vec<(String, String)> {
    let mut files: Vec<_> = fs::read_dir(fixture(dir))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_stem().unwrap().to_string_lossy().into_owned(),
                fs::read_to_string(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn lint_rejects_every_violation() {
    let cases = corpus("lint/reject");
    assert!(cases.len() >= 10);
    for (name, src) in cases {
        let violations = coder_static_lint(&src).expect_err(&name);
        let kind_ok = violations.iter().any(|v| match v {
            LintViolation::Import { .. } => name.contains("import"),
            LintViolation::TooLong { .. } => name == "too_long",
            LintViolation::Rebinds { .. } => name.contains("rebind") || name.starts_with("augassign"),
        });
        assert!(kind_ok, "{name}: unexpected violations {violations:?}");
    }
}

#[test]
fn lint_accepts_clean_scripts() {
    for (name, src) in corpus("lint/accept") {
        assert_eq!(coder_static_lint(&src), Ok(()), "{name}");
    }
}
