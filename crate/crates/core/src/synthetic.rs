//! Deterministic stand-ins for everything external: seeded patient cases and
//! CSV corpora, a scripted clinical team that answers every agent prompt, and
//! an executor that emulates the script worker without Python.
//!
//! Used by the examples, the integration tests and offline demos. Identical
//! seeds and scripts always give byte-identical output.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde_json::json;

use crate::agents::panel::render_vitals_panel;
use crate::agents::parse_estimates;
use crate::clinical::default_thresholds;
use crate::ingest::{DataPaths, ExclusionReason, GroundTruth, PatientCase, Signal, Vitals, VitalsSample, Window};
use crate::llm::{AgentRole, ChatRequest, LlmError, ScriptedBackend};
use crate::sandbox::{relative_inside, ExecRequest, ExecResponse, ExecStatus, Executor, ExecutorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Presentation {
    Stable,
    Septic,
    Hypoxic,
    Hypertensive,
}

impl Presentation {
    pub const ALL: [Presentation; 4] = [
        Presentation::Stable,
        Presentation::Septic,
        Presentation::Hypoxic,
        Presentation::Hypertensive,
    ];

    /// Starting value and drift per hour for HR, SBP, DBP, SpO2, RR, Temp.
    fn course(self) -> [(f64, f64); 6] {
        match self {
            Presentation::Stable => [(78.0, -0.5), (128.0, 0.0), (78.0, 0.0), (98.0, 0.0), (15.0, 0.0), (36.8, 0.0)],
            Presentation::Septic => [(112.0, 2.5), (104.0, -3.0), (62.0, -1.5), (95.0, -0.3), (23.0, 0.5), (38.6, 0.1)],
            Presentation::Hypoxic => [(98.0, 1.0), (132.0, 0.0), (80.0, 0.0), (91.0, -0.6), (26.0, 0.4), (37.2, 0.0)],
            Presentation::Hypertensive => [(88.0, 0.0), (186.0, -2.0), (104.0, -1.0), (97.0, 0.0), (17.0, 0.0), (36.7, 0.0)],
        }
    }

    fn complaint(self) -> &'static str {
        match self {
            Presentation::Stable => "Ankle pain after a fall",
            Presentation::Septic => "Fever and confusion",
            Presentation::Hypoxic => "Shortness of breath",
            Presentation::Hypertensive => "Headache",
        }
    }

    fn truth(self) -> GroundTruth {
        let (esi, pain, los_hours) = match self {
            Presentation::Stable => (4, 6, 3.0),
            Presentation::Septic => (2, 3, 9.5),
            Presentation::Hypoxic => (2, 2, 7.0),
            Presentation::Hypertensive => (3, 7, 5.0),
        };
        GroundTruth { esi, pain, los_hours }
    }

    fn history(self) -> (Vec<String>, Vec<String>) {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        match self {
            Presentation::Stable => (v(&[]), v(&[])),
            Presentation::Septic => (v(&["Type 2 diabetes", "Chronic kidney disease"]), v(&["metformin", "lisinopril"])),
            Presentation::Hypoxic => (v(&["COPD"]), v(&["tiotropium", "albuterol"])),
            Presentation::Hypertensive => (v(&["Hypertension"]), v(&["amlodipine"])),
        }
    }
}

/// Fixed reference start so generated data never depends on the clock.
pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 1, 8, 0, 0).unwrap()
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Irregular vitals over `hours`: blood pressure pairs and SpO2 about every
/// 5 minutes, HR a little offset from them, RR every 15 and Temp every 60.
pub fn synthetic_vitals(seed: u64, presentation: Presentation, start: DateTime<Utc>, hours: i64) -> Vitals {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let course = presentation.course();
    let mut vitals = Vitals::new();
    let add = |vitals: &mut Vitals, rng: &mut ChaCha8Rng, signal: Signal, every_min: i64, jitter_s: i64, noise: f64| {
        let i = Signal::ALL.iter().position(|s| *s == signal).expect("known signal");
        let (base, drift) = course[i];
        let mut t = 0;
        while t < hours * 60 {
            let ts = start + Duration::minutes(t) + Duration::seconds(rng.random_range(0..=jitter_s));
            let hours_in = t as f64 / 60.0;
            let mut v = base + drift * hours_in + rng.random_range(-noise..=noise);
            if signal == Signal::Spo2 {
                v = v.min(100.0);
            }
            vitals.push(VitalsSample {
                timestamp: ts,
                value: round1(v),
                signal,
            });
            t += every_min;
        }
    };
    add(&mut vitals, &mut rng, Signal::Hr, 5, 150, 4.0);
    // SBP and DBP come from the same cuff reading.
    let mut nibp = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let (sbp0, sbp_d) = course[1];
    let (dbp0, dbp_d) = course[2];
    let mut t = 0;
    while t < hours * 60 {
        let ts = start + Duration::minutes(t) + Duration::seconds(nibp.random_range(0..=60));
        let h = t as f64 / 60.0;
        vitals.push(VitalsSample {
            timestamp: ts,
            value: round1(sbp0 + sbp_d * h + nibp.random_range(-6.0..=6.0)),
            signal: Signal::Sbp,
        });
        vitals.push(VitalsSample {
            timestamp: ts,
            value: round1(dbp0 + dbp_d * h + nibp.random_range(-4.0..=4.0)),
            signal: Signal::Dbp,
        });
        t += 5;
    }
    add(&mut vitals, &mut rng, Signal::Spo2, 5, 120, 1.0);
    add(&mut vitals, &mut rng, Signal::Rr, 15, 120, 2.0);
    add(&mut vitals, &mut rng, Signal::Temp, 60, 300, 0.2);
    vitals
}

/// A complete benchmark case. The presentation cycles with `seed`.
pub fn synthetic_case(visit_id: &str, seed: u64) -> PatientCase {
    let presentation = Presentation::ALL[(seed % 4) as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let start = epoch() + Duration::hours(rng.random_range(0..48));
    let vitals = synthetic_vitals(seed, presentation, start, 6);
    let (pmh, meds) = presentation.history();
    PatientCase {
        visit_id: visit_id.to_string(),
        age: rng.random_range(24..=88),
        gender: ["F", "M"][rng.random_range(0..2)].to_string(),
        ethnicity: ["White", "Black", "Asian", "Hispanic"][rng.random_range(0..4)].to_string(),
        chief_complaint: presentation.complaint().to_string(),
        pmh,
        meds,
        vitals,
        truth: presentation.truth(),
        window: Window {
            start,
            end: start + Duration::hours(24),
        },
    }
}

/// `rows` samples spread over all six signals with irregular timestamps and
/// values across the clinically interesting range. Used for kernel checks.
pub fn vitals_fixture(rows: usize, seed: u64) -> Vitals {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ranges = [(40.0, 160.0), (70.0, 190.0), (40.0, 110.0), (82.0, 100.0), (8.0, 34.0), (35.0, 40.0)];
    let mut t = epoch();
    let mut v = Vitals::new();
    for _ in 0..rows {
        t += Duration::seconds(rng.random_range(20..600));
        let i = rng.random_range(0..6);
        let (lo, hi) = ranges[i];
        v.push(VitalsSample {
            timestamp: t,
            value: round1(rng.random_range(lo..=hi)),
            signal: Signal::ALL[i],
        });
    }
    v
}

/// One visit as raw CSV fields, so plants such as malformed labels can be
/// expressed exactly as they appear on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusVisit {
    pub visit_id: String,
    pub age: String,
    pub gender: String,
    pub ethnicity: String,
    pub chief_complaint: String,
    pub esi: String,
    pub los: String,
    pub pain: Option<String>,
    /// `(measure, time, value)` rows.
    pub numerics: Vec<(String, String, String)>,
    pub pmh: Vec<String>,
    pub meds: Vec<String>,
}

fn measure_name(s: Signal) -> &'static str {
    match s {
        Signal::Hr => "HR",
        Signal::Sbp => "SBP",
        Signal::Dbp => "DBP",
        Signal::Spo2 => "SpO2",
        Signal::Rr => "RR",
        Signal::Temp => "Temp",
    }
}

fn csv_time(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%d %H:%M:%S").to_string()
}

impl CorpusVisit {
    pub fn from_case(case: &PatientCase) -> Self {
        let mut numerics: Vec<(String, String, String)> = case
            .vitals
            .samples()
            .map(|s| (measure_name(s.signal).to_string(), csv_time(s.timestamp), format!("{}", s.value)))
            .collect();
        let first = case.vitals.samples().map(|s| s.timestamp).min().unwrap_or_else(epoch);
        numerics.push(("Pain".into(), csv_time(first), case.truth.pain.to_string()));
        CorpusVisit {
            visit_id: case.visit_id.clone(),
            age: case.age.to_string(),
            gender: case.gender.clone(),
            ethnicity: case.ethnicity.clone(),
            chief_complaint: case.chief_complaint.clone(),
            esi: case.truth.esi.to_string(),
            los: format!("{}", case.truth.los_hours),
            pain: Some(case.truth.pain.to_string()),
            numerics,
            pmh: case.pmh.clone(),
            meds: case.meds.clone(),
        }
    }

    fn drop_signal_after(&mut self, signal: Signal, keep: usize) {
        let name = measure_name(signal);
        let mut seen = 0;
        self.numerics.retain(|(m, _, _)| {
            if m != name {
                return true;
            }
            seen += 1;
            seen <= keep
        });
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e.to_string())
}

/// Writes `visits.csv`, `numerics.csv`, `pmh.csv` and `meds.csv` into `dir`.
pub fn write_corpus(dir: &Path, visits: &[CorpusVisit]) -> io::Result<DataPaths> {
    fs::create_dir_all(dir)?;
    let paths = DataPaths::in_dir(dir);
    let mut w = csv::Writer::from_path(&paths.visits).map_err(csv_err)?;
    w.write_record(["CSN", "Age", "Gender", "Ethnicity", "CC", "Triage_acuity", "ED_LOS"])
        .map_err(csv_err)?;
    for v in visits {
        w.write_record([&v.visit_id, &v.age, &v.gender, &v.ethnicity, &v.chief_complaint, &v.esi, &v.los])
            .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths.numerics).map_err(csv_err)?;
    w.write_record(["CSN", "Measure", "Value", "Time"]).map_err(csv_err)?;
    for v in visits {
        for (m, t, val) in &v.numerics {
            if m == "Pain" && v.pain.is_none() {
                continue;
            }
            let val = if m == "Pain" { v.pain.as_deref().unwrap_or(val) } else { val };
            w.write_record([v.visit_id.as_str(), m, val, t]).map_err(csv_err)?;
        }
    }
    w.flush()?;

    for (path, header, pick) in [
        (&paths.pmh, "Desc", (|v: &CorpusVisit| v.pmh.clone()) as fn(&CorpusVisit) -> Vec<String>),
        (&paths.meds, "Generic Name", |v: &CorpusVisit| v.meds.clone()),
    ] {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["CSN", header]).map_err(csv_err)?;
        for v in visits {
            for item in pick(v) {
                w.write_record([v.visit_id.as_str(), item.as_str()]).map_err(csv_err)?;
            }
        }
        w.flush()?;
    }
    Ok(paths)
}

/// A corpus with known violations and the outcome the index must show.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedCorpus {
    pub visits: Vec<CorpusVisit>,
    pub included: Vec<String>,
    pub exclusions: BTreeMap<ExclusionReason, usize>,
    pub dropped: BTreeMap<Signal, usize>,
}

/// Ten visits: six clean (one recorded in Fahrenheit), one carrying
/// implausible HR 250, SpO2 65 and SBP 260 readings that must be dropped
/// without excluding the visit, one with only 29 medium-frequency samples,
/// one with a non-integer ESI and one with too few core samples.
pub fn planted_corpus(seed: u64) -> PlantedCorpus {
    let id = |i: u64| format!("P{i:02}");
    let mut visits: Vec<CorpusVisit> = (1..=10)
        .map(|i| CorpusVisit::from_case(&synthetic_case(&id(i), seed + i)))
        .collect();

    // P06: implausible spikes next to normal data.
    let spike_t = visits[5].numerics[0].1.clone();
    for (m, v) in [("HR", "250"), ("SpO2", "65"), ("SBP", "260")] {
        visits[5].numerics.push((m.into(), spike_t.clone(), v.into()));
    }
    // P07: 29 medium-frequency samples in total.
    let rr = visits[6].numerics.iter().filter(|(m, _, _)| m == "RR").count();
    visits[6].drop_signal_after(Signal::Rr, rr);
    visits[6].drop_signal_after(Signal::Temp, 29 - rr.min(29));
    if rr > 29 {
        visits[6].drop_signal_after(Signal::Rr, 29);
    }
    // P08: non-integer ESI.
    visits[7].esi = "2.5".into();
    // P09: sparse core vitals.
    for s in [Signal::Hr, Signal::Sbp, Signal::Dbp, Signal::Spo2] {
        visits[8].drop_signal_after(s, 5);
    }
    // P10: temperatures recorded in Fahrenheit.
    for (m, _, v) in &mut visits[9].numerics {
        if m == "Temp" {
            let c: f64 = v.parse().expect("generated value");
            *v = format!("{:.1}", c * 9.0 / 5.0 + 32.0);
        }
    }

    PlantedCorpus {
        included: ["P01", "P02", "P03", "P04", "P05", "P06", "P10"].map(String::from).to_vec(),
        exclusions: BTreeMap::from([
            (ExclusionReason::Label, 1),
            (ExclusionReason::CoreDensity, 1),
            (ExclusionReason::MediumDensity, 1),
        ]),
        dropped: BTreeMap::from([(Signal::Hr, 1), (Signal::Sbp, 1), (Signal::Spo2, 1)]),
        visits,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoderBehavior {
    /// Scripts pass lint and run.
    Valid,
    /// The first attempt raises at runtime; the repaired script runs.
    FailFirst,
    /// Every script imports a module and is rejected by the lint.
    AlwaysImport,
}

/// How the scripted team behaves.
#[derive(Debug, Clone, PartialEq)]
pub struct TeamScript {
    /// Round in which ranking first reports sufficiency.
    pub sufficient_at: Option<u32>,
    /// Doctor `(esi, pain, los_hours)` per round; the last entry repeats.
    pub estimates: Vec<(u8, u8, f64)>,
    /// When set, the synthesizer reports these values instead of the doctor's.
    pub synthesizer_estimates: Option<(u8, u8, f64)>,
    pub coder: CoderBehavior,
    /// Triage output also carries wrong metric values, which must be ignored.
    pub triage_injects_metrics: bool,
    pub zero_shot: (u8, u8, f64),
}

impl Default for TeamScript {
    fn default() -> Self {
        TeamScript {
            sufficient_at: Some(2),
            estimates: vec![(3, 4, 5.0), (2, 4, 7.0)],
            synthesizer_estimates: None,
            coder: CoderBehavior::Valid,
            triage_injects_metrics: false,
            zero_shot: (3, 5, 4.0),
        }
    }
}

const DOCTOR_TASKS: [(&str, bool); 6] = [
    ("Plot rolling 1-hour standard deviation of heart rate", true),
    ("Calculate the correlation between heart rate and systolic blood pressure", false),
    ("Plot shock index over time with the 0.9 threshold", true),
    ("Calculate the fraction of SpO2 readings below 92%", false),
    ("Plot the distribution of respiratory rate", true),
    ("Calculate the maximum 2-hour drop in systolic blood pressure", false),
];

const RULE_OUTS: [&str; 3] = [
    "Plot heart rate against temperature to check for relative bradycardia",
    "Plot SpO2 against respiratory rate as a phase-space scatter",
    "Calculate the pulse pressure trend per hour",
];

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("valid regex"))
}

fn capture_u32(text: &str, cell: &'static OnceLock<Regex>, pattern: &str) -> Option<u32> {
    re(cell, pattern).captures(text)?.get(1)?.as_str().parse().ok()
}

fn iteration_marker(text: &str) -> u32 {
    static RE: OnceLock<Regex> = OnceLock::new();
    capture_u32(text, &RE, r"Working note for iteration (\d+)").unwrap_or(1)
}

impl TeamScript {
    fn estimate(&self, round: u32) -> (u8, u8, f64) {
        let i = (round.max(1) as usize - 1).min(self.estimates.len().saturating_sub(1));
        self.estimates.get(i).copied().unwrap_or((3, 4, 5.0))
    }

    /// Answer for one request, chosen from its role and prompt.
    pub fn respond(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let text = req.text();
        Ok(match req.role {
            AgentRole::Triage => self.triage(&text),
            AgentRole::Doctor if req.system.contains("Medical Editor") => self.ranking(&text),
            AgentRole::Doctor if text.contains("prescribing analytical tasks") => self.prescription(&text),
            AgentRole::Doctor => self.analysis(&text),
            AgentRole::Consultant => self.consultant(&text),
            AgentRole::Coder => self.coder(&text),
            AgentRole::Synthesizer => self.synthesis(&text),
            AgentRole::Zeroshot => self.zero_shot(&text),
        })
    }

    fn triage(&self, text: &str) -> String {
        let elderly = {
            static RE: OnceLock<Regex> = OnceLock::new();
            capture_u32(text, &RE, r"- Age: (\d+)").is_some_and(|a| a >= 65)
        };
        let mut hr = default_thresholds()[0];
        if elderly {
            hr.normal_high = 95.0;
            hr.warn_high = 115.0;
        }
        let mut v = json!({
            "clinical_context": format!(
                "{} patient. Baseline from history and medications; standard ranges unless noted.",
                if elderly { "Older adult" } else { "Adult" }
            ),
            "thresholds": [hr],
        });
        if self.triage_injects_metrics {
            v["shock_index"] = json!(9.99);
            v["map_mmhg"] = json!(-1.0);
            v["qsofa_vitals"] = json!(3);
        }
        v.to_string()
    }

    fn analysis(&self, text: &str) -> String {
        static RE: OnceLock<Regex> = OnceLock::new();
        let round = capture_u32(text, &RE, r"Diagnostic Iteration (\d+)").unwrap_or(1);
        let (esi, pain, los) = self.estimate(round);
        let reflection = if round == 1 {
            "First assessment; no previous estimates.".to_string()
        } else {
            let (pe, pp, pl) = self.estimate(round - 1);
            format!("Previous estimates were ESI {pe}, pain {pp}, LOS {pl}h; updated after reviewing new calculations.")
        };
        format!(
            "# Assessment\n\nWorking note for iteration {round}. Vital sign trends reviewed against the triage baseline.\n\n# Hypotheses\n\n- Infection-related physiologic stress\n- Volume depletion\n\n# Acuity Estimation\n- **ESI Level**: {esi} (trajectory of heart rate and blood pressure)\n- **Pain Score**: {pain} (presentation and history)\n- **ED Length of Stay**: {los} hours (expected workup)\n- **Reflection**: {reflection}"
        )
    }

    fn prescription(&self, text: &str) -> String {
        let round = iteration_marker(text) as usize;
        let tasks: Vec<_> = (0..2)
            .map(|k| DOCTOR_TASKS[((round - 1) * 2 + k) % DOCTOR_TASKS.len()])
            .map(|(d, p)| json!({"description": d, "produces_plot": p}))
            .collect();
        json!({ "tasks": tasks }).to_string()
    }

    fn ranking(&self, text: &str) -> String {
        static N: OnceLock<Regex> = OnceLock::new();
        let n = capture_u32(text, &N, r"Review all (\d+) provided images").unwrap_or(0);
        let round = iteration_marker(text);
        let reviews: Vec<_> = (1..=n)
            .map(|i| {
                json!({
                    "image_index": i,
                    "relevance": 9u32.saturating_sub(i + round).max(2),
                    "rationale": "Shows the trend behind the current acuity estimate."
                })
            })
            .collect();
        json!({
            "reviews": reviews,
            "is_sufficient": self.sufficient_at.is_some_and(|r| round >= r),
        })
        .to_string()
    }

    fn consultant(&self, text: &str) -> String {
        let round = iteration_marker(text) as usize;
        format!(
            "# Critique\n\nThe plan anchors on a single explanation; the blood pressure trajectory needs a second look.\n\n# Differential Diagnosis\n\n- Dehydration\n- Pulmonary embolism\n\n# Rule-out Tasks\n\n- {}",
            RULE_OUTS[(round - 1) % RULE_OUTS.len()]
        )
    }

    fn coder(&self, text: &str) -> String {
        static TASK: OnceLock<Regex> = OnceLock::new();
        let task = re(&TASK, r"(?s)## Objective\n(.*?)\n\n## Output Format")
            .captures(text)
            .map(|c| c[1].trim().to_string())
            .unwrap_or_default();
        let repaired = text.contains("## Correction Required");
        let plot = task.to_lowercase().contains("plot");
        let slug: String = task
            .to_lowercase()
            .split_whitespace()
            .take(4)
            .collect::<Vec<_>>()
            .join("_")
            .chars()
            .filter(|c| c.is_ascii_alphanumeric() || *c == '_')
            .collect();
        let mut lines = Vec::new();
        match self.coder {
            CoderBehavior::AlwaysImport => lines.push("import numpy as np".to_string()),
            CoderBehavior::FailFirst if !repaired => lines.push("raise ValueError('empty series')".to_string()),
            _ => {}
        }
        lines.push("values = [v for _, v in heart_rate]".into());
        lines.push("mean_hr = float(np.mean(values))".into());
        if plot {
            lines.push("fig, ax = plt.subplots()".into());
            lines.push("ax.plot([t for t, _ in heart_rate], values)".into());
            lines.push(format!("save_plot(\"{slug}.png\")"));
        }
        lines.push("result = {\"mean_hr\": mean_hr}".into());
        lines.push(format!("interpretation = \"{}: mean heart rate summarized.\"", task.replace('"', "'")));
        lines.join("\n")
    }

    fn synthesis(&self, text: &str) -> String {
        let history = text.split("## Doctor's Assessment History").nth(1).unwrap_or(text);
        let (esi, pain, los) = match self.synthesizer_estimates {
            Some(e) => e,
            None => parse_estimates(history)
                .map(|(e, _)| (e.esi, e.pain, e.los_hours))
                .unwrap_or((3, 4, 5.0)),
        };
        static FIG: OnceLock<Regex> = OnceLock::new();
        let figures = re(&FIG, r"(?m)^Figure \d+: ").find_iter(text).count();
        let captions: Vec<String> = (1..=figures).map(|i| format!("Figure {i}. Vital sign analysis.")).collect();
        let cite = if figures > 0 { " (Figure 1)" } else { "" };
        json!({
            "esi_level": esi,
            "pain_score": pain,
            "ed_los": los,
            "narrative": format!("The heart rate trajectory{cite} is consistent with ongoing physiologic stress; findings suggest ESI {esi}."),
            "figure_captions": captions,
        })
        .to_string()
    }

    fn zero_shot(&self, text: &str) -> String {
        let last = |label: &str| -> Option<f64> {
            let block = text.split(&format!("{label} (")).nth(2)?;
            let block = block.split("\n\n").next()?;
            block.lines().last()?.rsplit(": ").next()?.parse().ok()
        };
        let (hr, sbp, dbp, rr) = (last("HR"), last("SBP"), last("DBP"), last("RR"));
        let si = hr.zip(sbp).map(|(h, s)| ((h / s) * 10.0).round() / 10.0);
        let map = sbp.zip(dbp).map(|(s, d)| ((s + 2.0 * d) / 3.0).round());
        let qsofa = rr.zip(sbp).map(|(r, s)| u8::from(r >= 22.0) + u8::from(s <= 100.0));
        let (esi, pain, los) = self.zero_shot;
        json!({
            "esi_level": esi,
            "pain_score": pain,
            "ed_los": los,
            "narrative": "Vital signs reviewed in aggregate; estimates reflect the chief complaint and the last recorded values.",
            "derived_metrics": {
                "shock_index": si,
                "map_mmhg": map,
                "qsofa": qsofa,
                "sirs": null,
                "pulse_pressure_mmhg": sbp.zip(dbp).map(|(s, d)| s - d),
                "spo2_trend_per_hour": null,
                "hr_volatility_bpm": null
            }
        })
        .to_string()
    }
}

/// Backend answering every agent from `script`.
pub fn team_backend(script: TeamScript) -> ScriptedBackend {
    ScriptedBackend::new(move |req| script.respond(req))
}

/// Emulates the script worker: checks the output contract textually, writes
/// one vitals figure per `save_plot` call and reports summary statistics of
/// the series the script references. Runtime failures are triggered by a
/// `raise` statement.
#[derive(Debug, Default, Clone)]
pub struct SyntheticExecutor {
    pub executed: usize,
}

fn vitals_from_request(req: &ExecRequest) -> Vitals {
    let mut v = Vitals::new();
    for s in Signal::ALL {
        for (t, value) in req.vitals.get(s.script_var()).into_iter().flatten() {
            if let Ok(ts) = DateTime::parse_from_rfc3339(t) {
                v.push(VitalsSample {
                    timestamp: ts.with_timezone(&Utc),
                    value: *value,
                    signal: s,
                });
            }
        }
    }
    v
}

impl Executor for SyntheticExecutor {
    fn execute(&mut self, req: &ExecRequest) -> Result<ExecResponse, ExecutorError> {
        self.executed += 1;
        static RAISE: OnceLock<Regex> = OnceLock::new();
        static SAVE: OnceLock<Regex> = OnceLock::new();
        static BIND: OnceLock<Regex> = OnceLock::new();
        let script = &req.script;
        let wall_ms = 40 + 2 * script.lines().count() as u64;
        let fail = |status, msg: &str| {
            let mut r = ExecResponse::failure(status, msg);
            r.wall_ms = wall_ms;
            Ok(r)
        };
        if let Some(m) = re(&RAISE, r"(?m)^\s*raise\s+(.*)$").captures(script) {
            return fail(ExecStatus::RuntimeError, &format!("Traceback (most recent call last):\n  {}", &m[1]));
        }
        if script.contains("import ") {
            return fail(ExecStatus::ContractViolation, "imports are blocked in the sandbox");
        }
        let bound = |name: &str| {
            re(&BIND, r"(?m)^\s*(result|interpretation)\s*=")
                .captures_iter(script)
                .any(|c| &c[1] == name)
        };
        if !bound("result") || !bound("interpretation") {
            return fail(ExecStatus::ContractViolation, "script must bind `result` and `interpretation`");
        }

        let vitals = vitals_from_request(req);
        let mut figures = Vec::new();
        for c in re(&SAVE, r#"save_plot\(\s*["']([^"']+)["']"#).captures_iter(script) {
            let name = PathBuf::from(&c[1]);
            let Some(rel) = relative_inside(&req.artifact_dir, &name) else {
                return fail(ExecStatus::ContractViolation, "figure path escapes the artifact directory");
            };
            let path = req.artifact_dir.join(&rel);
            if render_vitals_panel(&vitals, &default_thresholds(), &path).is_err() {
                return fail(ExecStatus::RuntimeError, "could not write figure");
            }
            figures.push(path);
        }

        let mut stats = serde_json::Map::new();
        for s in Signal::ALL {
            let series = vitals.series(s);
            if series.is_empty() || !script.contains(s.script_var()) {
                continue;
            }
            let mean = series.iter().map(|x| x.value).sum::<f64>() / series.len() as f64;
            stats.insert(format!("{}_mean", s.script_var()), json!(round1(mean)));
            stats.insert(format!("{}_n", s.script_var()), json!(series.len()));
        }
        let summary = stats
            .iter()
            .filter(|(k, _)| k.ends_with("_mean"))
            .map(|(k, v)| format!("{} {v}", k.trim_end_matches("_mean")))
            .collect::<Vec<_>>()
            .join(", ");
        Ok(ExecResponse {
            status: ExecStatus::Ok,
            result: Some(serde_json::Value::Object(stats)),
            interpretation: Some(format!("Mean values over the window: {summary}.")),
            figures,
            stderr_excerpt: String::new(),
            wall_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_benchmark, CsvTables, PlausibilityRanges};

    #[test]
    fn cases_are_reproducible() {
        let a = synthetic_case("A", 7);
        let b = synthetic_case("A", 7);
        assert_eq!(a, b);
        assert_ne!(a.vitals, synthetic_case("A", 8).vitals);
        assert!(a.vitals.count(Signal::Rr) + a.vitals.count(Signal::Temp) >= 30);
    }

    #[test]
    fn fixture_size() {
        assert_eq!(vitals_fixture(500, 1).total(), 500);
    }

    #[test]
    fn planted_corpus_outcome() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = planted_corpus(11);
        let paths = write_corpus(dir.path(), &corpus.visits).unwrap();
        let build = build_benchmark(&CsvTables::load(&paths).unwrap(), &PlausibilityRanges::default());
        let ids: Vec<&str> = build.entries.iter().map(|e| e.visit_id.as_str()).collect();
        assert_eq!(ids, corpus.included);
        assert_eq!(build.report.exclusion_counts, corpus.exclusions);
        assert_eq!(build.report.dropped_samples, corpus.dropped);
    }
}
