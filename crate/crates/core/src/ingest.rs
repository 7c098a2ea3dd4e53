//! CSV ingestion, unit normalization, plausibility filtering and the
//! benchmark index.
//!
//! The loader reads four MC-MED style tables:
//!
//! | file          | columns used                                                        |
//! |---------------|---------------------------------------------------------------------|
//! | `visits.csv`  | `CSN`, `Age`, `Gender`, `Ethnicity`, `CC`, `Triage_acuity`, `ED_LOS` |
//! | `numerics.csv`| `CSN`, `Measure`, `Value`, `Time`                                   |
//! | `pmh.csv`     | `CSN`, `Desc`                                                       |
//! | `meds.csv`    | `CSN`, `Generic Name`                                               |
//!
//! Header lookup is case-insensitive and a few aliases are accepted (see
//! [`column_aliases`]). Unknown extra columns are ignored. `ED_LOS` is read in
//! hours. The pain ground truth is the chronologically first `Pain` row in
//! `numerics.csv`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Window length used by the benchmark index.
pub const WINDOW_HOURS: i64 = 24;
/// Minimum samples required for both the core and medium-frequency groups.
pub const MIN_SAMPLES: usize = 30;

/// Temperatures above this are treated as Fahrenheit.
pub const FAHRENHEIT_THRESHOLD: f64 = 45.0;
/// Upper end of the Fahrenheit detection band (113 °F = 45 °C). Values above
/// it are implausible in either unit and are left for the plausibility filter,
/// which keeps normalization idempotent.
pub const FAHRENHEIT_CEILING: f64 = 113.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("visit {0} not present in visits table")]
    MissingVisit(String),
    #[error("visit {visit_id}: {malformed} of {total} rows malformed")]
    MalformedRow {
        visit_id: String,
        malformed: usize,
        total: usize,
    },
    #[error("{path}: missing required column {column}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// The six vital signs used throughout the pipeline, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, schemars::JsonSchema)]
pub enum Signal {
    #[serde(rename = "HR")]
    Hr,
    #[serde(rename = "SBP")]
    Sbp,
    #[serde(rename = "DBP")]
    Dbp,
    #[serde(rename = "SpO2")]
    Spo2,
    #[serde(rename = "RR")]
    Rr,
    #[serde(rename = "Temp")]
    Temp,
}

impl Signal {
    pub const ALL: [Signal; 6] = [
        Signal::Hr,
        Signal::Sbp,
        Signal::Dbp,
        Signal::Spo2,
        Signal::Rr,
        Signal::Temp,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Signal::Hr => "HR",
            Signal::Sbp => "SBP",
            Signal::Dbp => "DBP",
            Signal::Spo2 => "SpO2",
            Signal::Rr => "RR",
            Signal::Temp => "Temp",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Signal::Hr => "bpm",
            Signal::Sbp | Signal::Dbp => "mmHg",
            Signal::Spo2 => "%",
            Signal::Rr => "breaths/min",
            Signal::Temp => "°C",
        }
    }

    /// Variable name under which the series is injected into coder scripts.
    pub fn script_var(self) -> &'static str {
        match self {
            Signal::Hr => "heart_rate",
            Signal::Sbp => "systolic_bp",
            Signal::Dbp => "diastolic_bp",
            Signal::Spo2 => "spo2",
            Signal::Rr => "respiratory_rate",
            Signal::Temp => "temperature",
        }
    }

    /// Core vitals (HR, SBP, DBP, SpO2) versus medium-frequency (RR, Temp).
    pub fn is_core(self) -> bool {
        matches!(self, Signal::Hr | Signal::Sbp | Signal::Dbp | Signal::Spo2)
    }

    /// Maps a `Measure` value from `numerics.csv`.
    pub fn from_measure(name: &str) -> Option<Signal> {
        let n = name.trim().to_ascii_lowercase();
        Some(match n.as_str() {
            "hr" | "heart rate" | "heart_rate" | "pulse" => Signal::Hr,
            "sbp" | "systolic" | "systolic_bp" | "nbp_sys" => Signal::Sbp,
            "dbp" | "diastolic" | "diastolic_bp" | "nbp_dia" => Signal::Dbp,
            "spo2" | "sao2" | "o2 sat" => Signal::Spo2,
            "rr" | "resp" | "respiratory rate" | "respiratory_rate" => Signal::Rr,
            "temp" | "temperature" => Signal::Temp,
            _ => return None,
        })
    }
}

impl std::fmt::Display for Signal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VitalsSample {
    pub timestamp: DateTime<Utc>,
    pub value: f64,
    pub signal: Signal,
}

/// Per-signal chronologically sorted series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vitals(BTreeMap<Signal, Vec<VitalsSample>>);

impl Vitals {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from unsorted samples; each series is sorted by timestamp
    /// (stable, so equal timestamps keep input order).
    pub fn from_samples(samples: impl IntoIterator<Item = VitalsSample>) -> Self {
        let mut map: BTreeMap<Signal, Vec<VitalsSample>> = BTreeMap::new();
        for s in samples {
            map.entry(s.signal).or_default().push(s);
        }
        for series in map.values_mut() {
            series.sort_by_key(|s| s.timestamp);
        }
        Vitals(map)
    }

    pub fn push(&mut self, sample: VitalsSample) {
        let series = self.0.entry(sample.signal).or_default();
        let at = series.partition_point(|s| s.timestamp <= sample.timestamp);
        series.insert(at, sample);
    }

    pub fn series(&self, signal: Signal) -> &[VitalsSample] {
        self.0.get(&signal).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn count(&self, signal: Signal) -> usize {
        self.series(signal).len()
    }

    pub fn total(&self) -> usize {
        self.0.values().map(Vec::len).sum()
    }

    /// Signals with at least one sample, in canonical order.
    pub fn present(&self) -> Vec<Signal> {
        Signal::ALL
            .into_iter()
            .filter(|s| self.count(*s) > 0)
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Signal, &[VitalsSample])> {
        self.0.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn samples(&self) -> impl Iterator<Item = &VitalsSample> {
        self.0.values().flatten()
    }

    /// Converts Fahrenheit-looking temperatures to Celsius.
    pub fn normalize_units(mut self) -> Self {
        if let Some(series) = self.0.get_mut(&Signal::Temp) {
            for s in series.iter_mut() {
                s.value = normalize_temperature(s.value);
            }
        }
        self
    }

    /// Drops samples outside `ranges` (and non-finite values).
    pub fn filter_plausible(self, ranges: &PlausibilityRanges) -> (Self, FilterReport) {
        let mut report = FilterReport::default();
        let mut kept = BTreeMap::new();
        for (signal, series) in self.0 {
            let before = series.len();
            let filtered: Vec<_> = series
                .into_iter()
                .filter(|s| s.value.is_finite() && ranges.contains(signal, s.value))
                .collect();
            let dropped = before - filtered.len();
            if dropped > 0 {
                report.dropped.insert(signal, dropped);
            }
            if !filtered.is_empty() {
                kept.insert(signal, filtered);
            }
        }
        (Vitals(kept), report)
    }

    /// Restricts every series to `[start, end]` (inclusive).
    pub fn clip(&self, start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        let map = self
            .0
            .iter()
            .filter_map(|(sig, series)| {
                let clipped: Vec<_> = series
                    .iter()
                    .filter(|s| s.timestamp >= start && s.timestamp <= end)
                    .copied()
                    .collect();
                (!clipped.is_empty()).then_some((*sig, clipped))
            })
            .collect();
        Vitals(map)
    }
}

/// `(v - 32) * 5/9` for values in the Fahrenheit band, identity otherwise.
pub fn normalize_temperature(value: f64) -> f64 {
    if value > FAHRENHEIT_THRESHOLD && value <= FAHRENHEIT_CEILING {
        (value - 32.0) * 5.0 / 9.0
    } else {
        value
    }
}

/// Inclusive `[low, high]` plausibility bounds per signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlausibilityRanges(pub BTreeMap<Signal, (f64, f64)>);

impl Default for PlausibilityRanges {
    fn default() -> Self {
        PlausibilityRanges(BTreeMap::from([
            (Signal::Hr, (30.0, 220.0)),
            (Signal::Sbp, (50.0, 250.0)),
            (Signal::Dbp, (20.0, 180.0)),
            (Signal::Spo2, (70.0, 100.0)),
            (Signal::Rr, (4.0, 60.0)),
            (Signal::Temp, (30.0, 43.0)),
        ]))
    }
}

impl PlausibilityRanges {
    pub fn contains(&self, signal: Signal, value: f64) -> bool {
        match self.0.get(&signal) {
            Some((lo, hi)) => value >= *lo && value <= *hi,
            None => true,
        }
    }
}

/// Per-signal counts of samples removed by the plausibility filter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub dropped: BTreeMap<Signal, usize>,
}

impl FilterReport {
    pub fn is_empty(&self) -> bool {
        self.dropped.is_empty()
    }

    pub fn total(&self) -> usize {
        self.dropped.values().sum()
    }

    pub fn merge(&mut self, other: &FilterReport) {
        for (sig, n) in &other.dropped {
            *self.dropped.entry(*sig).or_default() += n;
        }
    }
}

/// Label fields exactly as they appear in the source tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawLabels {
    pub esi: Option<String>,
    pub los_hours: Option<String>,
    pub pain: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub esi: u8,
    pub los_hours: f64,
    pub pain: u8,
}

impl RawLabels {
    /// Integer ESI in 1..=5, positive finite LOS, integer pain in 0..=10.
    pub fn validate(&self) -> Result<GroundTruth, String> {
        let esi = self
            .esi
            .as_deref()
            .and_then(parse_integer)
            .filter(|v| (1..=5).contains(v))
            .ok_or_else(|| format!("invalid ESI {:?}", self.esi))?;
        let los_hours = self
            .los_hours
            .as_deref()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v > 0.0)
            .ok_or_else(|| format!("invalid LOS {:?}", self.los_hours))?;
        let pain = self
            .pain
            .as_deref()
            .and_then(parse_integer)
            .filter(|v| (0..=10).contains(v))
            .ok_or_else(|| format!("invalid pain {:?}", self.pain))?;
        Ok(GroundTruth {
            esi: esi as u8,
            los_hours,
            pain: pain as u8,
        })
    }
}

/// Accepts "2" and integral floats such as "2.0"; rejects "2.5".
fn parse_integer(s: &str) -> Option<i64> {
    let t = s.trim();
    if let Ok(v) = t.parse::<i64>() {
        return Some(v);
    }
    let f = t.parse::<f64>().ok()?;
    (f.is_finite() && f.fract() == 0.0).then_some(f as i64)
}

/// One visit as loaded from the tables, before filtering and windowing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCase {
    pub visit_id: String,
    pub age: u32,
    pub gender: String,
    pub ethnicity: String,
    pub chief_complaint: String,
    pub pmh: Vec<String>,
    pub meds: Vec<String>,
    pub vitals: Vitals,
    pub labels: RawLabels,
    /// Numerics rows for this visit that could not be parsed and were skipped.
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

/// A benchmark case: validated labels and vitals restricted to the indexed
/// 24 h window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientCase {
    pub visit_id: String,
    pub age: u32,
    pub gender: String,
    pub ethnicity: String,
    pub chief_complaint: String,
    pub pmh: Vec<String>,
    pub meds: Vec<String>,
    pub vitals: Vitals,
    pub truth: GroundTruth,
    pub window: Window,
}

impl PatientCase {
    /// Combines a preprocessed case with its index entry.
    pub fn from_entry(raw: &RawCase, entry: &IndexEntry) -> Self {
        PatientCase {
            visit_id: raw.visit_id.clone(),
            age: raw.age,
            gender: raw.gender.clone(),
            ethnicity: raw.ethnicity.clone(),
            chief_complaint: raw.chief_complaint.clone(),
            pmh: raw.pmh.clone(),
            meds: raw.meds.clone(),
            vitals: raw.vitals.clip(entry.window_start, entry.window_end),
            truth: entry.truth,
            window: Window {
                start: entry.window_start,
                end: entry.window_end,
            },
        }
    }
}

/// File locations of the four source tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPaths {
    pub visits: PathBuf,
    pub numerics: PathBuf,
    pub pmh: PathBuf,
    pub meds: PathBuf,
}

impl DataPaths {
    /// `visits.csv`, `numerics.csv`, `pmh.csv`, `meds.csv` inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        DataPaths {
            visits: d.join("visits.csv"),
            numerics: d.join("numerics.csv"),
            pmh: d.join("pmh.csv"),
            meds: d.join("meds.csv"),
        }
    }
}

/// Accepted header spellings for each logical column.
pub fn column_aliases(column: &str) -> &'static [&'static str] {
    match column {
        "visit_id" => &["csn", "visit_id", "visit id"],
        "age" => &["age"],
        "gender" => &["gender", "sex"],
        "ethnicity" => &["ethnicity", "race"],
        "chief_complaint" => &["cc", "chief_complaint", "chief complaint"],
        "esi" => &["triage_acuity", "esi", "acuity"],
        "los" => &["ed_los", "los", "los_hours"],
        "measure" => &["measure"],
        "value" => &["value"],
        "time" => &["time", "timestamp", "charttime"],
        "pmh" => &["desc", "description", "pmh", "dx_name"],
        "med" => &["generic name", "generic_name"],
        _ => &[],
    }
}

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

impl Table {
    fn read(path: &Path) -> Result<Table, IngestError> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .from_path(path)
            .map_err(|source| csv_err(path, source))?;
        let headers = rdr
            .headers()
            .map_err(|source| csv_err(path, source))?
            .iter()
            .map(|h| h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase())
            .collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|source| csv_err(path, source))?;
            rows.push((i + 2, rec));
        }
        Ok(Table {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, logical: &str) -> Option<usize> {
        column_aliases(logical)
            .iter()
            .find_map(|alias| self.headers.iter().position(|h| h == alias))
    }

    fn require(&self, logical: &str) -> Result<usize, IngestError> {
        self.column(logical).ok_or_else(|| IngestError::MissingColumn {
            path: self.path.clone(),
            column: column_aliases(logical).first().copied().unwrap_or(logical).to_string(),
        })
    }
}

fn csv_err(path: &Path, source: csv::Error) -> IngestError {
    match source.kind() {
        csv::ErrorKind::Io(_) => {
            let msg = source.to_string();
            IngestError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(msg),
            }
        }
        _ => IngestError::Csv {
            path: path.to_path_buf(),
            source,
        },
    }
}

fn field<'a>(rec: &'a csv::StringRecord, col: Option<usize>) -> &'a str {
    col.and_then(|c| rec.get(c)).map(str::trim).unwrap_or("")
}

fn non_empty(s: &str) -> Option<String> {
    (!s.is_empty()).then(|| s.to_string())
}

/// Parses RFC 3339 or naive `YYYY-MM-DD HH:MM:SS[.f]` (taken as UTC).
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M"] {
        if let Ok(n) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(n.and_utc());
        }
    }
    None
}

#[derive(Debug, Clone)]
struct VisitRow {
    age: Option<u32>,
    gender: String,
    ethnicity: String,
    chief_complaint: String,
    esi: Option<String>,
    los: Option<String>,
}

#[derive(Debug, Clone, Default)]
struct NumericRows {
    samples: Vec<VitalsSample>,
    pain: Vec<(DateTime<Utc>, String)>,
    malformed: usize,
    total: usize,
}

/// All four tables parsed and grouped by visit id.
#[derive(Debug, Clone, Default)]
pub struct CsvTables {
    visits: BTreeMap<String, VisitRow>,
    numerics: BTreeMap<String, NumericRows>,
    pmh: BTreeMap<String, Vec<String>>,
    meds: BTreeMap<String, Vec<String>>,
}

impl CsvTables {
    pub fn load(paths: &DataPaths) -> Result<CsvTables, IngestError> {
        let mut tables = CsvTables::default();

        let visits = Table::read(&paths.visits)?;
        let id = visits.require("visit_id")?;
        let (age, gender, eth, cc, esi, los) = (
            visits.column("age"),
            visits.column("gender"),
            visits.column("ethnicity"),
            visits.column("chief_complaint"),
            visits.column("esi"),
            visits.column("los"),
        );
        for (_, rec) in &visits.rows {
            let vid = field(rec, Some(id));
            if vid.is_empty() {
                continue;
            }
            let age_raw = field(rec, age);
            tables.visits.insert(
                vid.to_string(),
                VisitRow {
                    age: parse_integer(age_raw).and_then(|a| u32::try_from(a).ok()),
                    gender: field(rec, gender).to_string(),
                    ethnicity: field(rec, eth).to_string(),
                    chief_complaint: field(rec, cc).to_string(),
                    esi: non_empty(field(rec, esi)),
                    los: non_empty(field(rec, los)),
                },
            );
        }

        let numerics = Table::read(&paths.numerics)?;
        let (id, measure, value, time) = (
            numerics.require("visit_id")?,
            numerics.require("measure")?,
            numerics.require("value")?,
            numerics.require("time")?,
        );
        for (_, rec) in &numerics.rows {
            let vid = field(rec, Some(id));
            if vid.is_empty() {
                continue;
            }
            let entry = tables.numerics.entry(vid.to_string()).or_default();
            let m = field(rec, Some(measure));
            let is_pain = m.eq_ignore_ascii_case("pain");
            let signal = Signal::from_measure(m);
            if signal.is_none() && !is_pain {
                continue;
            }
            entry.total += 1;
            let Some(ts) = parse_timestamp(field(rec, Some(time))) else {
                entry.malformed += 1;
                continue;
            };
            let raw_value = field(rec, Some(value));
            if is_pain {
                entry.pain.push((ts, raw_value.to_string()));
                continue;
            }
            match raw_value.parse::<f64>() {
                Ok(v) if v.is_finite() => entry.samples.push(VitalsSample {
                    timestamp: ts,
                    value: v,
                    signal: signal.expect("checked above"),
                }),
                _ => entry.malformed += 1,
            }
        }

        tables.pmh = read_list(&paths.pmh, "pmh")?;
        tables.meds = read_list(&paths.meds, "med")?;
        Ok(tables)
    }

    pub fn visit_ids(&self) -> impl Iterator<Item = &str> {
        self.visits.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    /// Assembles one visit with raw (unfiltered) vitals.
    pub fn case(&self, visit_id: &str) -> Result<RawCase, IngestError> {
        let visit = self
            .visits
            .get(visit_id)
            .ok_or_else(|| IngestError::MissingVisit(visit_id.to_string()))?;
        let Some(age) = visit.age else {
            return Err(IngestError::MalformedRow {
                visit_id: visit_id.to_string(),
                malformed: 1,
                total: 1,
            });
        };
        let numerics = self.numerics.get(visit_id).cloned().unwrap_or_default();
        if numerics.malformed * 2 > numerics.total {
            return Err(IngestError::MalformedRow {
                visit_id: visit_id.to_string(),
                malformed: numerics.malformed,
                total: numerics.total,
            });
        }
        let mut pain = numerics.pain;
        pain.sort_by_key(|(t, _)| *t);
        Ok(RawCase {
            visit_id: visit_id.to_string(),
            age,
            gender: visit.gender.clone(),
            ethnicity: visit.ethnicity.clone(),
            chief_complaint: visit.chief_complaint.clone(),
            pmh: self.pmh.get(visit_id).cloned().unwrap_or_default(),
            meds: self.meds.get(visit_id).cloned().unwrap_or_default(),
            vitals: Vitals::from_samples(numerics.samples),
            labels: RawLabels {
                esi: visit.esi.clone(),
                los_hours: visit.los.clone(),
                pain: pain.into_iter().next().map(|(_, v)| v),
            },
            skipped_rows: numerics.malformed,
        })
    }
}

fn read_list(path: &Path, logical: &str) -> Result<BTreeMap<String, Vec<String>>, IngestError> {
    let table = Table::read(path)?;
    let id = table.require("visit_id")?;
    let col = table.require(logical)?;
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (_, rec) in &table.rows {
        let vid = field(rec, Some(id));
        let item = field(rec, Some(col));
        if vid.is_empty() || item.is_empty() {
            continue;
        }
        out.entry(vid.to_string()).or_default().push(item.to_string());
    }
    Ok(out)
}

/// Loads a single visit. Reads all four tables; prefer [`CsvTables`] when
/// loading many visits.
pub fn load_case(paths: &DataPaths, visit_id: &str) -> Result<RawCase, IngestError> {
    CsvTables::load(paths)?.case(visit_id)
}

pub fn normalize_units(mut case: RawCase) -> RawCase {
    case.vitals = case.vitals.normalize_units();
    case
}

pub fn plausibility_filter(mut case: RawCase, ranges: &PlausibilityRanges) -> (RawCase, FilterReport) {
    let (vitals, report) = case.vitals.filter_plausible(ranges);
    case.vitals = vitals;
    (case, report)
}

/// Normalization followed by filtering.
pub fn preprocess(case: RawCase, ranges: &PlausibilityRanges) -> (RawCase, FilterReport) {
    plausibility_filter(normalize_units(case), ranges)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub visit_id: String,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    pub counts: BTreeMap<Signal, usize>,
    pub truth: GroundTruth,
}

impl IndexEntry {
    pub fn core_count(&self) -> usize {
        self.counts.iter().filter(|(s, _)| s.is_core()).map(|(_, n)| n).sum()
    }

    pub fn medium_count(&self) -> usize {
        self.counts.iter().filter(|(s, _)| !s.is_core()).map(|(_, n)| n).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    Label,
    CoreDensity,
    MediumDensity,
    Malformed,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::Label => "label",
            ExclusionReason::CoreDensity => "core-density",
            ExclusionReason::MediumDensity => "medium-density",
            ExclusionReason::Malformed => "malformed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub visit_id: String,
    pub reason: ExclusionReason,
    pub detail: String,
}

/// Sidecar to the index: excluded visits and plausibility drop totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub excluded: Vec<Exclusion>,
    pub exclusion_counts: BTreeMap<ExclusionReason, usize>,
    pub dropped_samples: BTreeMap<Signal, usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IndexBuild {
    pub entries: Vec<IndexEntry>,
    pub report: RejectionReport,
}

/// Earliest `[t, t + 24h]` window, `t` ranging over the sorted sample
/// timestamps, holding at least [`MIN_SAMPLES`] core and medium samples.
pub fn find_window(vitals: &Vitals) -> Result<Window, ExclusionReason> {
    let mut core: Vec<DateTime<Utc>> = Vec::new();
    let mut medium: Vec<DateTime<Utc>> = Vec::new();
    for s in vitals.samples() {
        if s.signal.is_core() {
            core.push(s.timestamp);
        } else {
            medium.push(s.timestamp);
        }
    }
    core.sort();
    medium.sort();
    let mut starts: Vec<DateTime<Utc>> = core.iter().chain(medium.iter()).copied().collect();
    starts.sort();
    starts.dedup();

    let span = Duration::hours(WINDOW_HOURS);
    let in_window = |ts: &[DateTime<Utc>], start: DateTime<Utc>, end: DateTime<Utc>| {
        ts.partition_point(|t| *t <= end) - ts.partition_point(|t| *t < start)
    };
    let mut core_ok_somewhere = false;
    for start in starts {
        let end = start + span;
        let c = in_window(&core, start, end);
        let m = in_window(&medium, start, end);
        core_ok_somewhere |= c >= MIN_SAMPLES;
        if c >= MIN_SAMPLES && m >= MIN_SAMPLES {
            return Ok(Window { start, end });
        }
    }
    Err(if core_ok_somewhere {
        ExclusionReason::MediumDensity
    } else {
        ExclusionReason::CoreDensity
    })
}

/// Applies the inclusion rules to preprocessed cases. Output is sorted by
/// visit id regardless of input order.
pub fn build_index(cases: &[RawCase]) -> IndexBuild {
    let mut sorted: Vec<&RawCase> = cases.iter().collect();
    sorted.sort_by(|a, b| a.visit_id.cmp(&b.visit_id));
    let mut build = IndexBuild::default();
    for case in sorted {
        let truth = match case.labels.validate() {
            Ok(t) => t,
            Err(detail) => {
                build.exclude(&case.visit_id, ExclusionReason::Label, detail);
                continue;
            }
        };
        match find_window(&case.vitals) {
            Ok(window) => {
                let clipped = case.vitals.clip(window.start, window.end);
                let counts = Signal::ALL
                    .into_iter()
                    .map(|s| (s, clipped.count(s)))
                    .collect();
                build.entries.push(IndexEntry {
                    visit_id: case.visit_id.clone(),
                    window_start: window.start,
                    window_end: window.end,
                    counts,
                    truth,
                });
            }
            Err(reason) => {
                let detail = format!(
                    "no {}h window with >= {} core and >= {} medium-frequency samples",
                    WINDOW_HOURS, MIN_SAMPLES, MIN_SAMPLES
                );
                build.exclude(&case.visit_id, reason, detail);
            }
        }
    }
    build
}

impl IndexBuild {
    fn exclude(&mut self, visit_id: &str, reason: ExclusionReason, detail: String) {
        *self.report.exclusion_counts.entry(reason).or_default() += 1;
        self.report.excluded.push(Exclusion {
            visit_id: visit_id.to_string(),
            reason,
            detail,
        });
    }
}

/// Full preprocessing and indexing over every visit in `tables`.
pub fn build_benchmark(tables: &CsvTables, ranges: &PlausibilityRanges) -> IndexBuild {
    let mut prepared = Vec::new();
    let mut dropped = FilterReport::default();
    let mut malformed = Vec::new();
    for id in tables.visit_ids() {
        match tables.case(id) {
            Ok(raw) => {
                let (case, report) = preprocess(raw, ranges);
                dropped.merge(&report);
                prepared.push(case);
            }
            Err(e) => malformed.push((id.to_string(), e.to_string())),
        }
    }
    let mut build = build_index(&prepared);
    for (id, detail) in malformed {
        build.exclude(&id, ExclusionReason::Malformed, detail);
    }
    build.report.excluded.sort_by(|a, b| a.visit_id.cmp(&b.visit_id));
    build.report.dropped_samples = dropped.dropped;
    build
}

/// One JSON object per line, in entry order.
pub fn write_index<W: Write>(mut out: W, entries: &[IndexEntry]) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_index(path: &Path) -> Result<Vec<IndexEntry>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| IngestError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

pub fn write_rejection_report<W: Write>(mut out: W, report: &RejectionReport) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, 8, 0, 0).unwrap()
    }

    fn sample(signal: Signal, minutes: i64, value: f64) -> VitalsSample {
        VitalsSample {
            timestamp: t0() + Duration::minutes(minutes),
            value,
            signal,
        }
    }

    fn temp_case(values: &[f64]) -> RawCase {
        RawCase {
            visit_id: "v".into(),
            age: 50,
            gender: "F".into(),
            ethnicity: "".into(),
            chief_complaint: "".into(),
            pmh: vec![],
            meds: vec![],
            vitals: Vitals::from_samples(
                values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| sample(Signal::Temp, i as i64, *v)),
            ),
            labels: RawLabels::default(),
            skipped_rows: 0,
        }
    }

    #[test]
    fn fahrenheit_conversion() {
        let case = normalize_units(temp_case(&[98.6, 37.0, 104.0]));
        let v: Vec<f64> = case.vitals.series(Signal::Temp).iter().map(|s| s.value).collect();
        assert!((v[0] - 37.0).abs() < 1e-12);
        assert_eq!(v[1], 37.0);
        assert_eq!(v[2], 40.0);
    }

    #[test]
    fn normalization_is_idempotent_on_extremes() {
        let once = normalize_units(temp_case(&[45.0, 45.1, 113.0, 150.0, 400.0]));
        let twice = normalize_units(once.clone());
        assert_eq!(once, twice);
    }

    #[test]
    fn filter_boundaries_and_report() {
        let mut case = temp_case(&[]);
        case.vitals = Vitals::from_samples([
            sample(Signal::Hr, 0, 250.0),
            sample(Signal::Hr, 1, 80.0),
            sample(Signal::Spo2, 0, 100.0),
            sample(Signal::Spo2, 1, 65.0),
        ]);
        let (out, report) = plausibility_filter(case, &PlausibilityRanges::default());
        assert_eq!(report.dropped.get(&Signal::Hr), Some(&1));
        assert_eq!(report.dropped.get(&Signal::Spo2), Some(&1));
        assert_eq!(out.vitals.series(Signal::Spo2)[0].value, 100.0);
        assert_eq!(out.vitals.total(), 2);
    }

    #[test]
    fn in_range_case_is_unchanged() {
        let case = temp_case(&[36.5, 37.2]);
        let (out, report) = plausibility_filter(case.clone(), &PlausibilityRanges::default());
        assert_eq!(out, case);
        assert!(report.is_empty());
    }

    #[test]
    fn label_validation() {
        let ok = RawLabels {
            esi: Some("2".into()),
            los_hours: Some("5.5".into()),
            pain: Some("7".into()),
        };
        assert_eq!(ok.validate().unwrap().esi, 2);
        let float_int = RawLabels { esi: Some("3.0".into()), ..ok.clone() };
        assert_eq!(float_int.validate().unwrap().esi, 3);
        for bad in [
            RawLabels { esi: Some("2.5".into()), ..ok.clone() },
            RawLabels { esi: Some("6".into()), ..ok.clone() },
            RawLabels { los_hours: None, ..ok.clone() },
            RawLabels { los_hours: Some("0".into()), ..ok.clone() },
            RawLabels { pain: Some("11".into()), ..ok.clone() },
            RawLabels { pain: Some("4.5".into()), ..ok.clone() },
            RawLabels { pain: None, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn window_prefers_earliest_start() {
        let mut samples = Vec::new();
        // 40 core + 40 medium in the first 10 hours, another block 30h later.
        for i in 0..40 {
            samples.push(sample(Signal::Hr, 10 + i * 15, 80.0));
            samples.push(sample(Signal::Rr, 10 + i * 15, 16.0));
            samples.push(sample(Signal::Hr, 30 * 60 + i * 15, 80.0));
            samples.push(sample(Signal::Rr, 30 * 60 + i * 15, 16.0));
        }
        let w = find_window(&Vitals::from_samples(samples)).unwrap();
        assert_eq!(w.start, t0() + Duration::minutes(10));
        assert_eq!(w.end - w.start, Duration::hours(24));
    }

    #[test]
    fn window_density_reasons() {
        let mut samples = Vec::new();
        for i in 0..29 {
            samples.push(sample(Signal::Hr, i, 80.0));
            samples.push(sample(Signal::Temp, i, 37.0));
        }
        assert_eq!(
            find_window(&Vitals::from_samples(samples.clone())),
            Err(ExclusionReason::CoreDensity)
        );
        samples.push(sample(Signal::Sbp, 40, 120.0));
        assert_eq!(
            find_window(&Vitals::from_samples(samples.clone())),
            Err(ExclusionReason::MediumDensity)
        );
        samples.push(sample(Signal::Rr, 41, 18.0));
        assert!(find_window(&Vitals::from_samples(samples)).is_ok());
    }

    #[test]
    fn samples_outside_24h_do_not_count() {
        let mut samples = Vec::new();
        for i in 0..30 {
            samples.push(sample(Signal::Hr, i, 80.0));
            samples.push(sample(Signal::Rr, if i == 29 { 24 * 60 + 1 } else { i }, 16.0));
        }
        assert_eq!(
            find_window(&Vitals::from_samples(samples)),
            Err(ExclusionReason::MediumDensity)
        );
    }

    #[test]
    fn timestamp_formats() {
        let a = parse_timestamp("2024-03-01 08:00:00").unwrap();
        let b = parse_timestamp("2024-03-01T08:00:00Z").unwrap();
        let c = parse_timestamp("2024-03-01T09:00:00+01:00").unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        assert!(parse_timestamp("yesterday").is_none());
    }

    #[test]
    fn push_keeps_order() {
        let mut v = Vitals::new();
        v.push(sample(Signal::Hr, 5, 1.0));
        v.push(sample(Signal::Hr, 1, 2.0));
        v.push(sample(Signal::Hr, 3, 3.0));
        let vals: Vec<f64> = v.series(Signal::Hr).iter().map(|s| s.value).collect();
        assert_eq!(vals, vec![2.0, 3.0, 1.0]);
    }
}
