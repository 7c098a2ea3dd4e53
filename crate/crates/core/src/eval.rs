//! Scoring and reporting over prediction, review and usage records.
//!
//! All percentages carry full precision; rounding happens only when tables
//! are rendered.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::DerivedMetrics;
use crate::clinical::{compute_all, SafetyMetrics};
use crate::ingest::PatientCase;
use crate::llm::{AgentRole, UsageLedger};
use crate::orchestrator::{CaseRunReport, RunMode, UsageFile};

/// ESI levels are 1-5.
pub const ESI_LEVELS: usize = 5;
/// qSOFA at or above this is positive.
pub const QSOFA_POSITIVE: u8 = 2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to score")]
    EmptyInput,
    #[error("F1 undefined: no positive case in truth or prediction")]
    UndefinedF1,
    #[error("group {0:?} has no reviews")]
    EmptyGroup(String),
    #[error("group keys differ: {0}")]
    KeyMismatch(String),
    #[error("{}:{line}: {message}", path.display())]
    Malformed { path: PathBuf, line: usize, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub shock_index: Option<f64>,
    pub map_mmhg: Option<f64>,
    pub qsofa: Option<u8>,
}

impl From<&SafetyMetrics> for MetricTriple {
    fn from(s: &SafetyMetrics) -> Self {
        MetricTriple {
            shock_index: s.shock_index.map(|m| m.value),
            map_mmhg: s.map_mmhg.map(|m| m.value),
            qsofa: s.qsofa_vitals.map(|m| m.value),
        }
    }
}

impl From<&DerivedMetrics> for MetricTriple {
    fn from(d: &DerivedMetrics) -> Self {
        MetricTriple {
            shock_index: d.shock_index,
            map_mmhg: d.map_mmhg,
            qsofa: d.qsofa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub visit_id: String,
    pub mode: RunMode,
    pub model_name: String,
    pub esi_pred: u8,
    pub pain_pred: u8,
    pub los_pred: f64,
    pub esi_true: u8,
    pub pain_true: u8,
    pub los_true: f64,
    /// Deterministic values for agentic runs, the model's self-report for
    /// zero-shot runs.
    pub predicted: MetricTriple,
    /// Always computed by the local kernels.
    pub reference: MetricTriple,
}

impl PredictionRecord {
    pub fn from_report(case: &PatientCase, report: &CaseRunReport) -> Self {
        let reference = MetricTriple::from(&compute_all(case));
        let f = &report.final_assessment;
        let predicted = match (report.mode, &f.self_reported) {
            (RunMode::Zeroshot, Some(d)) => MetricTriple::from(d),
            (RunMode::Zeroshot, None) => MetricTriple::default(),
            (RunMode::Agentic, _) => reference,
        };
        PredictionRecord {
            visit_id: case.visit_id.clone(),
            mode: report.mode,
            model_name: report.model_name.clone(),
            esi_pred: f.esi_level,
            pain_pred: f.pain_score,
            los_pred: f.ed_los_hours,
            esi_true: case.truth.esi,
            pain_true: case.truth.pain,
            los_true: case.truth.los_hours,
            predicted,
            reference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rating {
    No,
    Partially,
    Yes,
}

impl Rating {
    pub fn score(self) -> f64 {
        match self {
            Rating::No => 0.0,
            Rating::Partially => 50.0,
            Rating::Yes => 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub visit_id: String,
    pub model_name: String,
    pub mode: RunMode,
    pub factuality: Rating,
    pub justification: Rating,
    pub relevance: Rating,
    pub trust: Rating,
    /// 1 (very difficult) to 5 (extremely clear).
    pub chart_comprehensibility: u8,
    /// 1 to 5.
    pub clinical_utility: u8,
}

impl ReviewRecord {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("chart_comprehensibility", self.chart_comprehensibility),
            ("clinical_utility", self.clinical_utility),
        ] {
            if !(1..=5).contains(&v) {
                return Err(format!("{name} = {v} is outside 1..=5"));
            }
        }
        Ok(())
    }
}

/// Macro-F1 over ESI levels, in percent. Pairs are `(truth, prediction)`;
/// levels absent from both sides are left out of the average.
pub fn esi_f1(pairs: &[(u8, u8)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let classes: BTreeSet<u8> = pairs.iter().flat_map(|&(t, p)| [t, p]).collect();
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count();
            let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count();
            let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count();
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        })
        .sum();
    Ok(100.0 * total / classes.len() as f64)
}

/// Mean absolute error over `(prediction, truth)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(pairs.iter().map(|(p, t)| (p - t).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Binary F1 in percent over `(truth, prediction)` positivity flags.
pub fn binary_f1(pairs: &[(bool, bool)]) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let tp = pairs.iter().filter(|&&(t, p)| t && p).count();
    let fp = pairs.iter().filter(|&&(t, p)| !t && p).count();
    let fn_ = pairs.iter().filter(|&&(t, p)| t && !p).count();
    if tp + fp + fn_ == 0 {
        return Err(EvalError::UndefinedF1);
    }
    Ok(100.0 * 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// qSOFA F1 over records that carry both a predicted and a reference score.
pub fn qsofa_f1(records: &[PredictionRecord]) -> Result<f64, EvalError> {
    let flags: Vec<(bool, bool)> = records
        .iter()
        .filter_map(|r| Some((r.reference.qsofa? >= QSOFA_POSITIVE, r.predicted.qsofa? >= QSOFA_POSITIVE)))
        .collect();
    binary_f1(&flags)
}

/// One row per ESI truth level (index 0 is level 1), columns are predicted
/// levels, in percent of the row. Unseen truth levels are `None`.
pub type ConfusionMatrix = [Option<[f64; ESI_LEVELS]>; ESI_LEVELS];

pub fn confusion_matrix(pairs: &[(u8, u8)]) -> ConfusionMatrix {
    let mut counts = [[0usize; ESI_LEVELS]; ESI_LEVELS];
    for &(t, p) in pairs {
        if (1..=5).contains(&t) && (1..=5).contains(&p) {
            counts[t as usize - 1][p as usize - 1] += 1;
        }
    }
    let mut out: ConfusionMatrix = [None; ESI_LEVELS];
    for (row, c) in out.iter_mut().zip(counts.iter()) {
        let n: usize = c.iter().sum();
        if n > 0 {
            let mut pct = [0.0; ESI_LEVELS];
            for (dst, &k) in pct.iter_mut().zip(c.iter()) {
                *dst = 100.0 * k as f64 / n as f64;
            }
            *row = Some(pct);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample (n-1) standard deviation; 0 for a single value.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(MeanStd { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSummary {
    pub n: usize,
    pub factuality: MeanStd,
    pub justification: MeanStd,
    pub relevance: MeanStd,
    pub trust: MeanStd,
    /// Likert, reported on its 1-5 scale.
    pub chart_comprehensibility: MeanStd,
    pub clinical_utility: MeanStd,
}

impl ReviewSummary {
    /// Categorical dimensions by name, on the 0-100 scale.
    pub fn categorical(&self) -> [(&'static str, MeanStd); 4] {
        [
            ("factuality", self.factuality),
            ("justification", self.justification),
            ("relevance", self.relevance),
            ("trust", self.trust),
        ]
    }
}

pub fn summarize_reviews(reviews: &[&ReviewRecord]) -> Option<ReviewSummary> {
    let cat = |f: fn(&ReviewRecord) -> Rating| {
        MeanStd::of(&reviews.iter().map(|r| f(r).score()).collect::<Vec<_>>())
    };
    let lik = |f: fn(&ReviewRecord) -> u8| MeanStd::of(&reviews.iter().map(|r| f64::from(f(r))).collect::<Vec<_>>());
    Some(ReviewSummary {
        n: reviews.len(),
        factuality: cat(|r| r.factuality)?,
        justification: cat(|r| r.justification)?,
        relevance: cat(|r| r.relevance)?,
        trust: cat(|r| r.trust)?,
        chart_comprehensibility: lik(|r| r.chart_comprehensibility)?,
        clinical_utility: lik(|r| r.clinical_utility)?,
    })
}

/// Per-group review statistics, aggregated per review. `groups` lists the
/// keys that must be present (each needs at least one review); when empty,
/// the groups are whatever keys `key` produces.
pub fn review_scores(
    reviews: &[ReviewRecord],
    key: impl Fn(&ReviewRecord) -> String,
    groups: &[String],
) -> Result<BTreeMap<String, ReviewSummary>, EvalError> {
    if reviews.is_empty() {
        return Err(EvalError::EmptyGroup(groups.first().cloned().unwrap_or_else(|| "all".into())));
    }
    let mut by: BTreeMap<String, Vec<&ReviewRecord>> = groups.iter().map(|g| (g.clone(), Vec::new())).collect();
    for r in reviews {
        by.entry(key(r)).or_default().push(r);
    }
    by.into_iter()
        .map(|(k, rs)| match summarize_reviews(&rs) {
            Some(s) => Ok((k, s)),
            None => Err(EvalError::EmptyGroup(k)),
        })
        .collect()
}

pub fn model_mode_key(model: &str, mode: RunMode) -> String {
    format!("{model}/{}", mode.as_str())
}

pub type MeansTable = BTreeMap<String, BTreeMap<String, f64>>;

/// `agentic - zeroshot` for every metric of every model. Both tables must
/// have the same models and metrics.
pub fn delta_table(zeroshot: &MeansTable, agentic: &MeansTable) -> Result<MeansTable, EvalError> {
    let zk: BTreeSet<&String> = zeroshot.keys().collect();
    let ak: BTreeSet<&String> = agentic.keys().collect();
    if zk != ak {
        return Err(EvalError::KeyMismatch(format!(
            "models {:?} only on one side",
            zk.symmetric_difference(&ak).collect::<Vec<_>>()
        )));
    }
    let mut out = MeansTable::new();
    for (model, z) in zeroshot {
        let a = &agentic[model];
        let zm: BTreeSet<&String> = z.keys().collect();
        let am: BTreeSet<&String> = a.keys().collect();
        if zm != am {
            return Err(EvalError::KeyMismatch(format!(
                "{model}: metrics {:?} only on one side",
                zm.symmetric_difference(&am).collect::<Vec<_>>()
            )));
        }
        out.insert(model.clone(), z.iter().map(|(m, zv)| (m.clone(), a[m] - zv)).collect());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageBreakdown {
    pub cases: usize,
    /// Percent of total agent duration, summing to 100.
    pub time_share: BTreeMap<AgentRole, f64>,
    pub duration_ms: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub model_calls: u64,
}

/// Per-model time shares and token totals. A model whose runs recorded no
/// duration at all gets no shares.
pub fn usage_report(files: &[UsageFile]) -> BTreeMap<String, UsageBreakdown> {
    let mut merged: BTreeMap<String, (usize, UsageLedger)> = BTreeMap::new();
    for f in files {
        let e = merged.entry(f.model_name.clone()).or_default();
        e.0 += 1;
        e.1.merge(&f.usage);
    }
    merged
        .into_iter()
        .map(|(model, (cases, ledger))| {
            let total = ledger.total();
            let time_share = if total.duration_ms == 0 {
                BTreeMap::new()
            } else {
                ledger
                    .agents
                    .iter()
                    .map(|(role, u)| (*role, 100.0 * u.duration_ms as f64 / total.duration_ms as f64))
                    .collect()
            };
            (
                model,
                UsageBreakdown {
                    cases,
                    time_share,
                    duration_ms: total.duration_ms,
                    prompt_tokens: total.prompt_tokens,
                    completion_tokens: total.completion_tokens,
                    total_tokens: total.total_tokens(),
                    model_calls: total.model_calls,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageScores {
    pub n: usize,
    pub esi_f1: f64,
    pub pain_mae: f64,
    pub los_mae: f64,
    /// Over records where the metric was both predicted and computable.
    pub shock_index_mae: Option<f64>,
    pub map_mae: Option<f64>,
    pub qsofa_f1: Option<f64>,
}

/// Accuracy table keyed by `model/mode`.
pub fn triage_table(records: &[PredictionRecord]) -> Result<BTreeMap<String, TriageScores>, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut groups: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(model_mode_key(&r.model_name, r.mode)).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let esi: Vec<(u8, u8)> = rs.iter().map(|r| (r.esi_true, r.esi_pred)).collect();
            let pain: Vec<(f64, f64)> = rs.iter().map(|r| (f64::from(r.pain_pred), f64::from(r.pain_true))).collect();
            let los: Vec<(f64, f64)> = rs.iter().map(|r| (r.los_pred, r.los_true)).collect();
            let opt_mae = |f: fn(&MetricTriple) -> Option<f64>| {
                let pairs: Vec<(f64, f64)> = rs
                    .iter()
                    .filter_map(|r| Some((f(&r.predicted)?, f(&r.reference)?)))
                    .collect();
                mae(&pairs).ok()
            };
            let scores = TriageScores {
                n: rs.len(),
                esi_f1: esi_f1(&esi)?,
                pain_mae: mae(&pain)?,
                los_mae: mae(&los)?,
                shock_index_mae: opt_mae(|m| m.shock_index),
                map_mae: opt_mae(|m| m.map_mmhg),
                qsofa_f1: qsofa_f1(&rs).ok(),
            };
            Ok((k, scores))
        })
        .collect()
}

/// Reads one JSON object per non-blank line; errors carry the line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    read_jsonl_checked(path, |_: &T| Ok(()))
}

fn read_jsonl_checked<T: DeserializeOwned>(
    path: &Path,
    check: impl Fn(&T) -> Result<(), String>,
) -> Result<Vec<T>, EvalError> {
    let text = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| e.to_string())
                .and_then(|v: T| check(&v).map(|_| v))
                .map_err(|message| EvalError::Malformed {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                })
        })
        .collect()
}

/// Review records with the Likert ranges checked.
pub fn read_reviews(path: &Path) -> Result<Vec<ReviewRecord>, EvalError> {
    read_jsonl_checked(path, ReviewRecord::validate)
}

/// Appends records, one per line.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub triage: BTreeMap<String, TriageScores>,
    pub confusion: BTreeMap<String, ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviews: Option<BTreeMap<String, ReviewSummary>>,
    /// Agentic minus zero-shot review means, per model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_deltas: Option<MeansTable>,
}

/// Everything the `eval` subcommand emits.
pub fn evaluate(predictions: &[PredictionRecord], reviews: Option<&[ReviewRecord]>) -> Result<EvalReport, EvalError> {
    let triage = triage_table(predictions)?;
    let mut pairs: BTreeMap<String, Vec<(u8, u8)>> = BTreeMap::new();
    for r in predictions {
        pairs
            .entry(model_mode_key(&r.model_name, r.mode))
            .or_default()
            .push((r.esi_true, r.esi_pred));
    }
    let confusion = pairs.into_iter().map(|(k, p)| (k, confusion_matrix(&p))).collect();

    let (reviews, review_deltas) = match reviews {
        None => (None, None),
        Some(rs) => {
            let summary = review_scores(rs, |r| model_mode_key(&r.model_name, r.mode), &[])?;
            let mut z = MeansTable::new();
            let mut a = MeansTable::new();
            for r in rs {
                let key = model_mode_key(&r.model_name, r.mode);
                let means: BTreeMap<String, f64> = summary[&key]
                    .categorical()
                    .iter()
                    .map(|(n, m)| (n.to_string(), m.mean))
                    .collect();
                match r.mode {
                    RunMode::Zeroshot => z.insert(r.model_name.clone(), means),
                    RunMode::Agentic => a.insert(r.model_name.clone(), means),
                };
            }
            let both: BTreeSet<String> = z.keys().filter(|k| a.contains_key(*k)).cloned().collect();
            z.retain(|k, _| both.contains(k));
            a.retain(|k, _| both.contains(k));
            let deltas = if both.is_empty() { None } else { Some(delta_table(&z, &a)?) };
            (Some(summary), deltas)
        }
    };
    Ok(EvalReport {
        triage,
        confusion,
        reviews,
        review_deltas,
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "n/a".into())
}

/// Markdown rendering of an [`EvalReport`], one decimal.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut s = String::from("## Triage accuracy\n\n| group | n | ESI F1 | Pain MAE | LOS MAE | SI MAE | MAP MAE | qSOFA F1 |\n|---|---|---|---|---|---|---|---|\n");
    for (k, t) in &report.triage {
        s.push_str(&format!(
            "| {k} | {} | {:.1} | {:.2} | {:.2} | {} | {} | {} |\n",
            t.n,
            t.esi_f1,
            t.pain_mae,
            t.los_mae,
            opt(t.shock_index_mae, 2),
            opt(t.map_mae, 2),
            opt(t.qsofa_f1, 1)
        ));
    }
    for (k, m) in &report.confusion {
        s.push_str(&format!("\n## ESI confusion ({k})\n\n| truth \\ pred | 1 | 2 | 3 | 4 | 5 |\n|---|---|---|---|---|---|\n"));
        for (i, row) in m.iter().enumerate() {
            let cells: Vec<String> = match row {
                Some(r) => r.iter().map(|v| format!("{v:.1}")).collect(),
                None => vec!["-".into(); ESI_LEVELS],
            };
            s.push_str(&format!("| {} | {} |\n", i + 1, cells.join(" | ")));
        }
    }
    if let Some(reviews) = &report.reviews {
        s.push_str("\n## Expert review\n\n| group | n | factuality | justification | relevance | trust | charts (1-5) | utility (1-5) |\n|---|---|---|---|---|---|---|---|\n");
        let ms = |m: MeanStd| format!("{:.1} ± {:.1}", m.mean, m.std);
        for (k, r) in reviews {
            s.push_str(&format!(
                "| {k} | {} | {} | {} | {} | {} | {} | {} |\n",
                r.n,
                ms(r.factuality),
                ms(r.justification),
                ms(r.relevance),
                ms(r.trust),
                ms(r.chart_comprehensibility),
                ms(r.clinical_utility)
            ));
        }
    }
    if let Some(deltas) = &report.review_deltas {
        s.push_str("\n## Agentic minus zero-shot (points)\n\n| model | factuality | justification | relevance | trust |\n|---|---|---|---|---|\n");
        for (model, d) in deltas {
            let cell = |k: &str| d.get(k).map(|v| format!("{v:+.1}")).unwrap_or_default();
            s.push_str(&format!(
                "| {model} | {} | {} | {} | {} |\n",
                cell("factuality"),
                cell("justification"),
                cell("relevance"),
                cell("trust")
            ));
        }
    }
    s
}

/// Markdown rendering of a usage report.
pub fn render_usage_markdown(report: &BTreeMap<String, UsageBreakdown>) -> String {
    let mut s = String::from("| model | cases | calls | prompt tokens | completion tokens | total tokens | time share |\n|---|---|---|---|---|---|---|\n");
    for (model, u) in report {
        let shares: Vec<String> = u
            .time_share
            .iter()
            .map(|(role, p)| format!("{} {p:.1}%", role.as_str()))
            .collect();
        s.push_str(&format!(
            "| {model} | {} | {} | {} | {} | {} | {} |\n",
            u.cases,
            u.model_calls,
            u.prompt_tokens,
            u.completion_tokens,
            u.total_tokens,
            shares.join(", ")
        ));
    }
    s
}
