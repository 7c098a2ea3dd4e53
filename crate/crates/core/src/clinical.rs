//! Deterministic triage metrics and vitals summaries.
//!
//! Vitals-only variants of the bedside scores are used: qSOFA without the
//! mentation criterion (0–2) and SIRS without the WBC criterion (0–3).

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{PatientCase, PlausibilityRanges, Signal, Vitals, VitalsSample};

/// Maximum time offset between an SBP sample and its HR/DBP partner.
pub const PAIRING_WINDOW_MINUTES: i64 = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("insufficient data")]
    InsufficientData,
}

fn check_plausible(signal: Signal, value: f64) -> Result<(), MetricError> {
    if value.is_finite() && PlausibilityRanges::default().contains(signal, value) {
        Ok(())
    } else {
        Err(MetricError::InvalidInput(format!("{signal} {value} out of range")))
    }
}

/// HR / SBP.
pub fn shock_index(hr: f64, sbp: f64) -> Result<f64, MetricError> {
    if !(sbp > 0.0) {
        return Err(MetricError::InvalidInput(format!("SBP must be positive, got {sbp}")));
    }
    check_plausible(Signal::Hr, hr)?;
    check_plausible(Signal::Sbp, sbp)?;
    Ok(hr / sbp)
}

/// (SBP + 2·DBP) / 3.
pub fn mean_arterial_pressure(sbp: f64, dbp: f64) -> Result<f64, MetricError> {
    if !(sbp.is_finite() && dbp.is_finite()) || dbp <= 0.0 || dbp > sbp {
        return Err(MetricError::InvalidInput(format!(
            "need SBP >= DBP > 0, got SBP {sbp} DBP {dbp}"
        )));
    }
    Ok((sbp + 2.0 * dbp) / 3.0)
}

pub fn pulse_pressure(sbp: f64, dbp: f64) -> Result<f64, MetricError> {
    mean_arterial_pressure(sbp, dbp)?;
    Ok(sbp - dbp)
}

/// `[rr >= 22] + [sbp <= 100]`.
pub fn qsofa_vitals(rr: f64, sbp: f64) -> Result<u8, MetricError> {
    check_plausible(Signal::Rr, rr)?;
    check_plausible(Signal::Sbp, sbp)?;
    Ok(u8::from(rr >= 22.0) + u8::from(sbp <= 100.0))
}

/// `[hr > 90] + [rr > 20] + [temp < 36 or temp > 38]`.
pub fn sirs_vitals(hr: f64, rr: f64, temp: f64) -> Result<u8, MetricError> {
    check_plausible(Signal::Hr, hr)?;
    check_plausible(Signal::Rr, rr)?;
    check_plausible(Signal::Temp, temp)?;
    Ok(u8::from(hr > 90.0) + u8::from(rr > 20.0) + u8::from(!(36.0..=38.0).contains(&temp)))
}

/// Least-squares slope of value against time, in units per hour.
pub fn spo2_trend(series: &[VitalsSample]) -> Result<f64, MetricError> {
    if series.len() < 2 {
        return Err(MetricError::InsufficientData);
    }
    let t0 = series[0].timestamp;
    let hours: Vec<f64> = series
        .iter()
        .map(|s| (s.timestamp - t0).num_milliseconds() as f64 / 3_600_000.0)
        .collect();
    let n = series.len() as f64;
    let mean_t = hours.iter().sum::<f64>() / n;
    let mean_v = series.iter().map(|s| s.value).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, s) in hours.iter().zip(series) {
        sxy += (t - mean_t) * (s.value - mean_v);
        sxx += (t - mean_t) * (t - mean_t);
    }
    if sxx == 0.0 {
        return Err(MetricError::InsufficientData);
    }
    Ok(sxy / sxx)
}

/// Sample (n − 1) standard deviation of the values.
pub fn hr_volatility(series: &[VitalsSample]) -> Result<f64, MetricError> {
    if series.len() < 2 {
        return Err(MetricError::InsufficientData);
    }
    // Welford
    let (mut mean, mut m2) = (0.0_f64, 0.0_f64);
    for (i, s) in series.iter().enumerate() {
        let delta = s.value - mean;
        mean += delta / (i as f64 + 1.0);
        m2 += delta * (s.value - mean);
    }
    Ok((m2 / (series.len() as f64 - 1.0)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Span {
    fn covering(times: &[DateTime<Utc>]) -> Span {
        let start = *times.iter().min().expect("non-empty");
        let end = *times.iter().max().expect("non-empty");
        Span { start, end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric<T> {
    pub value: T,
    pub span: Span,
}

/// Every field is `None` when its inputs are missing or insufficient.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyMetrics {
    pub shock_index: Option<Metric<f64>>,
    pub map_mmhg: Option<Metric<f64>>,
    pub qsofa_vitals: Option<Metric<u8>>,
    pub sirs_vitals: Option<Metric<u8>>,
    pub pulse_pressure_mmhg: Option<Metric<f64>>,
    pub spo2_trend_per_hour: Option<Metric<f64>>,
    pub hr_volatility_bpm: Option<Metric<f64>>,
}

/// Partner sample nearest to `at` within the pairing window; ties go to the
/// earlier sample.
fn nearest_within<'a>(series: &'a [VitalsSample], at: DateTime<Utc>) -> Option<&'a VitalsSample> {
    let limit = Duration::minutes(PAIRING_WINDOW_MINUTES);
    let idx = series.partition_point(|s| s.timestamp < at);
    let before = idx.checked_sub(1).map(|i| &series[i]);
    // first sample at or after `at`
    let after = series.get(idx);
    let candidates = [before, after];
    candidates
        .into_iter()
        .flatten()
        .filter(|s| (s.timestamp - at).abs() <= limit)
        .min_by_key(|s| ((s.timestamp - at).abs(), s.timestamp))
}

/// Every SBP sample paired with its nearest partner (HR or DBP) within
/// [`PAIRING_WINDOW_MINUTES`]; unpaired SBP samples are skipped.
pub fn pair_with_sbp<'a>(
    sbp: &'a [VitalsSample],
    partner: &'a [VitalsSample],
) -> Vec<(&'a VitalsSample, &'a VitalsSample)> {
    sbp.iter()
        .filter_map(|s| nearest_within(partner, s.timestamp).map(|p| (s, p)))
        .collect()
}

/// Per-pair shock index values, in SBP order.
pub fn shock_index_series(vitals: &Vitals) -> Vec<(DateTime<Utc>, f64)> {
    pair_with_sbp(vitals.series(Signal::Sbp), vitals.series(Signal::Hr))
        .into_iter()
        .filter_map(|(sbp, hr)| shock_index(hr.value, sbp.value).ok().map(|v| (sbp.timestamp, v)))
        .collect()
}

/// Per-pair MAP values, in SBP order.
pub fn map_series(vitals: &Vitals) -> Vec<(DateTime<Utc>, f64)> {
    pair_with_sbp(vitals.series(Signal::Sbp), vitals.series(Signal::Dbp))
        .into_iter()
        .filter_map(|(sbp, dbp)| {
            mean_arterial_pressure(sbp.value, dbp.value)
                .ok()
                .map(|v| (sbp.timestamp, v))
        })
        .collect()
}

fn latest_pair<T>(
    sbp: &[VitalsSample],
    partner: &[VitalsSample],
    f: impl Fn(f64, f64) -> Result<T, MetricError>,
) -> Option<Metric<T>> {
    sbp.iter().rev().find_map(|s| {
        let p = nearest_within(partner, s.timestamp)?;
        let value = f(s.value, p.value).ok()?;
        Some(Metric {
            value,
            span: Span::covering(&[s.timestamp, p.timestamp]),
        })
    })
}

/// All safety metrics from the most recent usable readings. Ratio metrics use
/// the latest SBP that has a partner within the pairing window; qSOFA and SIRS
/// use the latest reading of each component signal; trend and volatility use
/// the whole series.
pub fn compute_all(case: &PatientCase) -> SafetyMetrics {
    compute_from_vitals(&case.vitals)
}

pub fn compute_from_vitals(vitals: &Vitals) -> SafetyMetrics {
    let hr = vitals.series(Signal::Hr);
    let sbp = vitals.series(Signal::Sbp);
    let dbp = vitals.series(Signal::Dbp);
    let rr = vitals.series(Signal::Rr);
    let temp = vitals.series(Signal::Temp);
    let spo2 = vitals.series(Signal::Spo2);

    let qsofa = match (rr.last(), sbp.last()) {
        (Some(r), Some(s)) => qsofa_vitals(r.value, s.value).ok().map(|value| Metric {
            value,
            span: Span::covering(&[r.timestamp, s.timestamp]),
        }),
        _ => None,
    };
    let sirs = match (hr.last(), rr.last(), temp.last()) {
        (Some(h), Some(r), Some(t)) => sirs_vitals(h.value, r.value, t.value).ok().map(|value| Metric {
            value,
            span: Span::covering(&[h.timestamp, r.timestamp, t.timestamp]),
        }),
        _ => None,
    };
    let whole = |series: &[VitalsSample], f: fn(&[VitalsSample]) -> Result<f64, MetricError>| {
        f(series).ok().map(|value| Metric {
            value,
            span: Span {
                start: series[0].timestamp,
                end: series[series.len() - 1].timestamp,
            },
        })
    };

    SafetyMetrics {
        shock_index: latest_pair(sbp, hr, |s, h| shock_index(h, s)),
        map_mmhg: latest_pair(sbp, dbp, mean_arterial_pressure),
        qsofa_vitals: qsofa,
        sirs_vitals: sirs,
        pulse_pressure_mmhg: latest_pair(sbp, dbp, pulse_pressure),
        spo2_trend_per_hour: whole(spo2, spo2_trend),
        hr_volatility_bpm: whole(hr, hr_volatility),
    }
}

impl SafetyMetrics {
    /// Bullet list used in prompts; absent metrics are reported as such.
    pub fn render(&self) -> String {
        fn line<T: Copy>(name: &str, m: &Option<Metric<T>>, fmt: impl Fn(T) -> String) -> String {
            match m {
                Some(m) => format!(
                    "- {name}: {} ({} to {})",
                    fmt(m.value),
                    m.span.start.format("%Y-%m-%d %H:%M"),
                    m.span.end.format("%Y-%m-%d %H:%M")
                ),
                None => format!("- {name}: unavailable (insufficient data)"),
            }
        }
        [
            line("Shock Index", &self.shock_index, |v| format!("{v:.2}")),
            line("MAP", &self.map_mmhg, |v| format!("{v:.1} mmHg")),
            line("qSOFA (vitals-only, 0-2)", &self.qsofa_vitals, |v| v.to_string()),
            line("SIRS (vitals-only, 0-3)", &self.sirs_vitals, |v| v.to_string()),
            line("Pulse Pressure", &self.pulse_pressure_mmhg, |v| format!("{v:.1} mmHg")),
            line("SpO2 Trend", &self.spo2_trend_per_hour, |v| format!("{v:+.2} %/h")),
            line("HR Volatility (SD)", &self.hr_volatility_bpm, |v| format!("{v:.2} bpm")),
        ]
        .join("\n")
    }
}

/// Per-signal statistics block, in canonical signal order, one decimal.
pub fn summarize_vitals(vitals: &Vitals) -> String {
    Signal::ALL
        .into_iter()
        .map(|signal| {
            let series = vitals.series(signal);
            let head = format!("{} ({})", signal.label(), signal.unit());
            if series.is_empty() {
                return format!("{head}: unavailable");
            }
            let n = series.len();
            let mean = series.iter().map(|s| s.value).sum::<f64>() / n as f64;
            let min = series.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
            let max = series.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
            format!(
                "{head}: n={n}, avg={mean:.1}, min={min:.1}, max={max:.1}, first={}, last={}",
                series[0].timestamp.format("%Y-%m-%d %H:%M:%S"),
                series[n - 1].timestamp.format("%Y-%m-%d %H:%M:%S"),
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandStatus {
    Normal,
    Warning,
    Critical,
}

/// Normal range nested inside a warning range. Values between the two are a
/// warning; values outside the warning range are critical.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct ThresholdBand {
    pub signal: Signal,
    pub normal_low: f64,
    pub normal_high: f64,
    pub warn_low: f64,
    pub warn_high: f64,
}

impl ThresholdBand {
    pub fn validate(&self) -> Result<(), String> {
        let vals = [self.warn_low, self.normal_low, self.normal_high, self.warn_high];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(format!("{} band has non-finite bounds", self.signal));
        }
        if !(self.warn_low <= self.normal_low
            && self.normal_low <= self.normal_high
            && self.normal_high <= self.warn_high)
        {
            return Err(format!(
                "{} band not nested: warn_low {} <= normal_low {} <= normal_high {} <= warn_high {}",
                self.signal, self.warn_low, self.normal_low, self.normal_high, self.warn_high
            ));
        }
        if self.signal == Signal::Spo2 && self.normal_high < 100.0 {
            return Err("SpO2 values up to 100% must not warn".into());
        }
        Ok(())
    }

    pub fn classify(&self, value: f64) -> BandStatus {
        if value >= self.normal_low && value <= self.normal_high {
            BandStatus::Normal
        } else if value >= self.warn_low && value <= self.warn_high {
            BandStatus::Warning
        } else {
            BandStatus::Critical
        }
    }
}

/// Standard adult bands. Overrides come from [`crate::config::Config`].
pub fn default_thresholds() -> Vec<ThresholdBand> {
    let band = |signal, normal_low, normal_high, warn_low, warn_high| ThresholdBand {
        signal,
        normal_low,
        normal_high,
        warn_low,
        warn_high,
    };
    vec![
        band(Signal::Hr, 60.0, 100.0, 50.0, 120.0),
        band(Signal::Sbp, 100.0, 140.0, 90.0, 180.0),
        band(Signal::Dbp, 60.0, 90.0, 50.0, 110.0),
        band(Signal::Spo2, 95.0, 100.0, 90.0, 100.0),
        band(Signal::Rr, 12.0, 20.0, 8.0, 24.0),
        band(Signal::Temp, 36.0, 38.0, 35.0, 39.0),
    ]
}
