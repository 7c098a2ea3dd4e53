//! Brute-force reference implementations shared by the integration tests.
//! Each is written from the definition, independently of the library code.
#![allow(dead_code)]

use chrono::Duration;
use vivaldi::ingest::{Signal, Vitals, VitalsSample};

pub const EPS: f64 = 1e-9;

/// Per-class F1 from precision and recall, averaged over classes that occur.
pub fn esi_f1_oracle(pairs: &[(u8, u8)]) -> f64 {
    let mut sum = 0.0;
    let mut classes = 0;
    for c in 1..=5u8 {
        let support = pairs.iter().filter(|p| p.0 == c).count() as f64;
        let predicted = pairs.iter().filter(|p| p.1 == c).count() as f64;
        if support == 0.0 && predicted == 0.0 {
            continue;
        }
        classes += 1;
        let tp = pairs.iter().filter(|p| p.0 == c && p.1 == c).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    100.0 * sum / classes as f64
}

pub fn f1_oracle(flags: &[(bool, bool)]) -> Option<f64> {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for &(t, p) in flags {
        match (t, p) {
            (true, true) => tp += 1.0,
            (false, true) => fp += 1.0,
            (true, false) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 && fp == 0.0 && fn_ == 0.0 {
        return None;
    }
    if tp == 0.0 {
        return Some(0.0);
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fn_);
    Some(100.0 * 2.0 * precision * recall / (precision + recall))
}

pub fn mean_std_oracle(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}


/// Nearest partner reading to `at` within five minutes, earlier on ties, by
/// scanning every sample.
fn nearest_partner(partner: &[VitalsSample], at: &VitalsSample) -> Option<f64> {
    let mut best: Option<(i64, i64, f64)> = None;
    for p in partner {
        let gap = (p.timestamp - at.timestamp).num_milliseconds().abs();
        if gap > Duration::minutes(5).num_milliseconds() {
            continue;
        }
        let key = (gap, p.timestamp.timestamp_millis(), p.value);
        if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
            best = Some(key);
        }
    }
    best.map(|b| b.2)
}

/// Latest SBP reading with a usable partner, combined by `f`.
fn latest_pair_oracle(vitals: &Vitals, partner: Signal, f: impl Fn(f64, f64) -> Option<f64>) -> Option<f64> {
    let sbp = vitals.series(Signal::Sbp);
    let others = vitals.series(partner);
    let mut order: Vec<&VitalsSample> = sbp.iter().collect();
    order.sort_by_key(|s| std::cmp::Reverse(s.timestamp));
    order
        .into_iter()
        .find_map(|s| nearest_partner(others, s).and_then(|p| f(s.value, p)))
}

/// HR / SBP at the latest paired reading.
pub fn shock_index_oracle(vitals: &Vitals) -> Option<f64> {
    latest_pair_oracle(vitals, Signal::Hr, |sbp, hr| {
        let plausible = (30.0..=220.0).contains(&hr) && (50.0..=250.0).contains(&sbp);
        plausible.then(|| hr / sbp)
    })
}

/// (SBP + 2 DBP) / 3 at the latest paired reading with SBP >= DBP > 0.
pub fn map_oracle(vitals: &Vitals) -> Option<f64> {
    latest_pair_oracle(vitals, Signal::Dbp, |sbp, dbp| (dbp > 0.0 && dbp <= sbp).then(|| (sbp + 2.0 * dbp) / 3.0))
}

/// Vitals-only qSOFA from the last RR and SBP readings.
pub fn qsofa_oracle(vitals: &Vitals) -> Option<u8> {
    let last = |s: Signal| vitals.series(s).iter().max_by_key(|x| x.timestamp).map(|x| x.value);
    let (rr, sbp) = (last(Signal::Rr)?, last(Signal::Sbp)?);
    let mut score = 0;
    if rr >= 22.0 {
        score += 1;
    }
    if sbp <= 100.0 {
        score += 1;
    }
    Some(score)
}
