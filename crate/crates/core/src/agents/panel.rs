//! Multi-panel vitals figure: one sub-panel per available signal in a fixed
//! two-column grid, with the warning band shaded amber and the normal band
//! shaded green behind the series. All panels share one time axis.

use std::path::Path;

use chrono::{DateTime, Utc};
use image::{ImageFormat, Rgb, RgbImage};
use thiserror::Error;

use crate::clinical::ThresholdBand;
use crate::ingest::{Signal, Vitals};

pub const PANEL_WIDTH: u32 = 520;
pub const PANEL_HEIGHT: u32 = 220;
pub const COLUMNS: u32 = 2;
const MARGIN_LEFT: u32 = 44;
const MARGIN_RIGHT: u32 = 12;
const MARGIN_TOP: u32 = 24;
const MARGIN_BOTTOM: u32 = 16;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const FRAME: Rgb<u8> = Rgb([90, 90, 90]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const WARN: Rgb<u8> = Rgb([253, 236, 200]);
const NORMAL: Rgb<u8> = Rgb([214, 240, 214]);
const LINE: Rgb<u8> = Rgb([25, 70, 160]);
const POINT: Rgb<u8> = Rgb([10, 40, 110]);
const TEXT: Rgb<u8> = Rgb([20, 20, 20]);

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("no vitals to plot")]
    NoData,
    #[error("writing panel {path}: {message}")]
    Write { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelLayout {
    pub signals: Vec<Signal>,
    pub width: u32,
    pub height: u32,
}

impl PanelLayout {
    pub fn for_signals(signals: Vec<Signal>) -> Self {
        let rows = (signals.len() as u32).div_ceil(COLUMNS);
        PanelLayout {
            width: COLUMNS * PANEL_WIDTH,
            height: rows * PANEL_HEIGHT,
            signals,
        }
    }

    pub fn origin(&self, index: usize) -> (u32, u32) {
        let i = index as u32;
        ((i % COLUMNS) * PANEL_WIDTH, (i / COLUMNS) * PANEL_HEIGHT)
    }
}

/// 3x5 bitmap glyphs for the labels drawn on the panel.
fn glyph(c: char) -> [u8; 5] {
    match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        'B' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'H' => [0b101, 0b101, 0b111, 0b101, 0b101],
        'M' => [0b101, 0b111, 0b111, 0b101, 0b101],
        'O' => [0b111, 0b101, 0b101, 0b101, 0b111],
        'P' => [0b111, 0b101, 0b111, 0b100, 0b100],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'S' => [0b111, 0b100, 0b111, 0b001, 0b111],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        _ => [0; 5],
    }
}

fn draw_text(img: &mut RgbImage, x: u32, y: u32, text: &str, scale: u32) {
    for (k, c) in text.chars().enumerate() {
        let rows = glyph(c.to_ascii_uppercase());
        let gx = x + k as u32 * 4 * scale;
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            put(img, (gx + col * scale + dx) as i64, (y + r as u32 * scale + dy) as i64, TEXT);
                        }
                    }
                }
            }
        }
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn fill_rect(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, c: Rgb<u8>) {
    for y in y0.min(y1)..=y0.max(y1) {
        for x in x0.min(x1)..=x0.max(x1) {
            put(img, x as i64, y as i64, c);
        }
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn time_span(vitals: &Vitals) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
    let first = vitals.samples().map(|s| s.timestamp).min()?;
    let last = vitals.samples().map(|s| s.timestamp).max()?;
    Some((first, last))
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

/// Renders the panel in memory.
pub fn render_panel_image(vitals: &Vitals, thresholds: &[ThresholdBand]) -> Result<(RgbImage, PanelLayout), PanelError> {
    let signals = vitals.present();
    if signals.is_empty() {
        return Err(PanelError::NoData);
    }
    let (t0, t1) = time_span(vitals).ok_or(PanelError::NoData)?;
    let span_ms = ((t1 - t0).num_milliseconds()).max(1) as f64;
    let layout = PanelLayout::for_signals(signals);
    let mut img = RgbImage::from_pixel(layout.width, layout.height, WHITE);

    for (idx, &signal) in layout.signals.iter().enumerate() {
        let (ox, oy) = layout.origin(idx);
        let (px0, py0) = (ox + MARGIN_LEFT, oy + MARGIN_TOP);
        let (px1, py1) = (ox + PANEL_WIDTH - MARGIN_RIGHT, oy + PANEL_HEIGHT - MARGIN_BOTTOM);
        let series = vitals.series(signal);
        let band = thresholds.iter().find(|b| b.signal == signal);

        let mut lo = series.iter().map(|s| s.value).fold(f64::INFINITY, f64::min);
        let mut hi = series.iter().map(|s| s.value).fold(f64::NEG_INFINITY, f64::max);
        if let Some(b) = band {
            lo = lo.min(b.warn_low);
            hi = hi.max(b.warn_high);
        }
        let pad = ((hi - lo) * 0.08).max(1.0);
        let (lo, hi) = (lo - pad, hi + pad);
        let y_of = |v: f64| -> i64 { py1 as i64 - (((v - lo) / (hi - lo)) * (py1 - py0) as f64).round() as i64 };
        let x_of = |t: DateTime<Utc>| -> i64 {
            px0 as i64 + (((t - t0).num_milliseconds() as f64 / span_ms) * (px1 - px0) as f64).round() as i64
        };
        let clamp_y = |y: i64| y.clamp(py0 as i64, py1 as i64) as u32;

        if let Some(b) = band {
            fill_rect(&mut img, px0, clamp_y(y_of(b.warn_high)), px1, clamp_y(y_of(b.warn_low)), WARN);
            fill_rect(&mut img, px0, clamp_y(y_of(b.normal_high)), px1, clamp_y(y_of(b.normal_low)), NORMAL);
            for v in [b.normal_low, b.normal_high] {
                let y = clamp_y(y_of(v));
                draw_text(&mut img, ox + 4, y.saturating_sub(2), &fmt_tick(v), 1);
            }
        }
        for k in 1..4 {
            let x = px0 + k * (px1 - px0) / 4;
            line(&mut img, (x as i64, py0 as i64), (x as i64, py1 as i64), GRID);
        }

        let points: Vec<(i64, i64)> = series.iter().map(|s| (x_of(s.timestamp), y_of(s.value))).collect();
        for w in points.windows(2) {
            line(&mut img, w[0], w[1], LINE);
        }
        for &(x, y) in &points {
            for (dx, dy) in [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)] {
                put(&mut img, x + dx, y + dy, POINT);
            }
        }

        line(&mut img, (px0 as i64, py0 as i64), (px1 as i64, py0 as i64), FRAME);
        line(&mut img, (px0 as i64, py1 as i64), (px1 as i64, py1 as i64), FRAME);
        line(&mut img, (px0 as i64, py0 as i64), (px0 as i64, py1 as i64), FRAME);
        line(&mut img, (px1 as i64, py0 as i64), (px1 as i64, py1 as i64), FRAME);
        draw_text(&mut img, px0, oy + 6, signal.label(), 2);
    }
    Ok((img, layout))
}

/// Writes the panel as PNG to `path` (parent directories are created).
pub fn render_vitals_panel(vitals: &Vitals, thresholds: &[ThresholdBand], path: &Path) -> Result<PanelLayout, PanelError> {
    let (img, layout) = render_panel_image(vitals, thresholds)?;
    let write_err = |message: String| PanelError::Write {
        path: path.display().to_string(),
        message,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| write_err(e.to_string()))?;
    }
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| write_err(e.to_string()))?;
    Ok(layout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clinical::default_thresholds;
    use crate::ingest::VitalsSample;
    use chrono::{Duration, TimeZone};

    fn vitals(signals: &[Signal]) -> Vitals {
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let mut samples = Vec::new();
        for (k, &signal) in signals.iter().enumerate() {
            for i in 0..20 {
                samples.push(VitalsSample {
                    timestamp: t0 + Duration::minutes(i * 30 + k as i64),
                    value: 80.0 + (i % 5) as f64,
                    signal,
                });
            }
        }
        Vitals::from_samples(samples)
    }

    #[test]
    fn six_signals_six_panels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images/panel.png");
        let layout = render_vitals_panel(&vitals(&Signal::ALL), &default_thresholds(), &path).unwrap();
        assert_eq!(layout.signals.len(), 6);
        assert_eq!((layout.width, layout.height), (2 * PANEL_WIDTH, 3 * PANEL_HEIGHT));
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
        let img = image::open(&path).unwrap();
        assert_eq!(img.height(), 3 * PANEL_HEIGHT);
    }

    #[test]
    fn two_signals_two_panels() {
        let (_, layout) = render_panel_image(&vitals(&[Signal::Hr, Signal::Temp]), &default_thresholds()).unwrap();
        assert_eq!(layout.signals, vec![Signal::Hr, Signal::Temp]);
        assert_eq!(layout.height, PANEL_HEIGHT);
    }

    #[test]
    fn deterministic_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        let v = vitals(&[Signal::Hr, Signal::Sbp, Signal::Spo2]);
        render_vitals_panel(&v, &default_thresholds(), &a).unwrap();
        render_vitals_panel(&v, &default_thresholds(), &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn empty_is_no_data() {
        assert!(matches!(
            render_panel_image(&Vitals::new(), &default_thresholds()),
            Err(PanelError::NoData)
        ));
    }
}
