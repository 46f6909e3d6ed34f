//! Liquidity measures on the event clock, empirical thresholds and
//! top-quintile occupancy.
//!
//! A series is a step function: each point's value holds until the next
//! point (or the end of the window).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lob::{check_header, Frame, TradingWindow};

pub const SERIES_CSV_HEADER: [&str; 2] = ["timestamp_ms", "value"];
pub const OCCUPANCY_CSV_HEADER: [&str; 2] = ["start_ms", "end_ms"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeasureKind {
    /// Best ask minus best bid, in ticks.
    Spread,
    /// Round-trip cost of `notional` currency units, in basis points.
    Xlm { notional: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquiditySeries {
    pub measure: MeasureKind,
    pub points: Vec<(i64, f64)>,
    pub window: TradingWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ThresholdDef {
    DailyQuantile { q: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub level: f64,
    pub definition: ThresholdDef,
}

impl Threshold {
    pub fn fixed(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!("threshold {value} not finite")));
        }
        Ok(Threshold { level: value, definition: ThresholdDef::Fixed { value } })
    }
}

impl LiquiditySeries {
    /// Validates ordering, non-negativity and window membership.
    pub fn new(measure: MeasureKind, points: Vec<(i64, f64)>, window: TradingWindow) -> Result<Self> {
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParameter(format!(
                    "series times must strictly increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(t, v) in &points {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("series value {v} at {t} must be finite and >= 0")));
            }
            if !window.contains(t) {
                return Err(Error::InvalidParameter(format!("series point {t} outside window")));
            }
        }
        Ok(LiquiditySeries { measure, points, window })
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    /// Step value in force at `t`.
    pub fn value_at(&self, t: i64) -> Option<f64> {
        let idx = self.points.partition_point(|p| p.0 <= t);
        (idx > 0).then(|| self.points[idx - 1].1)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SERIES_CSV_HEADER)?;
        for (t, v) in &self.points {
            w.write_record([t.to_string(), format_value(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `timestamp_ms,value`. Without an explicit window the series
    /// spans its first point to one past its last point.
    pub fn read_csv<R: Read>(input: R, measure: MeasureKind, window: Option<TradingWindow>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
        let mut records = reader.records();
        let Some(header) = records.next() else {
            return Err(Error::Empty("series csv"));
        };
        check_header(&header?, &SERIES_CSV_HEADER)?;
        let mut points = Vec::new();
        for record in records {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let bad = |m: String| Error::Parse { line, message: m };
            if record.len() != 2 {
                return Err(bad(format!("expected 2 fields, found {}", record.len())));
            }
            let t: i64 = record[0].parse().map_err(|_| bad(format!("bad timestamp_ms '{}'", &record[0])))?;
            let v: f64 = record[1].parse().map_err(|_| bad(format!("bad value '{}'", &record[1])))?;
            points.push((t, v));
        }
        let window = match window {
            Some(w) => w,
            None => match (points.first(), points.last()) {
                (Some(a), Some(b)) => TradingWindow::new(a.0, b.0 + 1),
                _ => return Err(Error::Empty("series csv")),
            },
        };
        let points = clip_to_window(points, window);
        LiquiditySeries::new(measure, points, window)
    }
}

pub(crate) fn format_value(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v:?}")
}

/// Keeps points inside the window, carrying the value in force at the
/// window start onto the start instant.
fn clip_to_window(points: Vec<(i64, f64)>, window: TradingWindow) -> Vec<(i64, f64)> {
    let mut out = Vec::with_capacity(points.len());
    let mut carried = None;
    for (t, v) in points {
        if t <= window.start_ms {
            carried = Some(v);
            continue;
        }
        if t >= window.end_ms {
            break;
        }
        if let Some(c) = carried.take() {
            out.push((window.start_ms, c));
        }
        out.push((t, v));
    }
    if let Some(c) = carried {
        out.push((window.start_ms, c));
    }
    out
}

/// One value per distinct millisecond: the value after the last event of
/// that millisecond, skipped when undefined there.
fn series_from_frames<F>(frames: &[Frame], window: TradingWindow, value: F) -> Vec<(i64, f64)>
where
    F: Fn(&Frame) -> Option<f64>,
{
    let mut points = Vec::new();
    let mut i = 0;
    while i < frames.len() {
        let t = frames[i].time_ms;
        let mut j = i;
        while j + 1 < frames.len() && frames[j + 1].time_ms == t {
            j += 1;
        }
        if let Some(v) = value(&frames[j]) {
            points.push((t, v));
        }
        i = j + 1;
    }
    clip_to_window(points, window)
}

/// The measure's value after one event, if defined there.
pub fn frame_value(measure: MeasureKind, frame: &Frame) -> Option<f64> {
    match measure {
        MeasureKind::Spread => frame.spread().map(|s| s as f64),
        MeasureKind::Xlm { .. } => frame.xlm_bps,
    }
}

/// Spread in ticks at every event time where both sides are populated.
pub fn spread_series(frames: &[Frame], window: TradingWindow) -> LiquiditySeries {
    let points = series_from_frames(frames, window, |f| frame_value(MeasureKind::Spread, f));
    LiquiditySeries { measure: MeasureKind::Spread, points, window }
}

/// Round-trip cost series; `frames` must come from a replay run with the
/// same `notional`.
pub fn xlm_series(frames: &[Frame], window: TradingWindow, notional: f64) -> Result<LiquiditySeries> {
    if !(notional > 0.0) {
        return Err(Error::InvalidParameter(format!("notional {notional} must be positive")));
    }
    let measure = MeasureKind::Xlm { notional };
    let points = series_from_frames(frames, window, |f| frame_value(measure, f));
    Ok(LiquiditySeries { measure, points, window })
}

/// Empirical quantile by linear interpolation between order statistics
/// (`h = (n − 1) q`).
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("quantile of empty sample"));
    }
    if !(q >= 0.0 && q <= 1.0) {
        return Err(Error::InvalidProbability(q));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, q))
}

pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// The day's empirical `q`-quantile of the series values.
pub fn daily_threshold(series: &LiquiditySeries, q: f64) -> Result<Threshold> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidProbability(q));
    }
    if series.is_empty() {
        return Err(Error::Empty("liquidity series"));
    }
    let values: Vec<f64> = series.values().collect();
    let level = empirical_quantile(&values, q)?;
    Ok(Threshold { level, definition: ThresholdDef::DailyQuantile { q } })
}

/// Maximal `[start, end)` intervals where the series is strictly above its
/// own 0.8-quantile.
pub fn quintile_occupancy(series: &LiquiditySeries) -> Result<Vec<(i64, i64)>> {
    let c = daily_threshold(series, 0.8)?.level;
    Ok(intervals_above(series, c))
}

pub(crate) fn intervals_above(series: &LiquiditySeries, c: f64) -> Vec<(i64, i64)> {
    let mut out: Vec<(i64, i64)> = Vec::new();
    let pts = &series.points;
    for (i, &(t, v)) in pts.iter().enumerate() {
        if v <= c {
            continue;
        }
        let end = pts.get(i + 1).map_or(series.window.end_ms, |p| p.0);
        match out.last_mut() {
            Some(last) if last.1 == t => last.1 = end,
            _ => out.push((t, end)),
        }
    }
    out
}

pub fn write_occupancy_csv<W: Write>(intervals: &[(i64, i64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(OCCUPANCY_CSV_HEADER)?;
    for (a, b) in intervals {
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
