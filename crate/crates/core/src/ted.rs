//! Threshold exceedance durations and their covariates.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::liquidity::{format_value, frame_value, spread_series, LiquiditySeries, MeasureKind};
use crate::lob::{check_header, DepthSummary, EventKind, Frame, LobEvent, Side};

pub const N_COVARIATES: usize = 24;

/// Fixed column order of the design matrix: 15 instantaneous, then the 9
/// exponentially weighted lags of the first nine.
pub const COVARIATE_NAMES: [&str; N_COVARIATES] = [
    "ask",
    "bid",
    "askVolume",
    "bidVolume",
    "bidModified",
    "askModified",
    "bidAge",
    "askAge",
    "spreads",
    "prevexceed",
    "timelast",
    "prevTEDavg",
    "indact",
    "mobuy",
    "mosell",
    "lask",
    "lbid",
    "laskVolume",
    "lbidVolume",
    "lbidModified",
    "laskModified",
    "lbidAge",
    "laskAge",
    "lspreads",
];

pub const N_LAGGED_BASE: usize = 9;
pub const IDX_SPREADS: usize = 8;
pub const IDX_PREVEXCEED: usize = 9;
pub const IDX_TIMELAST: usize = 10;
pub const IDX_PREVTEDAVG: usize = 11;
pub const IDX_INDACT: usize = 12;
pub const IDX_MOBUY: usize = 13;
pub const IDX_MOSELL: usize = 14;
pub const IDX_FIRST_LAG: usize = 15;

pub const TED_CSV_PREFIX: [&str; 4] = ["T_ms", "tau_ms", "censored", "trigger"];

pub fn covariate_index(name: &str) -> Option<usize> {
    COVARIATE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub n_levels: usize,
    pub lag_weight: f64,
    pub lag_count: usize,
    pub lag_spacing_ms: i64,
    pub recent_window_ms: i64,
    pub prev_ted_count: usize,
    pub index_window_ms: i64,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        CovariateSpec {
            n_levels: 5,
            lag_weight: 0.75,
            lag_count: 5,
            lag_spacing_ms: 1000,
            recent_window_ms: 1000,
            prev_ted_count: 5,
            index_window_ms: 1000,
        }
    }
}

impl CovariateSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lag_weight > 0.0 && self.lag_weight < 1.0) {
            return Err(Error::InvalidParameter(format!("lag weight {} not in (0, 1)", self.lag_weight)));
        }
        if self.lag_count == 0 || self.n_levels == 0 || self.prev_ted_count == 0 {
            return Err(Error::InvalidParameter("lag count, levels and history length must be >= 1".into()));
        }
        if self.lag_spacing_ms <= 0 || self.recent_window_ms <= 0 || self.index_window_ms <= 0 {
            return Err(Error::InvalidParameter("window lengths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    #[serde(rename = "mobuy")]
    MoBuy,
    #[serde(rename = "mosell")]
    MoSell,
    CancelOrOther,
}

impl Trigger {
    pub fn code(self) -> &'static str {
        match self {
            Trigger::MoBuy => "mobuy",
            Trigger::MoSell => "mosell",
            Trigger::CancelOrOther => "cancel_or_other",
        }
    }
}

impl FromStr for Trigger {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mobuy" => Ok(Trigger::MoBuy),
            "mosell" => Ok(Trigger::MoSell),
            "cancel_or_other" => Ok(Trigger::CancelOrOther),
            _ => Err(Error::InvalidParameter(format!("unknown trigger '{s}'"))),
        }
    }
}

/// An exceedance `[start, start + tau)` of the step function above `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exceedance {
    pub start_ms: i64,
    pub tau_ms: i64,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TedRecord {
    pub start_ms: i64,
    pub tau_ms: i64,
    pub censored: bool,
    pub trigger: Trigger,
    pub covariates: [f64; N_COVARIATES],
    /// False when no earlier exceedance fed `prevTEDavg`. Not exported.
    pub has_history: bool,
}

/// Scans the step function for maximal runs strictly above `c`. A run
/// still open at the window end is censored at the window end.
pub fn extract_teds(series: &LiquiditySeries, c: f64) -> Vec<Exceedance> {
    let end = series.window.end_ms;
    let mut out = Vec::new();
    let mut open: Option<i64> = None;
    for &(t, v) in &series.points {
        match open {
            None if v > c => open = Some(t),
            Some(start) if v <= c => {
                out.push(Exceedance { start_ms: start, tau_ms: t - start, censored: false });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        if end > start {
            out.push(Exceedance { start_ms: start, tau_ms: end - start, censored: true });
        }
    }
    out
}

pub fn classify_trigger(event: &LobEvent) -> Trigger {
    match (event.kind, event.side) {
        (EventKind::Execute, Side::Ask) => Trigger::MoBuy,
        (EventKind::Execute, Side::Bid) => Trigger::MoSell,
        _ => Trigger::CancelOrOther,
    }
}

/// Index of the event at `start_ms` that moved the measure from `<= c` (or
/// undefined) to `> c`. None when the run was already open before that
/// millisecond.
pub fn trigger_event(frames: &[Frame], measure: MeasureKind, c: f64, start_ms: i64) -> Option<usize> {
    let first = frames.partition_point(|f| f.time_ms < start_ms);
    let mut above_before = first > 0 && frame_value(measure, &frames[first - 1]).is_some_and(|v| v > c);
    for f in frames[first..].iter().take_while(|f| f.time_ms == start_ms) {
        let above = frame_value(measure, f).is_some_and(|v| v > c);
        if above && !above_before {
            return Some(f.event_index);
        }
        above_before = above;
    }
    None
}

/// Book state in force at `t`: the last frame at or before `t`.
fn frame_at(frames: &[Frame], t: i64) -> Option<&Frame> {
    let idx = frames.partition_point(|f| f.time_ms <= t);
    (idx > 0).then(|| &frames[idx - 1])
}

/// The nine lagged base covariates at `t`. Missing book state counts as
/// an empty book; a missing spread yields None.
fn base_covariates(frames: &[Frame], spreads: &LiquiditySeries, t: i64) -> Option<[f64; N_LAGGED_BASE]> {
    let spread = spreads.value_at(t)?;
    let empty = DepthSummary::default();
    let (bid, ask) = match frame_at(frames, t) {
        Some(f) => (f.bid, f.ask),
        None => (empty, empty),
    };
    Some([
        ask.order_count as f64,
        bid.order_count as f64,
        ask.volume as f64,
        bid.volume as f64,
        bid.modified_count as f64,
        ask.modified_count as f64,
        bid.mean_age_at(t),
        ask.mean_age_at(t),
        spread,
    ])
}

/// Builds records for every exceedance of `series` above `c`.
///
/// `frames` must come from replaying `events` with `spec.n_levels` depth
/// levels. `index_times` are sorted timestamps of the index activity feed.
pub fn build_records(
    events: &[LobEvent],
    frames: &[Frame],
    series: &LiquiditySeries,
    c: f64,
    index_times: &[i64],
    spec: &CovariateSpec,
) -> Result<Vec<TedRecord>> {
    spec.validate()?;
    if events.len() != frames.len() {
        return Err(Error::Dimension(format!("{} events but {} frames", events.len(), frames.len())));
    }
    let window = series.window;
    let spreads = match series.measure {
        MeasureKind::Spread => series.clone(),
        MeasureKind::Xlm { .. } => spread_series(frames, window),
    };
    let exceedances = extract_teds(series, c);
    let mut records: Vec<TedRecord> = Vec::with_capacity(exceedances.len());
    for ex in exceedances {
        let t = ex.start_ms;
        let trigger = trigger_event(frames, series.measure, c, t)
            .map(|i| classify_trigger(&events[i]))
            .unwrap_or(Trigger::CancelOrOther);
        let mut x = [0.0; N_COVARIATES];
        let base = base_covariates(frames, &spreads, t).ok_or_else(|| {
            Error::InvalidParameter(format!("no two-sided book at exceedance start {t} ms"))
        })?;
        x[..N_LAGGED_BASE].copy_from_slice(&base);

        let since = t - spec.recent_window_ms;
        x[IDX_PREVEXCEED] =
            records.iter().rev().take_while(|r| r.start_ms >= since).filter(|r| r.start_ms < t).count() as f64;
        x[IDX_TIMELAST] = (t - records.last().map_or(window.start_ms, |r| r.start_ms)) as f64;
        let history: Vec<f64> =
            records.iter().rev().take(spec.prev_ted_count).map(|r| (r.tau_ms as f64).ln()).collect();
        let has_history = !history.is_empty();
        x[IDX_PREVTEDAVG] = if has_history { history.iter().sum::<f64>() / history.len() as f64 } else { 0.0 };
        let lo = index_times.partition_point(|&s| s < t - spec.index_window_ms);
        let hi = index_times.partition_point(|&s| s < t);
        x[IDX_INDACT] = (hi - lo) as f64;
        x[IDX_MOBUY] = f64::from(u8::from(trigger == Trigger::MoBuy));
        x[IDX_MOSELL] = f64::from(u8::from(trigger == Trigger::MoSell));

        let mut wn = 1.0;
        for n in 1..=spec.lag_count {
            wn *= spec.lag_weight;
            let s = t - n as i64 * spec.lag_spacing_ms;
            if s < window.start_ms {
                break;
            }
            if let Some(lagged) = base_covariates(frames, &spreads, s) {
                for (k, v) in lagged.iter().enumerate() {
                    x[IDX_FIRST_LAG + k] += wn * v;
                }
            }
        }

        records.push(TedRecord {
            start_ms: t,
            tau_ms: ex.tau_ms,
            censored: ex.censored,
            trigger,
            covariates: x,
            has_history,
        });
    }
    Ok(records)
}

/// Exponentially weighted lag `Σ_{n=1..d} wⁿ x(t − nΔ)` of a step path,
/// skipping instants before `floor` or where the path is undefined.
pub fn lagged_value<F>(path: F, t: i64, spec: &CovariateSpec, floor: i64) -> f64
where
    F: Fn(i64) -> Option<f64>,
{
    let mut z = 0.0;
    let mut wn = 1.0;
    for n in 1..=spec.lag_count {
        wn *= spec.lag_weight;
        let s = t - n as i64 * spec.lag_spacing_ms;
        if s < floor {
            break;
        }
        if let Some(v) = path(s) {
            z += wn * v;
        }
    }
    z
}

pub fn write_ted_csv<W: Write>(records: &[TedRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = TED_CSV_PREFIX.iter().chain(COVARIATE_NAMES.iter()).copied().collect();
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.start_ms.to_string(),
            r.tau_ms.to_string(),
            u8::from(r.censored).to_string(),
            r.trigger.code().to_string(),
        ];
        row.extend(r.covariates.iter().map(|v| format_value(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a TED CSV. `has_history` is reconstructed from record order.
pub fn read_ted_csv<R: Read>(input: R) -> Result<Vec<TedRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut rows = reader.records();
    let Some(header) = rows.next() else {
        return Err(Error::Empty("ted csv"));
    };
    let expected: Vec<&str> = TED_CSV_PREFIX.iter().chain(COVARIATE_NAMES.iter()).copied().collect();
    check_header(&header?, &expected)?;
    let mut out: Vec<TedRecord> = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |m: String| Error::Parse { line, message: m };
        if row.len() != expected.len() {
            return Err(bad(format!("expected {} fields, found {}", expected.len(), row.len())));
        }
        let start_ms: i64 = row[0].parse().map_err(|_| bad(format!("bad T_ms '{}'", &row[0])))?;
        let tau_ms: i64 = row[1].parse().map_err(|_| bad(format!("bad tau_ms '{}'", &row[1])))?;
        if tau_ms <= 0 {
            return Err(bad(format!("tau_ms {tau_ms} must be positive")));
        }
        let censored = match &row[2] {
            "0" => false,
            "1" => true,
            other => return Err(bad(format!("bad censored flag '{other}'"))),
        };
        let trigger: Trigger = row[3].parse().map_err(|e: Error| bad(e.to_string()))?;
        let mut covariates = [0.0; N_COVARIATES];
        for (k, slot) in covariates.iter_mut().enumerate() {
            let field = &row[4 + k];
            *slot = field.parse().map_err(|_| bad(format!("bad {} '{field}'", COVARIATE_NAMES[k])))?;
        }
        let has_history = !out.is_empty();
        out.push(TedRecord { start_ms, tau_ms, censored, trigger, covariates, has_history });
    }
    Ok(out)
}

/// Writes bare exceedances as `T_ms,tau_ms,censored`.
pub fn write_exceedance_csv<W: Write>(exceedances: &[Exceedance], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&TED_CSV_PREFIX[..3])?;
    for e in exceedances {
        w.write_record([e.start_ms.to_string(), e.tau_ms.to_string(), u8::from(e.censored).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Design matrix over the chosen columns and the durations in ms.
/// Censored records are dropped unless `include_censored`.
pub fn design(records: &[TedRecord], columns: &[usize], include_censored: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
    records
        .iter()
        .filter(|r| include_censored || !r.censored)
        .map(|r| (columns.iter().map(|&j| r.covariates[j]).collect::<Vec<f64>>(), r.tau_ms as f64))
        .unzip()
}
