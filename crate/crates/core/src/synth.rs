//! Synthetic inputs: a zero-intelligence order-flow simulator and a direct
//! duration sampler with known regression coefficients.
//!
//! Every random stream is a ChaCha8 generator keyed by the config seed with
//! the stream id `(purpose << 32) | day`, so days can be generated in any
//! order or in parallel.

use std::collections::HashMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Geometric, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{Family, ParamSet};
use crate::error::{Error, Result};
use crate::lob::{BookState, EventKind, LobEvent, OrderId, Side, TradingWindow};
use crate::ted::{covariate_index, TedRecord, Trigger, IDX_MOBUY, IDX_MOSELL, N_COVARIATES};

pub const TRUTH_SCHEMA_VERSION: u32 = 1;

const STREAM_FLOW: u64 = 1;
const STREAM_INDEX: u64 = 2;
const STREAM_TED: u64 = 3;

pub fn day_rng(seed: u64, purpose: u64, day: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | day as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    pub seed: u64,
    pub days: usize,
    /// Simulated session; the default is 08:00 to 16:30.
    pub session: TradingWindow,
    /// Limit order arrivals per second.
    pub add_rate: f64,
    /// Cancellation rate per resting order per second.
    pub cancel_rate: f64,
    /// Market order arrivals per second.
    pub execute_rate: f64,
    /// Order amendments per second.
    pub modify_rate: f64,
    /// A new bid rests `k + 1` ticks below the best ask (asks mirror),
    /// with `P(k) = (1 − r) rᵏ`.
    pub placement_decay: f64,
    pub initial_price_ticks: i64,
    /// Price levels per side placed at the session open.
    pub initial_levels: usize,
    /// Cancels and executions never take a side below this many orders.
    pub min_side_orders: usize,
    pub lot_size: u64,
    pub max_lots: u64,
    /// Index feed events per second for [`gen_index_activity`].
    pub index_rate: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            seed: 1,
            days: 1,
            session: TradingWindow::new(TradingWindow::hms(8, 0, 0), TradingWindow::hms(16, 30, 0)),
            add_rate: 2.0,
            cancel_rate: 0.03,
            execute_rate: 0.4,
            modify_rate: 0.2,
            placement_decay: 0.85,
            initial_price_ticks: 10_000,
            initial_levels: 5,
            min_side_orders: 2,
            lot_size: 100,
            max_lots: 10,
            index_rate: 2.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        let rates = [self.add_rate, self.cancel_rate, self.execute_rate, self.modify_rate, self.index_rate];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || self.add_rate <= 0.0 {
            return bad("rates must be finite and non-negative, with a positive add rate");
        }
        if !(self.placement_decay >= 0.0 && self.placement_decay < 1.0) {
            return bad("placement decay must lie in [0, 1)");
        }
        if self.session.len_ms() <= 0 || self.session.start_ms < 0 {
            return bad("empty session");
        }
        if self.initial_price_ticks <= self.initial_levels as i64 + 1 || self.lot_size == 0 || self.max_lots == 0 {
            return bad("initial price, lot size and lot count must be positive");
        }
        if self.initial_levels == 0 || self.min_side_orders == 0 {
            return bad("initial levels and minimum side orders must be >= 1");
        }
        Ok(())
    }
}

/// Live order ids with O(1) uniform choice and removal.
#[derive(Default)]
struct Pool {
    ids: Vec<OrderId>,
    pos: HashMap<OrderId, usize>,
}

impl Pool {
    fn insert(&mut self, id: OrderId) {
        self.pos.insert(id, self.ids.len());
        self.ids.push(id);
    }

    fn remove(&mut self, id: OrderId) {
        if let Some(i) = self.pos.remove(&id) {
            self.ids.swap_remove(i);
            if let Some(&moved) = self.ids.get(i) {
                self.pos.insert(moved, i);
            }
        }
    }

    fn pick<R: Rng>(&self, rng: &mut R) -> Option<OrderId> {
        (!self.ids.is_empty()).then(|| self.ids[rng.random_range(0..self.ids.len())])
    }
}

struct Simulator<'a> {
    cfg: &'a FlowConfig,
    rng: ChaCha8Rng,
    book: BookState,
    pool: Pool,
    side_count: [usize; 2],
    next_id: OrderId,
    events: Vec<LobEvent>,
    placement: Geometric,
}

fn side_ix(side: Side) -> usize {
    match side {
        Side::Bid => 0,
        Side::Ask => 1,
    }
}

impl Simulator<'_> {
    fn emit(&mut self, e: LobEvent) -> Result<()> {
        self.book.apply(&e, true)?;
        match e.kind {
            EventKind::Add => {
                self.pool.insert(e.order_id);
                self.side_count[side_ix(e.side)] += 1;
            }
            _ => {
                if self.book.order(e.order_id).is_none() {
                    self.pool.remove(e.order_id);
                    self.side_count[side_ix(e.side)] -= 1;
                }
            }
        }
        self.events.push(e);
        Ok(())
    }

    fn lots(&mut self) -> u64 {
        self.cfg.lot_size * self.rng.random_range(1..=self.cfg.max_lots)
    }

    fn add(&mut self, t: i64, side: Side, price: i64) -> Result<()> {
        let size = self.lots();
        let id = self.next_id;
        self.next_id += 1;
        self.emit(LobEvent { timestamp_ms: t, order_id: id, side, price, size, kind: EventKind::Add })
    }

    /// Places `k + 1` ticks away from the opposite touch, which never
    /// crosses; each side falls back to the other or the opening price.
    fn limit_price(&mut self, side: Side) -> i64 {
        let k = self.placement.sample(&mut self.rng) as i64;
        let p0 = self.cfg.initial_price_ticks;
        match side {
            Side::Bid => {
                let ask = self.book.best_ask().or_else(|| self.book.best_bid().map(|b| b + 1)).unwrap_or(p0);
                (ask - 1 - k).max(1)
            }
            Side::Ask => {
                let bid = self.book.best_bid().or_else(|| self.book.best_ask().map(|a| a - 1)).unwrap_or(p0);
                bid + 1 + k
            }
        }
    }

    fn random_side(&mut self) -> Side {
        if self.rng.random::<bool>() {
            Side::Bid
        } else {
            Side::Ask
        }
    }

    fn open(&mut self, t: i64) -> Result<()> {
        let p0 = self.cfg.initial_price_ticks;
        for level in 0..self.cfg.initial_levels as i64 {
            self.add(t, Side::Bid, p0 - 1 - level)?;
            self.add(t, Side::Ask, p0 + 1 + level)?;
        }
        Ok(())
    }

    fn market_order(&mut self, t: i64, side: Side) -> Result<()> {
        let mut want = self.lots();
        while want > 0 && self.side_count[side_ix(side)] > self.cfg.min_side_orders {
            let Some((price, _, ids)) = self.book.levels(side).next() else { break };
            let id = ids[0];
            let remaining = self.book.order(id).map_or(0, |o| o.remaining_size);
            let size = want.min(remaining);
            want -= size;
            self.emit(LobEvent { timestamp_ms: t, order_id: id, side, price, size, kind: EventKind::Execute })?;
        }
        Ok(())
    }

    fn step(&mut self, t: i64) -> Result<()> {
        let n = self.pool.ids.len() as f64;
        let c = self.cfg;
        let rates = [c.add_rate, c.cancel_rate * n, c.execute_rate, c.modify_rate];
        let total: f64 = rates.iter().sum();
        let mut u = self.rng.random::<f64>() * total;
        let mut kind = 0;
        while kind < 3 && u >= rates[kind] {
            u -= rates[kind];
            kind += 1;
        }
        match kind {
            1 => {
                let Some(id) = self.pool.pick(&mut self.rng) else { return Ok(()) };
                let o = self.book.order(id).expect("pooled order rests").clone();
                if self.side_count[side_ix(o.side)] <= c.min_side_orders {
                    let price = self.limit_price(o.side);
                    return self.add(t, o.side, price);
                }
                self.emit(LobEvent { timestamp_ms: t, order_id: id, side: o.side, price: o.price, size: 0, kind: EventKind::Cancel })
            }
            2 => {
                // Market buys lift the ask, market sells hit the bid.
                let side = self.random_side();
                if self.side_count[side_ix(side)] <= c.min_side_orders {
                    let price = self.limit_price(side);
                    return self.add(t, side, price);
                }
                self.market_order(t, side)
            }
            3 => {
                let Some(id) = self.pool.pick(&mut self.rng) else { return Ok(()) };
                let o = self.book.order(id).expect("pooled order rests").clone();
                let step = self.rng.random_range(-1..=1);
                let price = match o.side {
                    Side::Bid => (o.price + step).min(self.book.best_ask().map_or(i64::MAX, |a| a - 1)).max(1),
                    Side::Ask => (o.price + step).max(self.book.best_bid().map_or(1, |b| b + 1)),
                };
                let size = self.lots();
                self.emit(LobEvent { timestamp_ms: t, order_id: id, side: o.side, price, size, kind: EventKind::Modify })
            }
            _ => {
                let side = self.random_side();
                let price = self.limit_price(side);
                self.add(t, side, price)
            }
        }
    }
}

/// One simulated day of events, opening with a symmetric book at the
/// session start.
pub fn simulate_day(cfg: &FlowConfig, day: usize) -> Result<Vec<LobEvent>> {
    cfg.validate()?;
    let placement = Geometric::new(1.0 - cfg.placement_decay)
        .map_err(|e| Error::InvalidParameter(format!("placement decay: {e}")))?;
    let mut sim = Simulator {
        cfg,
        rng: day_rng(cfg.seed, STREAM_FLOW, day),
        book: BookState::new(),
        pool: Pool::default(),
        side_count: [0, 0],
        next_id: 1,
        events: Vec::new(),
        placement,
    };
    let start = cfg.session.start_ms;
    sim.open(start)?;
    let mut clock = 0.0_f64;
    loop {
        let n = sim.pool.ids.len() as f64;
        let total = cfg.add_rate + cfg.cancel_rate * n + cfg.execute_rate + cfg.modify_rate;
        let dt: f64 = Exp1.sample(&mut sim.rng);
        clock += dt / total;
        let t = start + (clock * 1000.0).floor() as i64;
        if t >= cfg.session.end_ms {
            break;
        }
        sim.step(t)?;
    }
    Ok(sim.events)
}

/// All configured days, generated in parallel and returned in day order.
pub fn gen_order_flow(cfg: &FlowConfig) -> Result<Vec<Vec<LobEvent>>> {
    (0..cfg.days).into_par_iter().map(|d| simulate_day(cfg, d)).collect()
}

/// Poisson timestamps of an index feed over the session.
pub fn gen_index_activity(cfg: &FlowConfig, day: usize) -> Vec<i64> {
    let mut out = Vec::new();
    if cfg.index_rate <= 0.0 {
        return out;
    }
    let mut rng = day_rng(cfg.seed, STREAM_INDEX, day);
    let mut clock = 0.0_f64;
    loop {
        let dt: f64 = Exp1.sample(&mut rng);
        clock += dt / cfg.index_rate;
        let t = cfg.session.start_ms + (clock * 1000.0).floor() as i64;
        if t >= cfg.session.end_ms {
            return out;
        }
        out.push(t);
    }
}

pub fn write_index_csv<W: Write>(times: &[i64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["timestamp_ms"])?;
    for t in times {
        w.write_record([t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_index_csv<R: std::io::Read>(input: R) -> Result<Vec<i64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut rows = reader.records();
    let Some(header) = rows.next() else { return Ok(Vec::new()) };
    crate::lob::check_header(&header?, &["timestamp_ms"])?;
    let mut out: Vec<i64> = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let t: i64 = row[0].parse().map_err(|_| Error::Parse { line, message: format!("bad timestamp_ms '{}'", &row[0]) })?;
        if out.last().is_some_and(|&p| t < p) {
            return Err(Error::NonMonotoneTimestamp { line, timestamp: t, previous: *out.last().unwrap() });
        }
        out.push(t);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Gaussian { mean: f64, sd: f64 },
    Dummy { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateGen {
    pub name: String,
    pub kind: CovariateKind,
}

/// Direct sampler of covariates and durations from a known model.
///
/// `mu` is `β'x` for the lognormal and `exp(β'x)` otherwise. `sigma` is
/// `exp(α'x)` when `alpha` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TedGenConfig {
    pub seed: u64,
    pub family: Family,
    pub covariates: Vec<CovariateGen>,
    /// Equicorrelation of the Gaussian covariates.
    pub correlation: f64,
    /// Intercept first.
    pub beta: Vec<f64>,
    pub alpha: Option<Vec<f64>>,
    pub sigma: f64,
    pub nu: f64,
    pub records_per_day: usize,
    pub days: usize,
    pub max_retries: usize,
}

impl Default for TedGenConfig {
    fn default() -> Self {
        let g = |name: &str, mean, sd| CovariateGen { name: name.into(), kind: CovariateKind::Gaussian { mean, sd } };
        TedGenConfig {
            seed: 1,
            family: Family::GenGamma,
            covariates: vec![
                g("prevTEDavg", 7.0, 1.0),
                g("spreads", 2.0, 0.5),
                g("lask", 3.0, 1.0),
                CovariateGen { name: "mobuy".into(), kind: CovariateKind::Dummy { p: 0.3 } },
            ],
            correlation: 0.3,
            beta: vec![6.0, 0.2, 0.3, -0.15, -0.4],
            alpha: None,
            sigma: 0.8,
            nu: 0.4,
            records_per_day: 2000,
            days: 1,
            max_retries: 100,
        }
    }
}

impl TedGenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let p = self.covariates.len();
        if self.beta.len() != p + 1 {
            return bad(format!("beta has {} entries for {p} covariates plus intercept", self.beta.len()));
        }
        if let Some(a) = &self.alpha {
            if a.len() != p + 1 {
                return bad(format!("alpha has {} entries for {p} covariates plus intercept", a.len()));
            }
        } else if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma {} must be positive", self.sigma));
        }
        if self.family == Family::GenGamma && !(self.nu.is_finite() && self.nu != 0.0) {
            return bad(format!("nu {} must be finite and non-zero", self.nu));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return bad(format!("correlation {} not in [0, 1)", self.correlation));
        }
        for c in &self.covariates {
            match c.kind {
                CovariateKind::Gaussian { mean, sd } if mean.is_finite() && sd > 0.0 && sd.is_finite() => {}
                CovariateKind::Dummy { p } if (0.0..=1.0).contains(&p) => {}
                _ => return bad(format!("bad generator for covariate '{}'", c.name)),
            }
        }
        if self.records_per_day == 0 {
            return bad("records per day must be >= 1".into());
        }
        Ok(())
    }

    fn linear(coef: &[f64], x: &[f64]) -> f64 {
        coef[0] + coef[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// True distribution at covariate vector `x`.
    pub fn params_at(&self, x: &[f64]) -> Result<ParamSet> {
        let eta = Self::linear(&self.beta, x);
        let mu = if self.family == Family::Lognormal { eta } else { eta.exp() };
        let sigma = self.alpha.as_ref().map_or(self.sigma, |a| Self::linear(a, x).exp());
        ParamSet::new(self.family, mu, sigma, self.nu)
    }

    fn draw_x<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let r = self.correlation;
        let common: f64 = rng.sample(StandardNormal);
        self.covariates
            .iter()
            .map(|c| match c.kind {
                CovariateKind::Gaussian { mean, sd } => {
                    let e: f64 = rng.sample(StandardNormal);
                    mean + sd * (r.sqrt() * common + (1.0 - r).sqrt() * e)
                }
                CovariateKind::Dummy { p } => f64::from(u8::from(rng.random::<f64>() < p)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub day: usize,
    pub n: usize,
    pub retries: usize,
    pub config: TedGenConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TedSample {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub tau: Vec<f64>,
    pub truth: GroundTruth,
}

/// One day of `records_per_day` draws. A covariate draw whose implied
/// parameters are invalid, or whose response is not a positive finite
/// number, is redrawn up to `max_retries` times.
pub fn gen_ted_sample(cfg: &TedGenConfig, day: usize) -> Result<TedSample> {
    cfg.validate()?;
    let mut rng = day_rng(cfg.seed, STREAM_TED, day);
    let n = cfg.records_per_day;
    let (mut rows, mut tau) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut retries = 0;
    for _ in 0..n {
        let mut attempt = 0;
        loop {
            let x = cfg.draw_x(&mut rng);
            if let Ok(p) = cfg.params_at(&x) {
                let t = p.sample(&mut rng);
                if t > 0.0 && t.is_finite() {
                    rows.push(x);
                    tau.push(t);
                    break;
                }
            }
            attempt += 1;
            retries += 1;
            if attempt > cfg.max_retries {
                return Err(Error::InvalidParameter(format!(
                    "no valid draw after {} retries; check the true coefficients",
                    cfg.max_retries
                )));
            }
        }
    }
    Ok(TedSample {
        names: cfg.covariates.iter().map(|c| c.name.clone()).collect(),
        rows,
        tau,
        truth: GroundTruth { schema_version: TRUTH_SCHEMA_VERSION, day, n, retries, config: cfg.clone() },
    })
}

impl TedSample {
    /// Lays the sample out as TED records: covariates land in the columns
    /// of the same name, durations are rounded up to whole milliseconds,
    /// and exceedance starts are spaced one millisecond after the previous
    /// exceedance ends.
    pub fn to_records(&self, start_ms: i64) -> Result<Vec<TedRecord>> {
        let slots: Vec<usize> = self
            .names
            .iter()
            .map(|n| covariate_index(n).ok_or_else(|| Error::Schema(format!("'{n}' is not a duration covariate"))))
            .collect::<Result<_>>()?;
        let mut t = start_ms;
        let mut out: Vec<TedRecord> = Vec::with_capacity(self.tau.len());
        for (x, tau) in self.rows.iter().zip(&self.tau) {
            let mut covariates = [0.0; N_COVARIATES];
            for (&j, v) in slots.iter().zip(x) {
                covariates[j] = *v;
            }
            let trigger = if covariates[IDX_MOBUY] == 1.0 {
                Trigger::MoBuy
            } else if covariates[IDX_MOSELL] == 1.0 {
                Trigger::MoSell
            } else {
                Trigger::CancelOrOther
            };
            let tau_ms = (tau.ceil() as i64).max(1);
            out.push(TedRecord { start_ms: t, tau_ms, censored: false, trigger, covariates, has_history: !out.is_empty() });
            t += tau_ms + 1;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::{parse_events, replay, write_events, ReplayOptions};

    fn short_day() -> FlowConfig {
        FlowConfig {
            session: TradingWindow::new(TradingWindow::hms(8, 0, 0), TradingWindow::hms(8, 30, 0)),
            ..FlowConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = short_day();
        let bytes = |events: &[LobEvent]| {
            let mut b = Vec::new();
            write_events(events, &mut b).unwrap();
            b
        };
        let a = simulate_day(&cfg, 0).unwrap();
        assert_eq!(bytes(&a), bytes(&simulate_day(&cfg, 0).unwrap()));
        assert_ne!(bytes(&a), bytes(&simulate_day(&cfg, 1).unwrap()));
        let b = bytes(&a);
        assert_eq!(parse_events(b.as_slice()).unwrap(), a);
    }

    #[test]
    fn flow_replays_strictly_with_varying_spread() {
        let events = simulate_day(&short_day(), 3).unwrap();
        let r = replay(&events, &ReplayOptions::default()).unwrap();
        assert!(r.warnings.is_empty());
        let spreads: std::collections::BTreeSet<i64> = r.frames.iter().filter_map(|f| f.spread()).collect();
        assert!(spreads.len() >= 3, "{spreads:?}");
        assert!(events.iter().any(|e| e.kind == EventKind::Modify));
        assert!(events.iter().any(|e| e.kind == EventKind::Execute && e.side == Side::Bid));
    }

    #[test]
    fn pure_adds_only_grow_depth() {
        let cfg = FlowConfig { cancel_rate: 0.0, execute_rate: 0.0, modify_rate: 0.0, ..short_day() };
        let events = simulate_day(&cfg, 0).unwrap();
        assert!(events.iter().all(|e| e.kind == EventKind::Add));
        let mut book = BookState::new();
        let mut last = 0;
        for e in &events {
            book.apply(e, true).unwrap();
            let depth: u64 = [Side::Bid, Side::Ask].iter().flat_map(|s| book.levels(*s).map(|l| l.1)).sum();
            assert!(depth >= last);
            last = depth;
        }
        assert_eq!(book.n_orders(), events.len());
    }

    #[test]
    fn index_feed_is_sorted_and_in_session() {
        let cfg = short_day();
        let t = gen_index_activity(&cfg, 0);
        assert!(t.windows(2).all(|w| w[0] <= w[1]));
        assert!(t.iter().all(|x| cfg.session.contains(*x)));
        let expected = cfg.index_rate * cfg.session.len_ms() as f64 / 1000.0;
        assert!((t.len() as f64 - expected).abs() < 5.0 * expected.sqrt());
        let mut buf = Vec::new();
        write_index_csv(&t, &mut buf).unwrap();
        assert_eq!(read_index_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn degenerate_lognormal_noise() {
        let cfg = TedGenConfig {
            family: Family::Lognormal,
            beta: vec![4.0, 0.0, 0.0, 0.0, 0.0],
            sigma: 1e-12,
            records_per_day: 200,
            ..TedGenConfig::default()
        };
        let s = gen_ted_sample(&cfg, 0).unwrap();
        assert!(s.tau.iter().all(|t| (t / 4.0_f64.exp() - 1.0).abs() < 1e-9));
    }

    #[test]
    fn sample_moments_match_closed_form() {
        for family in Family::ALL {
            let cfg = TedGenConfig {
                family,
                covariates: vec![],
                beta: vec![if family == Family::Lognormal { 1.0 } else { 3.0 }],
                sigma: 0.6,
                nu: 1.7,
                records_per_day: 100_000,
                ..TedGenConfig::default()
            };
            let s = gen_ted_sample(&cfg, 0).unwrap();
            let (m, v) = cfg.params_at(&[]).unwrap().mean_variance().unwrap();
            let n = s.tau.len() as f64;
            let mean = s.tau.iter().sum::<f64>() / n;
            assert!((mean - m).abs() < 3.0 * (v / n).sqrt(), "{family}: {mean} vs {m}");
        }
    }

    #[test]
    fn invalid_draws_exhaust_retries() {
        let cfg = TedGenConfig { beta: vec![800.0, 0.0, 0.0, 0.0, 0.0], max_retries: 5, ..TedGenConfig::default() };
        assert!(gen_ted_sample(&cfg, 0).is_err());
    }

    #[test]
    fn records_use_named_columns() {
        let s = gen_ted_sample(&TedGenConfig { records_per_day: 50, ..TedGenConfig::default() }, 2).unwrap();
        let r = s.to_records(1000).unwrap();
        let j = covariate_index("spreads").unwrap();
        assert!(r.iter().zip(&s.rows).all(|(rec, x)| rec.covariates[j] == x[1]));
        assert!(r.windows(2).all(|w| w[1].start_ms > w[0].start_ms + w[0].tau_ms));
        assert!(r.iter().all(|x| (x.trigger == Trigger::MoBuy) == (x.covariates[IDX_MOBUY] == 1.0)));
    }
}
