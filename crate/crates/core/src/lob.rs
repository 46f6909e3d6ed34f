//! Order-event parsing and limit order book reconstruction.
//!
//! Prices are integer ticks and timestamps integer milliseconds since
//! midnight. Events sharing a millisecond are applied in file order.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type OrderId = u64;

pub const EVENT_CSV_HEADER: [&str; 6] = ["timestamp_ms", "order_id", "side", "price_ticks", "size", "kind"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Bid,
    Ask,
}

impl Side {
    fn code(self) -> &'static str {
        match self {
            Side::Bid => "b",
            Side::Ask => "a",
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Bid => Side::Ask,
            Side::Ask => Side::Bid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Add,
    Cancel,
    Modify,
    Execute,
}

impl EventKind {
    fn code(self) -> &'static str {
        match self {
            EventKind::Add => "A",
            EventKind::Cancel => "C",
            EventKind::Modify => "M",
            EventKind::Execute => "E",
        }
    }
}

/// One row of the event stream.
///
/// For `Cancel` and `Execute`, `size` is the number of shares removed (a
/// cancel of size 0 removes the whole order). For `Modify`, `price` and
/// `size` are the order's new price and remaining size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LobEvent {
    pub timestamp_ms: i64,
    pub order_id: OrderId,
    pub side: Side,
    pub price: i64,
    pub size: u64,
    pub kind: EventKind,
}

/// Book-level configuration shared by the replay and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LobConfig {
    /// Currency value of one price tick.
    pub tick_size: f64,
    pub window: TradingWindow,
    pub strict: bool,
}

impl Default for LobConfig {
    fn default() -> Self {
        LobConfig { tick_size: 0.01, window: TradingWindow::default(), strict: true }
    }
}

/// Half-open observation window `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradingWindow {
    pub start_ms: i64,
    pub end_ms: i64,
}

impl TradingWindow {
    pub const fn new(start_ms: i64, end_ms: i64) -> Self {
        TradingWindow { start_ms, end_ms }
    }

    pub fn hms(h: i64, m: i64, s: i64) -> i64 {
        ((h * 60 + m) * 60 + s) * 1000
    }

    pub fn contains(&self, t: i64) -> bool {
        t >= self.start_ms && t < self.end_ms
    }

    pub fn len_ms(&self) -> i64 {
        self.end_ms - self.start_ms
    }
}

impl Default for TradingWindow {
    /// 08:01 to 16:29.
    fn default() -> Self {
        TradingWindow::new(TradingWindow::hms(8, 1, 0), TradingWindow::hms(16, 29, 0))
    }
}

/// Parse an event CSV. An empty input yields no events.
pub fn parse_events<R: Read>(input: R) -> Result<Vec<LobEvent>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        None => return Ok(Vec::new()),
        Some(h) => h?,
    };
    check_header(&header, &EVENT_CSV_HEADER)?;

    let mut events = Vec::new();
    let mut previous: Option<i64> = None;
    for record in records {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let event = parse_row(&record, line)?;
        if let Some(prev) = previous {
            if event.timestamp_ms < prev {
                return Err(Error::NonMonotoneTimestamp { line, timestamp: event.timestamp_ms, previous: prev });
            }
        }
        previous = Some(event.timestamp_ms);
        events.push(event);
    }
    Ok(events)
}

pub(crate) fn check_header(header: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for (i, name) in expected.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *name => {}
            Some(got) => {
                return Err(Error::Schema(format!("column {} is '{got}', expected '{name}'", i + 1)));
            }
            None => return Err(Error::Schema(format!("missing column {} '{name}'", i + 1))),
        }
    }
    if header.len() > expected.len() {
        return Err(Error::Schema(format!(
            "unexpected column {} '{}'",
            expected.len() + 1,
            &header[expected.len()]
        )));
    }
    Ok(())
}

fn parse_row(record: &csv::StringRecord, line: u64) -> Result<LobEvent> {
    let bad = |message: String| Error::Parse { line, message };
    if record.len() != EVENT_CSV_HEADER.len() {
        return Err(bad(format!("expected {} fields, found {}", EVENT_CSV_HEADER.len(), record.len())));
    }
    let field = |i: usize| &record[i];
    let timestamp_ms: i64 = field(0).parse().map_err(|_| bad(format!("bad timestamp_ms '{}'", field(0))))?;
    let order_id: u64 = field(1).parse().map_err(|_| bad(format!("bad order_id '{}'", field(1))))?;
    let side = match field(2) {
        "b" | "B" => Side::Bid,
        "a" | "A" | "s" | "S" => Side::Ask,
        other => return Err(bad(format!("bad side '{other}'"))),
    };
    let price: i64 = field(3).parse().map_err(|_| bad(format!("bad price_ticks '{}'", field(3))))?;
    let size: u64 = field(4).parse().map_err(|_| bad(format!("bad size '{}'", field(4))))?;
    let kind = match field(5) {
        "A" => EventKind::Add,
        "C" => EventKind::Cancel,
        "M" => EventKind::Modify,
        "E" => EventKind::Execute,
        other => return Err(bad(format!("bad kind '{other}'"))),
    };
    if timestamp_ms < 0 {
        return Err(bad("negative timestamp".into()));
    }
    if matches!(kind, EventKind::Add | EventKind::Modify) && price <= 0 {
        return Err(bad(format!("price must be positive, got {price}")));
    }
    if kind == EventKind::Add && size == 0 {
        return Err(bad("add with zero size".into()));
    }
    Ok(LobEvent { timestamp_ms, order_id, side, price, size, kind })
}

pub fn write_events<W: Write>(events: &[LobEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_CSV_HEADER)?;
    for e in events {
        w.write_record([
            e.timestamp_ms.to_string(),
            e.order_id.to_string(),
            e.side.code().to_string(),
            e.price.to_string(),
            e.size.to_string(),
            e.kind.code().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RestingOrder {
    pub order_id: OrderId,
    pub side: Side,
    pub price: i64,
    pub remaining_size: u64,
    pub entry_time: i64,
    pub modified: bool,
    pub last_modify_time: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct PriceLevel {
    /// Queue order.
    orders: Vec<OrderId>,
    volume: u64,
}

/// Aggregates over the levels nearest the midpoint on one side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthSummary {
    pub order_count: u64,
    pub volume: u64,
    pub modified_count: u64,
    /// Σ entry_time over the counted orders; with `order_count` gives the
    /// mean age at any later instant.
    pub entry_time_sum: i64,
}

impl DepthSummary {
    pub fn mean_age_at(&self, now_ms: i64) -> f64 {
        if self.order_count == 0 {
            return 0.0;
        }
        let n = self.order_count as i128;
        (n * now_ms as i128 - self.entry_time_sum as i128) as f64 / n as f64
    }

    pub fn stats_at(&self, now_ms: i64) -> LevelStats {
        LevelStats {
            order_count: self.order_count,
            total_volume: self.volume,
            modified_count: self.modified_count,
            mean_age_ms: self.mean_age_at(now_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub order_count: u64,
    pub total_volume: u64,
    pub modified_count: u64,
    pub mean_age_ms: f64,
}

/// Result of applying one event.
#[derive(Debug, Clone, PartialEq)]
pub enum Applied {
    Ok,
    /// The event was ignored (lenient mode only).
    Skipped(String),
    /// The event was applied after clamping or despite an inconsistency.
    Adjusted(String),
}

/// The reconstructed book.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BookState {
    time_ms: i64,
    bids: BTreeMap<i64, PriceLevel>,
    asks: BTreeMap<i64, PriceLevel>,
    orders: HashMap<OrderId, RestingOrder>,
}

impl BookState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn time_ms(&self) -> i64 {
        self.time_ms
    }

    pub fn best_bid(&self) -> Option<i64> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<i64> {
        self.asks.keys().next().copied()
    }

    /// Ask minus bid in ticks, when both sides are present.
    pub fn spread(&self) -> Option<i64> {
        Some(self.best_ask()? - self.best_bid()?)
    }

    pub fn order(&self, id: OrderId) -> Option<&RestingOrder> {
        self.orders.get(&id)
    }

    pub fn n_orders(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self, side: Side) -> bool {
        self.side_levels(side).is_empty()
    }

    fn side_levels(&self, side: Side) -> &BTreeMap<i64, PriceLevel> {
        match side {
            Side::Bid => &self.bids,
            Side::Ask => &self.asks,
        }
    }

    fn side_levels_mut(&mut self, side: Side) -> &mut BTreeMap<i64, PriceLevel> {
        match side {
            Side::Bid => &mut self.bids,
            Side::Ask => &mut self.asks,
        }
    }

    /// Levels from the touch outward: `(price, aggregate volume, order ids in queue order)`.
    pub fn levels(&self, side: Side) -> Box<dyn Iterator<Item = (i64, u64, &[OrderId])> + '_> {
        fn map<'a>((p, l): (&'a i64, &'a PriceLevel)) -> (i64, u64, &'a [OrderId]) {
            (*p, l.volume, l.orders.as_slice())
        }
        match side {
            Side::Bid => Box::new(self.bids.iter().rev().map(map)),
            Side::Ask => Box::new(self.asks.iter().map(map)),
        }
    }

    pub fn depth_summary(&self, side: Side, n_levels: usize) -> DepthSummary {
        let mut s = DepthSummary::default();
        for (_, volume, ids) in self.levels(side).take(n_levels) {
            s.volume += volume;
            for id in ids {
                let o = &self.orders[id];
                s.order_count += 1;
                s.entry_time_sum += o.entry_time;
                if o.modified {
                    s.modified_count += 1;
                }
            }
        }
        s
    }

    /// Order count, volume, modified count and mean age over the
    /// `n_levels` levels nearest the midpoint, measured at the book's time.
    pub fn level_stats(&self, side: Side, n_levels: usize) -> LevelStats {
        assert!(n_levels >= 1, "n_levels must be at least 1");
        self.depth_summary(side, n_levels).stats_at(self.time_ms)
    }

    /// Cost of buying then selling `notional` currency units by walking the
    /// book, in basis points of the midpoint. `None` when either walk runs
    /// out of visible depth.
    pub fn round_trip_cost_bps(&self, notional: f64, tick_size: f64) -> Option<f64> {
        let bid = self.best_bid()? as f64 * tick_size;
        let ask = self.best_ask()? as f64 * tick_size;
        let mid = 0.5 * (bid + ask);
        let buy_vwap = self.walk_vwap(Side::Ask, notional, tick_size)?;
        let sell_vwap = self.walk_vwap(Side::Bid, notional, tick_size)?;
        Some(1e4 * (buy_vwap - sell_vwap) / mid)
    }

    /// Average price paid (or received) trading `notional` against `side`.
    fn walk_vwap(&self, side: Side, notional: f64, tick_size: f64) -> Option<f64> {
        let mut remaining = notional;
        let mut shares = 0.0;
        for (price, volume, _) in self.levels(side) {
            let px = price as f64 * tick_size;
            let level_value = px * volume as f64;
            if level_value >= remaining {
                shares += remaining / px;
                return Some(notional / shares);
            }
            remaining -= level_value;
            shares += volume as f64;
        }
        None
    }

    pub fn apply(&mut self, e: &LobEvent, strict: bool) -> Result<Applied> {
        self.time_ms = self.time_ms.max(e.timestamp_ms);
        let outcome = match e.kind {
            EventKind::Add => self.apply_add(e, strict)?,
            EventKind::Cancel | EventKind::Execute => self.apply_removal(e, strict)?,
            EventKind::Modify => self.apply_modify(e, strict)?,
        };
        if let (Some(bid), Some(ask)) = (self.best_bid(), self.best_ask()) {
            if bid >= ask {
                if strict {
                    return Err(Error::CrossedBook { time_ms: e.timestamp_ms, bid, ask });
                }
                return Ok(Applied::Adjusted(format!("book crossed: bid {bid} >= ask {ask}")));
            }
        }
        Ok(outcome)
    }

    fn apply_add(&mut self, e: &LobEvent, strict: bool) -> Result<Applied> {
        if self.orders.contains_key(&e.order_id) {
            if strict {
                return Err(Error::DuplicateOrder(e.order_id));
            }
            return Ok(Applied::Skipped(format!("duplicate add for order {}", e.order_id)));
        }
        let order = RestingOrder {
            order_id: e.order_id,
            side: e.side,
            price: e.price,
            remaining_size: e.size,
            entry_time: e.timestamp_ms,
            modified: false,
            last_modify_time: None,
        };
        self.insert(order);
        Ok(Applied::Ok)
    }

    fn insert(&mut self, order: RestingOrder) {
        let level = self.side_levels_mut(order.side).entry(order.price).or_default();
        level.orders.push(order.order_id);
        level.volume += order.remaining_size;
        self.orders.insert(order.order_id, order);
    }

    fn detach(&mut self, id: OrderId) -> RestingOrder {
        let order = self.orders.remove(&id).expect("order present");
        let levels = self.side_levels_mut(order.side);
        let level = levels.get_mut(&order.price).expect("level present");
        level.orders.retain(|&o| o != id);
        level.volume -= order.remaining_size;
        if level.orders.is_empty() {
            levels.remove(&order.price);
        }
        order
    }

    fn apply_removal(&mut self, e: &LobEvent, strict: bool) -> Result<Applied> {
        let Some(order) = self.orders.get(&e.order_id) else {
            if strict {
                return Err(Error::UnknownOrder(e.order_id));
            }
            return Ok(Applied::Skipped(format!("unknown order {}", e.order_id)));
        };
        let remaining = order.remaining_size;
        let full = e.kind == EventKind::Cancel && e.size == 0;
        if !full && e.size > remaining {
            if strict {
                return Err(Error::Oversize { order_id: e.order_id, requested: e.size, remaining });
            }
            self.detach(e.order_id);
            return Ok(Applied::Adjusted(format!(
                "order {}: size {} exceeds remaining {remaining}, removed",
                e.order_id, e.size
            )));
        }
        if full || e.size == remaining {
            self.detach(e.order_id);
        } else {
            let (side, price) = (order.side, order.price);
            self.orders.get_mut(&e.order_id).expect("present").remaining_size -= e.size;
            self.side_levels_mut(side).get_mut(&price).expect("level present").volume -= e.size;
        }
        Ok(Applied::Ok)
    }

    fn apply_modify(&mut self, e: &LobEvent, strict: bool) -> Result<Applied> {
        let Some(order) = self.orders.get(&e.order_id) else {
            if strict {
                return Err(Error::UnknownOrder(e.order_id));
            }
            return Ok(Applied::Skipped(format!("modify of unknown order {}", e.order_id)));
        };
        let mut note = None;
        if order.side != e.side {
            if strict {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("modify changes side of order {}", e.order_id),
                });
            }
            note = Some(format!("modify side mismatch for order {}, kept original side", e.order_id));
        }
        let mut order = self.detach(e.order_id);
        if e.size == 0 {
            return Ok(note.map(Applied::Adjusted).unwrap_or(Applied::Ok));
        }
        // Treated as cancel-and-resubmit: the order loses queue priority.
        order.price = e.price;
        order.remaining_size = e.size;
        order.entry_time = e.timestamp_ms;
        order.modified = true;
        order.last_modify_time = Some(e.timestamp_ms);
        self.insert(order);
        Ok(note.map(Applied::Adjusted).unwrap_or(Applied::Ok))
    }

    /// Checks level ordering, volume aggregation and the uncrossed-book invariant.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if let (Some(b), Some(a)) = (self.best_bid(), self.best_ask()) {
            if b >= a {
                return Err(format!("crossed book: bid {b} ask {a}"));
            }
        }
        let mut counted = 0;
        for side in [Side::Bid, Side::Ask] {
            for (price, level) in self.side_levels(side) {
                if level.orders.is_empty() {
                    return Err(format!("empty level at {price}"));
                }
                let mut sum = 0;
                for id in &level.orders {
                    let o = self.orders.get(id).ok_or_else(|| format!("dangling order {id}"))?;
                    if o.price != *price || o.side != side || o.remaining_size == 0 {
                        return Err(format!("order {id} misfiled"));
                    }
                    sum += o.remaining_size;
                }
                if sum != level.volume {
                    return Err(format!("level {price} volume {} != {sum}", level.volume));
                }
                counted += level.orders.len();
            }
        }
        if counted != self.orders.len() {
            return Err("order index and levels disagree".into());
        }
        Ok(())
    }
}

/// Book summary after one event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub time_ms: i64,
    pub event_index: usize,
    pub best_bid: Option<i64>,
    pub best_ask: Option<i64>,
    pub bid: DepthSummary,
    pub ask: DepthSummary,
    pub xlm_bps: Option<f64>,
}

impl Frame {
    pub fn spread(&self) -> Option<i64> {
        Some(self.best_ask? - self.best_bid?)
    }

    pub fn depth(&self, side: Side) -> &DepthSummary {
        match side {
            Side::Bid => &self.bid,
            Side::Ask => &self.ask,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayOptions {
    pub strict: bool,
    pub n_levels: usize,
    pub tick_size: f64,
    /// Compute the round-trip cost for this notional at every event.
    pub xlm_notional: Option<f64>,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions { strict: true, n_levels: 5, tick_size: 0.01, xlm_notional: None }
    }
}

/// Every event's post-state summary; `frames[i]` follows `events[i]`.
#[derive(Debug, Clone)]
pub struct Replay {
    pub frames: Vec<Frame>,
    pub warnings: Vec<String>,
    pub xlm_shortfalls: usize,
    pub final_book: BookState,
}

pub fn replay(events: &[LobEvent], opts: &ReplayOptions) -> Result<Replay> {
    let mut book = BookState::new();
    let mut frames = Vec::with_capacity(events.len());
    let mut warnings = Vec::new();
    let mut xlm_shortfalls = 0;
    for (i, e) in events.iter().enumerate() {
        match book.apply(e, opts.strict)? {
            Applied::Ok => {}
            Applied::Skipped(msg) | Applied::Adjusted(msg) => {
                warn!("event {i} at {} ms: {msg}", e.timestamp_ms);
                warnings.push(format!("event {i}: {msg}"));
            }
        }
        let xlm_bps = opts.xlm_notional.and_then(|notional| {
            let v = book.round_trip_cost_bps(notional, opts.tick_size);
            if v.is_none() && book.spread().is_some() {
                xlm_shortfalls += 1;
            }
            v
        });
        frames.push(Frame {
            time_ms: e.timestamp_ms,
            event_index: i,
            best_bid: book.best_bid(),
            best_ask: book.best_ask(),
            bid: book.depth_summary(Side::Bid, opts.n_levels),
            ask: book.depth_summary(Side::Ask, opts.n_levels),
            xlm_bps,
        });
    }
    Ok(Replay { frames, warnings, xlm_shortfalls, final_book: book })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: i64, id: u64, side: Side, price: i64, size: u64, kind: EventKind) -> LobEvent {
        LobEvent { timestamp_ms: t, order_id: id, side, price, size, kind }
    }

    #[test]
    fn empty_file_parses_to_nothing() {
        assert!(parse_events("".as_bytes()).unwrap().is_empty());
        let header_only = "timestamp_ms,order_id,side,price_ticks,size,kind\n";
        assert!(parse_events(header_only.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn single_add_row() {
        let csv = "timestamp_ms,order_id,side,price_ticks,size,kind\n34500000,7,b,10001,100,A\n";
        let events = parse_events(csv.as_bytes()).unwrap();
        assert_eq!(events, vec![ev(34_500_000, 7, Side::Bid, 10001, 100, EventKind::Add)]);
        assert_eq!(events[0].timestamp_ms, TradingWindow::hms(9, 35, 0));
    }

    #[test]
    fn non_monotone_timestamp_is_hard_error() {
        let csv = "timestamp_ms,order_id,side,price_ticks,size,kind\n10,1,b,5,1,A\n9,2,b,5,1,A\n";
        match parse_events(csv.as_bytes()) {
            Err(Error::NonMonotoneTimestamp { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected NonMonotoneTimestamp, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        let csv = "timestamp_ms,order_id,side,price_ticks,size,kind\n10,1,b,5,1,A\n11,2,x,5,1,A\n";
        match parse_events(csv.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("side"));
            }
            other => panic!("{other:?}"),
        }
        let zero_price = "timestamp_ms,order_id,side,price_ticks,size,kind\n10,1,b,0,1,A\n";
        assert!(matches!(parse_events(zero_price.as_bytes()), Err(Error::Parse { line: 2, .. })));
        let zero_size = "timestamp_ms,order_id,side,price_ticks,size,kind\n10,1,b,4,0,A\n";
        assert!(matches!(parse_events(zero_size.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn wrong_header_names_column() {
        let csv = "timestamp_ms,order,side,price_ticks,size,kind\n";
        let err = parse_events(csv.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("'order'") && err.contains("order_id"), "{err}");
    }

    #[test]
    fn add_then_cancel() {
        let mut book = BookState::new();
        book.apply(&ev(1, 1, Side::Bid, 100, 50, EventKind::Add), true).unwrap();
        assert_eq!(book.best_bid(), Some(100));
        assert_eq!(book.level_stats(Side::Bid, 5).total_volume, 50);
        assert_eq!(book.levels(Side::Bid).count(), 1);
        book.apply(&ev(2, 1, Side::Bid, 100, 0, EventKind::Cancel), true).unwrap();
        assert!(book.is_empty(Side::Bid));
        assert_eq!(book.n_orders(), 0);
    }

    #[test]
    fn partial_execution_keeps_entry_time() {
        let mut book = BookState::new();
        book.apply(&ev(5, 1, Side::Ask, 101, 100, EventKind::Add), true).unwrap();
        book.apply(&ev(9, 1, Side::Ask, 101, 30, EventKind::Execute), true).unwrap();
        let o = book.order(1).unwrap();
        assert_eq!(o.remaining_size, 70);
        assert_eq!(o.entry_time, 5);
        assert!(!o.modified);
    }

    #[test]
    fn modify_resets_age_and_flags() {
        let mut book = BookState::new();
        book.apply(&ev(5, 1, Side::Ask, 101, 100, EventKind::Add), true).unwrap();
        book.apply(&ev(6, 2, Side::Ask, 101, 100, EventKind::Add), true).unwrap();
        book.apply(&ev(9, 1, Side::Ask, 101, 80, EventKind::Modify), true).unwrap();
        let o = book.order(1).unwrap();
        assert_eq!((o.entry_time, o.modified, o.last_modify_time), (9, true, Some(9)));
        // lost queue priority
        let (_, vol, ids) = book.levels(Side::Ask).next().unwrap();
        assert_eq!(ids, &[2, 1]);
        assert_eq!(vol, 180);
        assert_eq!(book.level_stats(Side::Ask, 5).modified_count, 1);
    }

    #[test]
    fn strict_mode_errors() {
        let mut book = BookState::new();
        assert!(matches!(
            book.apply(&ev(1, 9, Side::Bid, 100, 1, EventKind::Cancel), true),
            Err(Error::UnknownOrder(9))
        ));
        assert!(matches!(
            book.apply(&ev(1, 9, Side::Bid, 100, 1, EventKind::Cancel), false).unwrap(),
            Applied::Skipped(_)
        ));
        book.apply(&ev(1, 1, Side::Bid, 100, 10, EventKind::Add), true).unwrap();
        assert!(matches!(
            book.apply(&ev(2, 1, Side::Bid, 100, 11, EventKind::Execute), true),
            Err(Error::Oversize { .. })
        ));
        assert!(matches!(
            book.apply(&ev(2, 1, Side::Bid, 100, 11, EventKind::Execute), false).unwrap(),
            Applied::Adjusted(_)
        ));
        assert!(book.is_empty(Side::Bid));
        book.apply(&ev(3, 2, Side::Bid, 100, 10, EventKind::Add), true).unwrap();
        assert!(matches!(
            book.apply(&ev(3, 3, Side::Ask, 100, 10, EventKind::Add), true),
            Err(Error::CrossedBook { .. })
        ));
    }

    #[test]
    fn level_stats_example() {
        let mut book = BookState::new();
        book.apply(&ev(1000, 1, Side::Bid, 100, 100, EventKind::Add), true).unwrap();
        book.apply(&ev(2000, 2, Side::Bid, 100, 100, EventKind::Add), true).unwrap();
        book.apply(&ev(3000, 3, Side::Bid, 100, 100, EventKind::Add), true).unwrap();
        // advance time with an unrelated event on the other side
        book.apply(&ev(4000, 4, Side::Ask, 200, 1, EventKind::Add), true).unwrap();
        let s = book.level_stats(Side::Bid, 5);
        assert_eq!((s.order_count, s.total_volume, s.modified_count), (3, 300, 0));
        assert_eq!(s.mean_age_ms, 2000.0);
        let empty = BookState::new().level_stats(Side::Ask, 5);
        assert_eq!((empty.order_count, empty.total_volume, empty.modified_count, empty.mean_age_ms), (0, 0, 0, 0.0));
    }

    #[test]
    fn round_trip_cost_single_level() {
        let mut book = BookState::new();
        book.apply(&ev(1, 1, Side::Bid, 10001, 1_000_000, EventKind::Add), true).unwrap();
        book.apply(&ev(1, 2, Side::Ask, 10005, 1_000_000, EventKind::Add), true).unwrap();
        let tick = 0.01;
        let xlm = book.round_trip_cost_bps(25_000.0, tick).unwrap();
        let mid = (10001.0 + 10005.0) / 2.0;
        assert!((xlm - 1e4 * 4.0 / mid).abs() < 1e-9);
    }

    #[test]
    fn round_trip_cost_two_levels_by_hand() {
        let mut book = BookState::new();
        // tick 1.0 so prices are currency units
        book.apply(&ev(1, 1, Side::Bid, 99, 10, EventKind::Add), true).unwrap();
        book.apply(&ev(1, 2, Side::Bid, 98, 100, EventKind::Add), true).unwrap();
        book.apply(&ev(1, 3, Side::Ask, 101, 10, EventKind::Add), true).unwrap();
        book.apply(&ev(1, 4, Side::Ask, 102, 100, EventKind::Add), true).unwrap();
        // buy 2030: 10 @ 101 = 1010, then 1020/102 = 10 sh; 20 shares → vwap 101.5
        // sell 2030: 10 @ 99 = 990, then 1040/98 sh
        let sell_shares = 10.0 + 1040.0 / 98.0;
        let expected = 1e4 * (2030.0 / 20.0 - 2030.0 / sell_shares) / 100.0;
        let got = book.round_trip_cost_bps(2030.0, 1.0).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert!(book.round_trip_cost_bps(1e6, 1.0).is_none());
    }

    #[test]
    fn write_then_parse_round_trip() {
        let events = vec![
            ev(1, 1, Side::Bid, 10, 3, EventKind::Add),
            ev(1, 2, Side::Ask, 12, 4, EventKind::Add),
            ev(2, 2, Side::Ask, 13, 4, EventKind::Modify),
            ev(3, 1, Side::Bid, 10, 1, EventKind::Execute),
            ev(3, 2, Side::Ask, 13, 0, EventKind::Cancel),
        ];
        let mut buf = Vec::new();
        write_events(&events, &mut buf).unwrap();
        assert_eq!(parse_events(buf.as_slice()).unwrap(), events);
    }
}
