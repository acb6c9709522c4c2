//! Capacity labels from per-flight throughput records.
//!
//! Operations are binned onto a fixed grid of intervals. An interval whose
//! throughput is judged capacity-saturated yields an observation with
//! capacity equal to its throughput.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type AirportId = String;

/// Minutes per interval on the planning grid.
pub const INTERVAL_MINUTES: u32 = 15;
/// Delay above which a flight counts as delayed, in minutes.
pub const DELAYED_FLIGHT_MINUTES: f64 = 5.0;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("timestamp {minutes} min is outside the {horizon}-interval horizon")]
    TimestampOutOfHorizon { minutes: u32, horizon: usize },
    #[error("no intervals for {airport}/{op_type}")]
    EmptySeries { airport: String, op_type: OpType },
    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("record {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpType {
    Arrival,
    Departure,
}

impl OpType {
    pub const ALL: [OpType; 2] = [OpType::Departure, OpType::Arrival];

    pub fn as_str(self) -> &'static str {
        match self {
            OpType::Arrival => "arrival",
            OpType::Departure => "departure",
        }
    }
}

impl fmt::Display for OpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arrival" | "arr" | "a" => Ok(OpType::Arrival),
            "departure" | "dep" | "d" | "g" => Ok(OpType::Departure),
            other => Err(format!("unknown op_type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationRecord {
    pub airport: AirportId,
    pub op_type: OpType,
    /// Minutes since the start of the horizon.
    pub scheduled_time: u32,
    pub actual_time: u32,
}

impl OperationRecord {
    /// Signed delay in minutes; negative for early operations.
    pub fn delay(&self) -> f64 {
        self.actual_time as f64 - self.scheduled_time as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub airport: AirportId,
    pub op_type: OpType,
    pub interval_index: usize,
    pub throughput: u32,
    pub scheduled_demand: u32,
    /// Mean of the non-negative (clipped) delays of flights completed in the interval.
    pub avg_delay: f64,
    pub delayed_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    /// Throughput at or above the series' 90th percentile.
    C1,
    /// Throughput at most `alpha` times scheduled demand.
    C2,
    /// High average delay with enough delayed flights.
    C3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityObservation {
    pub airport: AirportId,
    pub op_type: OpType,
    pub interval_index: usize,
    pub capacity: u32,
    pub criteria_hit: Vec<Criterion>,
}

impl CapacityObservation {
    pub fn criteria_label(&self) -> String {
        self.criteria_hit
            .iter()
            .map(|c| format!("{c:?}"))
            .collect::<Vec<_>>()
            .join("|")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationParams {
    pub alpha: f64,
    pub delay_threshold: f64,
    pub min_delayed: u32,
}

impl Default for EstimationParams {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            delay_threshold: 15.0,
            min_delayed: 2,
        }
    }
}

#[derive(Default)]
struct Bin {
    throughput: u32,
    demand: u32,
    delay_sum: f64,
    delayed: u32,
}

/// Bins records into per-(airport, op_type) interval statistics. Every series
/// present in `records` gets all `horizon` intervals, including empty ones.
pub fn aggregate_intervals(
    records: &[OperationRecord],
    horizon: usize,
) -> Result<Vec<IntervalStats>, EstimationError> {
    let bin_of = |minutes: u32| -> Result<usize, EstimationError> {
        let b = (minutes / INTERVAL_MINUTES) as usize;
        if b >= horizon {
            Err(EstimationError::TimestampOutOfHorizon { minutes, horizon })
        } else {
            Ok(b)
        }
    };

    let mut series: BTreeMap<(&str, OpType), Vec<Bin>> = BTreeMap::new();
    for r in records {
        let actual = bin_of(r.actual_time)?;
        let scheduled = bin_of(r.scheduled_time)?;
        let bins = series
            .entry((r.airport.as_str(), r.op_type))
            .or_insert_with(|| (0..horizon).map(|_| Bin::default()).collect());
        let delay = r.delay();
        let b = &mut bins[actual];
        b.throughput += 1;
        b.delay_sum += delay.max(0.0);
        if delay > DELAYED_FLIGHT_MINUTES {
            b.delayed += 1;
        }
        bins[scheduled].demand += 1;
    }

    Ok(series
        .into_iter()
        .flat_map(|((airport, op_type), bins)| {
            bins.into_iter()
                .enumerate()
                .map(move |(i, b)| IntervalStats {
                    airport: airport.to_string(),
                    op_type,
                    interval_index: i,
                    throughput: b.throughput,
                    scheduled_demand: b.demand,
                    avg_delay: if b.throughput > 0 {
                        b.delay_sum / b.throughput as f64
                    } else {
                        0.0
                    },
                    delayed_count: b.delayed,
                })
        })
        .collect())
}

/// Nearest-rank percentile of a non-empty slice, `p` in (0, 100].
pub fn nearest_rank_percentile(values: &[u32], p: f64) -> Option<u32> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// 90th-percentile throughput of one series.
pub fn saturation_threshold(
    stats: &[IntervalStats],
    airport: &str,
    op_type: OpType,
) -> Result<u32, EstimationError> {
    let values: Vec<u32> = stats
        .iter()
        .filter(|s| s.airport == airport && s.op_type == op_type)
        .map(|s| s.throughput)
        .collect();
    nearest_rank_percentile(&values, 90.0).ok_or_else(|| EstimationError::EmptySeries {
        airport: airport.to_string(),
        op_type,
    })
}

/// Applies the three saturation criteria and emits one observation for every
/// interval where at least one fires.
pub fn estimate_capacities(
    stats: &[IntervalStats],
    params: &EstimationParams,
) -> Result<Vec<CapacityObservation>, EstimationError> {
    if !(params.alpha > 0.0 && params.alpha <= 1.0) {
        return Err(EstimationError::InvalidAlpha(params.alpha));
    }
    let mut thresholds: BTreeMap<(&str, OpType), u32> = BTreeMap::new();
    for s in stats {
        let key = (s.airport.as_str(), s.op_type);
        if !thresholds.contains_key(&key) {
            thresholds.insert(key, saturation_threshold(stats, key.0, key.1)?);
        }
    }

    let mut out = Vec::new();
    for s in stats {
        let threshold = thresholds[&(s.airport.as_str(), s.op_type)];
        let mut hit = Vec::new();
        // a zero threshold makes the ratio undefined
        if threshold > 0 && s.throughput as f64 / threshold as f64 >= 1.0 {
            hit.push(Criterion::C1);
        }
        if s.scheduled_demand > 0
            && s.throughput as f64 / s.scheduled_demand as f64 <= params.alpha
        {
            hit.push(Criterion::C2);
        }
        if s.avg_delay >= params.delay_threshold && s.delayed_count >= params.min_delayed {
            hit.push(Criterion::C3);
        }
        if !hit.is_empty() {
            out.push(CapacityObservation {
                airport: s.airport.clone(),
                op_type: s.op_type,
                interval_index: s.interval_index,
                capacity: s.throughput,
                criteria_hit: hit,
            });
        }
    }
    Ok(out)
}

/// Fraction of intervals that produced an observation, per series.
pub fn coverage_ratio(
    stats: &[IntervalStats],
    observations: &[CapacityObservation],
) -> BTreeMap<(AirportId, OpType), f64> {
    let mut totals: BTreeMap<(AirportId, OpType), (usize, usize)> = BTreeMap::new();
    for s in stats {
        totals.entry((s.airport.clone(), s.op_type)).or_default().0 += 1;
    }
    for o in observations {
        if let Some(t) = totals.get_mut(&(o.airport.clone(), o.op_type)) {
            t.1 += 1;
        }
    }
    totals
        .into_iter()
        .map(|(k, (n, hit))| (k, hit as f64 / n as f64))
        .collect()
}

/// How timestamps are written in a records CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeFormat {
    /// Integer minutes since the start of the horizon.
    EpochMinutes,
    /// `YYYY-MM-DDTHH:MM[:SS]`, converted relative to `horizon_start`.
    Iso8601 { horizon_start: String },
}

impl Default for TimeFormat {
    fn default() -> Self {
        TimeFormat::EpochMinutes
    }
}

fn parse_iso(s: &str) -> Result<NaiveDateTime, String> {
    let s = s.trim().trim_end_matches('Z');
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .map_err(|e| format!("bad timestamp `{s}`: {e}"))
}

impl TimeFormat {
    fn to_minutes(&self, raw: &str) -> Result<u32, String> {
        match self {
            TimeFormat::EpochMinutes => raw
                .trim()
                .parse::<u32>()
                .map_err(|e| format!("bad minute value `{raw}`: {e}")),
            TimeFormat::Iso8601 { horizon_start } => {
                let start = parse_iso(horizon_start)?;
                let t = parse_iso(raw)?;
                let minutes = (t - start).num_minutes();
                u32::try_from(minutes).map_err(|_| format!("`{raw}` precedes the horizon start"))
            }
        }
    }
}

#[derive(Deserialize)]
struct RecordRow {
    airport: String,
    op_type: String,
    scheduled_time: String,
    actual_time: String,
}

/// Reads `airport,op_type,scheduled_time,actual_time` rows.
pub fn read_records_csv<R: Read>(
    reader: R,
    format: &TimeFormat,
) -> Result<Vec<OperationRecord>, EstimationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RecordRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        let parse = |m: String| EstimationError::Parse { line, message: m };
        out.push(OperationRecord {
            airport: row.airport,
            op_type: row.op_type.parse().map_err(parse)?,
            scheduled_time: format.to_minutes(&row.scheduled_time).map_err(parse)?,
            actual_time: format.to_minutes(&row.actual_time).map_err(parse)?,
        });
    }
    Ok(out)
}

/// Writes records with integer minute timestamps, readable with
/// [`TimeFormat::EpochMinutes`].
pub fn write_records_csv<W: Write>(writer: W, records: &[OperationRecord]) -> Result<(), EstimationError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["airport", "op_type", "scheduled_time", "actual_time"])?;
    for r in records {
        w.write_record([
            r.airport.clone(),
            r.op_type.to_string(),
            r.scheduled_time.to_string(),
            r.actual_time.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes `airport,op_type,interval,capacity,criteria` rows.
pub fn write_observations_csv<W: Write>(
    writer: W,
    observations: &[CapacityObservation],
) -> Result<(), EstimationError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["airport", "op_type", "interval", "capacity", "criteria"])?;
    for o in observations {
        w.write_record([
            o.airport.clone(),
            o.op_type.to_string(),
            o.interval_index.to_string(),
            o.capacity.to_string(),
            o.criteria_label(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
