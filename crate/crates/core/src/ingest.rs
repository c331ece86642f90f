//! CSV ingestion for day-ahead prices, real-time interval prices and weather.
//!
//! Expected headers:
//!
//! | file | header |
//! |---|---|
//! | day-ahead | `date,hour,node_id,price` |
//! | real-time | `date,hour,interval,node_id,price` |
//! | weather | `date,hour,node_id,variable,value` |
//!
//! Dates are ISO-8601 and taken verbatim; the real-time `interval` is
//! 1-based within the hour. A date that cannot produce a complete
//! observation at every node is dropped and recorded in an
//! [`ExclusionLog`] with exactly one reason.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{Observation, TrainingSet};
use crate::market_model::{
    log_price_diff, MeteoMatrix, NodeSet, PriceDiffVector, DEFAULT_PRICE_FLOOR,
};

pub const DA_HEADER: [&str; 4] = ["date", "hour", "node_id", "price"];
pub const RT_HEADER: [&str; 5] = ["date", "hour", "interval", "node_id", "price"];
pub const WEATHER_HEADER: [&str; 5] = ["date", "hour", "node_id", "variable", "value"];

const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceKind {
    DayAhead,
    RealTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawPriceRecord {
    pub date: NaiveDate,
    pub hour: u8,
    /// Present for real-time rows only.
    pub interval: Option<u32>,
    pub node_id: String,
    pub price: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeatherRecord {
    pub date: NaiveDate,
    pub hour: u8,
    pub node_id: String,
    pub variable: String,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    MissingNode,
    NonpositivePrice,
    IncompleteIntervals,
    MissingWeather,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::MissingNode => "missing_node",
            ExclusionReason::NonpositivePrice => "nonpositive_price",
            ExclusionReason::IncompleteIntervals => "incomplete_intervals",
            ExclusionReason::MissingWeather => "missing_weather",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            ExclusionReason::MissingNode,
            ExclusionReason::NonpositivePrice,
            ExclusionReason::IncompleteIntervals,
            ExclusionReason::MissingWeather,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub date: NaiveDate,
    pub reason: ExclusionReason,
}

/// Dropped dates, sorted by date, at most one entry per date.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionLog {
    entries: Vec<Exclusion>,
}

impl ExclusionLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `date` unless it is already logged. Returns whether it was added.
    pub fn record(&mut self, date: NaiveDate, reason: ExclusionReason) -> bool {
        match self.entries.binary_search_by_key(&date, |e| e.date) {
            Ok(_) => false,
            Err(pos) => {
                self.entries.insert(pos, Exclusion { date, reason });
                true
            }
        }
    }

    pub fn entries(&self) -> &[Exclusion] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.reason_for(date).is_some()
    }

    pub fn reason_for(&self, date: NaiveDate) -> Option<ExclusionReason> {
        self.entries
            .binary_search_by_key(&date, |e| e.date)
            .ok()
            .map(|i| self.entries[i].reason)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::InvalidInput(format!("writing exclusions: {e}"));
        w.write_record(["date", "reason"]).map_err(io)?;
        for e in &self.entries {
            w.write_record([e.date.format(DATE_FORMAT).to_string(), e.reason.to_string()])
                .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidInput(format!("writing exclusions: {e}")))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R, source: &str) -> Result<Self> {
        let mut reader = Table::open(input, source, &["date", "reason"])?;
        let mut log = ExclusionLog::new();
        while let Some(row) = reader.next_row()? {
            let date = row.date(0)?;
            let reason = ExclusionReason::parse(row.field(1))
                .ok_or_else(|| row.error(1, format!("unknown reason {:?}", row.field(1))))?;
            if !log.record(date, reason) {
                return Err(row.error(0, format!("date {date} listed twice")));
            }
        }
        Ok(log)
    }
}

/// Row-addressed CSV reader with an exact header check.
struct Table<R: Read> {
    source: String,
    header: Vec<String>,
    records: csv::StringRecordsIntoIter<R>,
}

struct Row<'a> {
    source: &'a str,
    header: &'a [String],
    line: u64,
    record: csv::StringRecord,
}

impl<R: Read> Table<R> {
    fn open(input: R, source: &str, expected: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| parse_error(source, 1, "header", e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.len() != expected.len() || header.iter().zip(expected).any(|(a, b)| a != b) {
            return Err(parse_error(
                source,
                1,
                "header",
                format!(
                    "expected `{}`, found `{}`",
                    expected.join(","),
                    header.join(",")
                ),
            ));
        }
        Ok(Table {
            source: source.to_owned(),
            header,
            records: reader.into_records(),
        })
    }

    /// Opens a table whose header starts with `prefix` and may carry extra columns.
    fn open_with_prefix(input: R, source: &str, prefix: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(input);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| parse_error(source, 1, "header", e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        if header.len() < prefix.len() || header.iter().zip(prefix).any(|(a, b)| a != b) {
            return Err(parse_error(
                source,
                1,
                "header",
                format!(
                    "expected `{},...`, found `{}`",
                    prefix.join(","),
                    header.join(",")
                ),
            ));
        }
        Ok(Table {
            source: source.to_owned(),
            header,
            records: reader.into_records(),
        })
    }

    fn next_row(&mut self) -> Result<Option<Row<'_>>> {
        match self.records.next() {
            None => Ok(None),
            Some(Err(e)) => {
                let line = e.position().map_or(0, |p| p.line());
                Err(parse_error(&self.source, line, "row", e.to_string()))
            }
            Some(Ok(record)) => {
                let line = record.position().map_or(0, |p| p.line());
                Ok(Some(Row {
                    source: &self.source,
                    header: &self.header,
                    line,
                    record,
                }))
            }
        }
    }
}

impl Row<'_> {
    fn field(&self, col: usize) -> &str {
        self.record.get(col).unwrap_or("")
    }

    fn error(&self, col: usize, message: String) -> Error {
        parse_error(self.source, self.line, &self.header[col], message)
    }

    fn date(&self, col: usize) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(self.field(col), DATE_FORMAT)
            .map_err(|e| self.error(col, format!("invalid date {:?}: {e}", self.field(col))))
    }

    fn hour(&self, col: usize) -> Result<u8> {
        match self.field(col).parse::<u8>() {
            Ok(h) if h <= 23 => Ok(h),
            _ => Err(self.error(
                col,
                format!(
                    "hour must be an integer in 0..=23, got {:?}",
                    self.field(col)
                ),
            )),
        }
    }

    fn number(&self, col: usize) -> Result<f64> {
        match self.field(col).parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(
                col,
                format!("expected a finite number, got {:?}", self.field(col)),
            )),
        }
    }

    fn node(&self, col: usize, nodes: &NodeSet) -> Result<usize> {
        let id = self.field(col);
        nodes.index_of(id).ok_or_else(|| Error::UnknownNode {
            path: self.source.to_owned(),
            line: self.line,
            node: id.to_owned(),
        })
    }
}

fn parse_error(source: &str, line: u64, column: &str, message: String) -> Error {
    Error::Parse {
        path: source.to_owned(),
        line,
        column: column.to_owned(),
        message,
    }
}

fn open_file(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn parse_price_csv(
    path: &Path,
    kind: PriceKind,
    nodes: &NodeSet,
) -> Result<Vec<RawPriceRecord>> {
    parse_price_reader(open_file(path)?, &path.display().to_string(), kind, nodes)
}

pub fn parse_price_reader<R: Read>(
    input: R,
    source: &str,
    kind: PriceKind,
    nodes: &NodeSet,
) -> Result<Vec<RawPriceRecord>> {
    let header: &[&str] = match kind {
        PriceKind::DayAhead => &DA_HEADER,
        PriceKind::RealTime => &RT_HEADER,
    };
    let mut table = Table::open(input, source, header)?;
    let mut out = Vec::new();
    while let Some(row) = table.next_row()? {
        let date = row.date(0)?;
        let hour = row.hour(1)?;
        let (interval, node_col) = match kind {
            PriceKind::DayAhead => (None, 2),
            PriceKind::RealTime => {
                let interval = match row.field(2).parse::<u32>() {
                    Ok(i) if i >= 1 => i,
                    _ => {
                        return Err(row.error(
                            2,
                            format!(
                                "interval must be a positive integer, got {:?}",
                                row.field(2)
                            ),
                        ))
                    }
                };
                (Some(interval), 3)
            }
        };
        let node = row.node(node_col, nodes)?;
        let price = row.number(node_col + 1)?;
        out.push(RawPriceRecord {
            date,
            hour,
            interval,
            node_id: nodes.ids()[node].clone(),
            price,
        });
    }
    Ok(out)
}

pub fn parse_weather_csv(path: &Path, nodes: &NodeSet) -> Result<Vec<WeatherRecord>> {
    parse_weather_reader(open_file(path)?, &path.display().to_string(), nodes)
}

pub fn parse_weather_reader<R: Read>(
    input: R,
    source: &str,
    nodes: &NodeSet,
) -> Result<Vec<WeatherRecord>> {
    let mut table = Table::open(input, source, &WEATHER_HEADER)?;
    let mut out = Vec::new();
    while let Some(row) = table.next_row()? {
        let date = row.date(0)?;
        let hour = row.hour(1)?;
        let node = row.node(2, nodes)?;
        let variable = row.field(3).to_owned();
        if variable.is_empty() {
            return Err(row.error(3, "empty variable name".into()));
        }
        let value = row.number(4)?;
        out.push(WeatherRecord {
            date,
            hour,
            node_id: nodes.ids()[node].clone(),
            variable,
            value,
        });
    }
    Ok(out)
}

/// Real-time prices averaged over the intervals of one delivery hour.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HourlyRt {
    /// Node id to hourly average, only for (date, node) pairs with the full interval count.
    pub prices: BTreeMap<NaiveDate, BTreeMap<String, f64>>,
    /// Dates where some node had a wrong number of intervals.
    pub incomplete: BTreeSet<NaiveDate>,
    /// Every date seen in the input, at any hour.
    pub dates: BTreeSet<NaiveDate>,
}

/// Averages the intervals of `hour` per (date, node).
///
/// A (date, node) pair whose distinct 1-based interval indices are not
/// exactly `1..=intervals_expected` marks the whole date incomplete.
/// Prices are summed in interval order, so the result does not depend on
/// row order.
pub fn hourly_average_rt(
    records: &[RawPriceRecord],
    hour: u8,
    intervals_expected: u32,
) -> HourlyRt {
    let mut groups: BTreeMap<(NaiveDate, &str), Vec<(u32, f64)>> = BTreeMap::new();
    let mut dates = BTreeSet::new();
    for r in records {
        dates.insert(r.date);
        if r.hour == hour {
            groups
                .entry((r.date, r.node_id.as_str()))
                .or_default()
                .push((r.interval.unwrap_or(1), r.price));
        }
    }
    let mut prices: BTreeMap<NaiveDate, BTreeMap<String, f64>> = BTreeMap::new();
    let mut incomplete = BTreeSet::new();
    for ((date, node), mut values) in groups {
        values.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        let complete = values.len() == intervals_expected as usize
            && values
                .iter()
                .enumerate()
                .all(|(i, (interval, _))| *interval == i as u32 + 1);
        if complete {
            let sum: f64 = values.iter().map(|(_, p)| p).sum();
            prices
                .entry(date)
                .or_default()
                .insert(node.to_owned(), sum / intervals_expected as f64);
        } else {
            incomplete.insert(date);
        }
    }
    for date in &incomplete {
        prices.remove(date);
    }
    HourlyRt {
        prices,
        incomplete,
        dates,
    }
}

/// Settings shared by every ingestion step.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestOptions {
    pub nodes: NodeSet,
    /// Weather variables in model column order; other variables are ignored.
    pub variables: Vec<String>,
    pub hour: u8,
    /// 12 for 5-minute markets, 4 for 15-minute markets.
    pub intervals_expected: u32,
    pub price_floor: f64,
}

impl IngestOptions {
    pub fn new(nodes: NodeSet, variables: Vec<String>, hour: u8) -> Self {
        IngestOptions {
            nodes,
            variables,
            hour,
            intervals_expected: 12,
            price_floor: DEFAULT_PRICE_FLOOR,
        }
    }
}

/// Aligned training data plus the names that index its axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub nodes: NodeSet,
    pub variables: Vec<String>,
    pub hour: u8,
    pub training: TrainingSet,
}

impl Dataset {
    pub fn observations(&self) -> &[Observation] {
        self.training.observations()
    }
}

/// Joins day-ahead prices, hourly real-time averages and weather into a
/// training set.
///
/// Every date seen in any input lands in exactly one of the outputs. The
/// first applicable reason wins: `incomplete_intervals`, `missing_node`,
/// `missing_weather`, `nonpositive_price`.
pub fn build_training_set(
    da: &[RawPriceRecord],
    rt: &HourlyRt,
    weather: &[WeatherRecord],
    opts: &IngestOptions,
) -> Result<(Dataset, ExclusionLog)> {
    let nodes = &opts.nodes;
    let n = nodes.len();
    let k = opts.variables.len();

    let mut all_dates: BTreeSet<NaiveDate> = rt.dates.clone();
    let mut da_prices: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for r in da {
        all_dates.insert(r.date);
        if r.hour != opts.hour {
            continue;
        }
        let node = node_index(nodes, &r.node_id)?;
        let slot = &mut da_prices.entry(r.date).or_insert_with(|| vec![None; n])[node];
        if slot.replace(r.price).is_some() {
            return Err(Error::Duplicate {
                what: "day-ahead price",
                date: r.date,
                node: r.node_id.clone(),
            });
        }
    }

    let mut meteo: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for r in weather {
        all_dates.insert(r.date);
        if r.hour != opts.hour {
            continue;
        }
        let Some(var) = opts.variables.iter().position(|v| *v == r.variable) else {
            continue;
        };
        let node = node_index(nodes, &r.node_id)?;
        let slot = &mut meteo.entry(r.date).or_insert_with(|| vec![None; n * k])[node * k + var];
        if slot.replace(r.value).is_some() {
            return Err(Error::Duplicate {
                what: "weather value",
                date: r.date,
                node: r.node_id.clone(),
            });
        }
    }

    let mut log = ExclusionLog::new();
    let mut observations = Vec::new();
    for date in all_dates {
        if rt.incomplete.contains(&date) {
            log.record(date, ExclusionReason::IncompleteIntervals);
            continue;
        }
        let da_row = da_prices.get(&date);
        let rt_row = rt.prices.get(&date);
        let mut pairs = Vec::with_capacity(n);
        for (i, id) in nodes.ids().iter().enumerate() {
            match (
                da_row.and_then(|row| row[i]),
                rt_row.and_then(|row| row.get(id).copied()),
            ) {
                (Some(d), Some(r)) => pairs.push((d, r)),
                _ => break,
            }
        }
        if pairs.len() < n {
            log.record(date, ExclusionReason::MissingNode);
            continue;
        }
        let Some(theta) = meteo
            .get(&date)
            .and_then(|cells| cells.iter().copied().collect::<Option<Vec<f64>>>())
        else {
            log.record(date, ExclusionReason::MissingWeather);
            continue;
        };
        let diffs: Result<Vec<f64>> = pairs
            .iter()
            .map(|(d, r)| log_price_diff(*d, *r, opts.price_floor))
            .collect();
        let Ok(diffs) = diffs else {
            log.record(date, ExclusionReason::NonpositivePrice);
            continue;
        };
        let weather = MeteoMatrix::new(date, opts.hour, DMatrix::from_row_slice(n, k, &theta))?;
        let prices = PriceDiffVector::new(date, opts.hour, DVector::from_vec(diffs))?;
        observations.push(Observation::new(weather, prices)?);
    }

    let training = TrainingSet::new(observations)?;
    Ok((
        Dataset {
            nodes: nodes.clone(),
            variables: opts.variables.clone(),
            hour: opts.hour,
            training,
        },
        log,
    ))
}

fn node_index(nodes: &NodeSet, id: &str) -> Result<usize> {
    nodes
        .index_of(id)
        .ok_or_else(|| Error::InvalidInput(format!("record for unknown node {id:?}")))
}

/// Locations of the three input files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub da: PathBuf,
    pub rt: PathBuf,
    pub weather: PathBuf,
}

/// Parses the three files and builds the training set.
pub fn ingest_files(paths: &DataPaths, opts: &IngestOptions) -> Result<(Dataset, ExclusionLog)> {
    let da = parse_price_csv(&paths.da, PriceKind::DayAhead, &opts.nodes)?;
    let rt = parse_price_csv(&paths.rt, PriceKind::RealTime, &opts.nodes)?;
    let weather = parse_weather_csv(&paths.weather, &opts.nodes)?;
    let hourly = hourly_average_rt(&rt, opts.hour, opts.intervals_expected);
    build_training_set(&da, &hourly, &weather, opts)
}

/// Writes `date,hour,node_id,price_diff,<variables...>`, one row per (date, node).
pub fn write_training_set<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::InvalidInput(format!("writing training set: {e}"));
    let mut header = vec![
        "date".to_owned(),
        "hour".into(),
        "node_id".into(),
        "price_diff".into(),
    ];
    header.extend(data.variables.iter().cloned());
    w.write_record(&header).map_err(fail)?;
    for o in data.observations() {
        let date = o.day().format(DATE_FORMAT).to_string();
        for (i, id) in data.nodes.ids().iter().enumerate() {
            let mut row = vec![
                date.clone(),
                o.prices.hour().to_string(),
                id.clone(),
                o.prices.values()[i].to_string(),
            ];
            row.extend(o.weather.values().row(i).iter().map(f64::to_string));
            w.write_record(&row).map_err(fail)?;
        }
    }
    w.flush()
        .map_err(|e| Error::InvalidInput(format!("writing training set: {e}")))?;
    Ok(())
}

/// One node's row: id, price difference, weather values.
type NodeRow = (String, f64, Vec<f64>);

/// Reads a file produced by [`write_training_set`]. Node order is taken
/// from the first date.
pub fn read_training_set<R: Read>(input: R, source: &str) -> Result<Dataset> {
    let mut table =
        Table::open_with_prefix(input, source, &["date", "hour", "node_id", "price_diff"])?;
    let variables: Vec<String> = table.header[4..].to_vec();
    let k = variables.len();
    let mut days: Vec<(NaiveDate, u8, Vec<NodeRow>)> = Vec::new();
    while let Some(row) = table.next_row()? {
        if row.record.len() != 4 + k {
            return Err(row.error(
                0,
                format!("expected {} fields, got {}", 4 + k, row.record.len()),
            ));
        }
        let date = row.date(0)?;
        let hour = row.hour(1)?;
        let node = row.field(2).to_owned();
        let diff = row.number(3)?;
        let theta = (0..k)
            .map(|j| row.number(4 + j))
            .collect::<Result<Vec<_>>>()?;
        match days.last_mut() {
            Some((d, h, rows)) if *d == date => {
                if *h != hour {
                    return Err(
                        row.error(1, format!("hour {hour} differs from {h} earlier on {date}"))
                    );
                }
                rows.push((node, diff, theta));
            }
            _ => days.push((date, hour, vec![(node, diff, theta)])),
        }
    }
    let first = days.first().ok_or(Error::EmptyDataset)?;
    let nodes = NodeSet::new(first.2.iter().map(|(id, _, _)| id.clone()))?;
    let hour = first.1;
    let n = nodes.len();
    let mut observations = Vec::with_capacity(days.len());
    for (date, h, rows) in days {
        let ids: Vec<&str> = rows.iter().map(|(id, _, _)| id.as_str()).collect();
        if ids != nodes.ids().iter().map(String::as_str).collect::<Vec<_>>() || h != hour {
            return Err(Error::InvalidInput(format!(
                "{source}: rows for {date} do not list the nodes in the same order as the first date"
            )));
        }
        let theta: Vec<f64> = rows
            .iter()
            .flat_map(|(_, _, t)| t.iter().copied())
            .collect();
        let diffs: Vec<f64> = rows.iter().map(|(_, d, _)| *d).collect();
        observations.push(Observation::new(
            MeteoMatrix::new(date, h, DMatrix::from_row_slice(n, k, &theta))?,
            PriceDiffVector::new(date, h, DVector::from_vec(diffs))?,
        )?);
    }
    Ok(Dataset {
        nodes,
        variables,
        hour,
        training: TrainingSet::new(observations)?,
    })
}

pub fn load_training_set(path: &Path) -> Result<Dataset> {
    read_training_set(open_file(path)?, &path.display().to_string())
}
