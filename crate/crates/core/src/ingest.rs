//! Parsing of appliance-consumption and day-ahead price files.
//!
//! Consumption files use the REFIT layout
//! `Time,Unix,Aggregate,Appliance1,…,ApplianceN` with instantaneous power in
//! watts. Readings are turned into hourly Wh by integrating the
//! piecewise-constant power signal: each reading holds until the next one, but
//! never for longer than [`MAX_HOLD_SECS`]. Hours without any covered second are
//! reported as missing.
//!
//! The `Time` column is read as naive local time. Readings that step backwards
//! (the repeated hour after a DST fall-back) are dropped; the hour skipped on a
//! spring-forward shows up as a short gap and is handled by [`fill_gaps`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{
    CoreError, DeviceRole, DeviceSpec, HourStamp, HourlyLoadSeries, PriceCurve, PriceGap,
};

/// Longest interval a single power reading is held for.
pub const MAX_HOLD_SECS: i64 = 3600;
pub const DEFAULT_MAX_GAP_HOURS: usize = 3;
/// Longest run of missing price hours that is filled by interpolation.
pub const MAX_PRICE_INTERPOLATION_HOURS: usize = 3;

const TIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}: file contains no usable data rows")]
    EmptyFile(PathBuf),
    #[error("{path}: channel mismatch: {detail}")]
    ChannelMismatch { path: PathBuf, detail: String },
    #[error("{path}:{line}: timestamp {stamp} goes backwards")]
    NonMonotonicTimestamps {
        path: PathBuf,
        line: u64,
        stamp: String,
    },
    #[error("{path}:{line}: price is NaN")]
    NanPrice { path: PathBuf, line: u64 },
    #[error("{path}:{line}: cannot parse {field} {value:?}")]
    Malformed {
        path: PathBuf,
        line: u64,
        field: &'static str,
        value: String,
    },
    #[error("{path}: expected header `{expected}`")]
    BadHeader { path: PathBuf, expected: String },
    #[error("household config {path}: {detail}")]
    Config { path: PathBuf, detail: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Unit of the price column in the source file. Prices are normalized to
/// price-units per MWh on ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceUnit {
    #[default]
    PerMwh,
    PerKwh,
    PerWh,
}

impl PriceUnit {
    pub fn to_per_mwh(self) -> f64 {
        match self {
            PriceUnit::PerMwh => 1.0,
            PriceUnit::PerKwh => 1e3,
            PriceUnit::PerWh => 1e6,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PriceUnit::PerMwh => "per_mwh",
            PriceUnit::PerKwh => "per_kwh",
            PriceUnit::PerWh => "per_wh",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    /// Appliance column number; 0 selects the `Aggregate` column.
    pub channel: usize,
    pub name: String,
    pub role: DeviceRole,
    pub on_threshold_watts: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_k: Option<usize>,
}

/// Household description read from JSON.
///
/// ```json
/// {
///   "household": "house3",
///   "consumption_file": "CLEAN_House3.csv",
///   "price_file": "prices_gb.csv",
///   "price_unit": "per_mwh",
///   "max_gap_hours": 3,
///   "devices": [
///     {"channel": 4, "name": "washing_machine", "role": "shiftable",
///      "on_threshold_watts": 100.0, "duration_k": 2},
///     {"channel": 7, "name": "television", "role": "availability",
///      "on_threshold_watts": 20.0}
///   ]
/// }
/// ```
///
/// Relative file paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdConfig {
    pub household: String,
    pub consumption_file: PathBuf,
    pub price_file: PathBuf,
    #[serde(default)]
    pub price_unit: PriceUnit,
    #[serde(default = "default_max_gap")]
    pub max_gap_hours: usize,
    pub devices: Vec<DeviceConfig>,
}

fn default_max_gap() -> usize {
    DEFAULT_MAX_GAP_HOURS
}

impl HouseholdConfig {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: HouseholdConfig =
            serde_json::from_str(&text).map_err(|e| IngestError::Config {
                path: path.to_path_buf(),
                detail: e.to_string(),
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if config.consumption_file.is_relative() {
            config.consumption_file = base.join(&config.consumption_file);
        }
        if config.price_file.is_relative() {
            config.price_file = base.join(&config.price_file);
        }
        config.validate().map_err(|detail| IngestError::Config {
            path: path.to_path_buf(),
            detail,
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.devices.iter().any(|d| d.role.signals_availability()) {
            return Err("needs at least one availability device".into());
        }
        if !self.devices.iter().any(|d| d.role.is_shiftable()) {
            return Err("needs at least one shiftable device".into());
        }
        let mut names: Vec<&str> = self.devices.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err("device names must be unique".into());
        }
        for spec in self.device_specs() {
            spec.validate().map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn device_specs(&self) -> Vec<DeviceSpec> {
        self.devices
            .iter()
            .map(|d| DeviceSpec {
                id: d.name.clone(),
                household: self.household.clone(),
                role: d.role,
                on_threshold_watts: d.on_threshold_watts,
                duration_k: d.duration_k,
            })
            .collect()
    }

    pub fn max_channel(&self) -> usize {
        self.devices.iter().map(|d| d.channel).max().unwrap_or(0)
    }
}

/// Hourly series for each configured device plus row bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionData {
    pub series: Vec<HourlyLoadSeries>,
    pub rows_read: usize,
    pub malformed_rows: usize,
    /// Readings dropped because their local time stepped backwards.
    pub backward_rows: usize,
}

fn column_name(channel: usize) -> String {
    if channel == 0 {
        "Aggregate".to_string()
    } else {
        format!("Appliance{channel}")
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_local_time(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TIME_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .ok()
}

fn local_secs(dt: NaiveDateTime) -> i64 {
    dt.and_utc().timestamp()
}

fn stamp_from_secs(secs: i64) -> HourStamp {
    HourStamp::floor(DateTime::from_timestamp(secs, 0).expect("in range").naive_utc())
}

/// Accumulates a piecewise-constant power signal into hourly energy buckets.
struct HourlyIntegrator {
    first_hour: i64,
    energy: Vec<f64>,
    covered: Vec<i64>,
}

impl HourlyIntegrator {
    fn new(first_secs: i64) -> Self {
        Self {
            first_hour: first_secs.div_euclid(3600),
            energy: Vec::new(),
            covered: Vec::new(),
        }
    }

    /// Add `watts` held over `[from, to)` seconds.
    fn add(&mut self, from: i64, to: i64, watts: f64) {
        let mut t = from;
        while t < to {
            let hour = t.div_euclid(3600);
            let boundary = (hour + 1) * 3600;
            let until = boundary.min(to);
            let idx = (hour - self.first_hour) as usize;
            if idx >= self.energy.len() {
                self.energy.resize(idx + 1, 0.0);
                self.covered.resize(idx + 1, 0);
            }
            let dt = until - t;
            self.energy[idx] += watts * (dt as f64 / 3600.0);
            self.covered[idx] += dt;
            t = until;
        }
    }

    fn finish(self) -> Option<(HourStamp, Vec<Option<f64>>)> {
        let first = self.covered.iter().position(|&c| c > 0)?;
        let last = self.covered.iter().rposition(|&c| c > 0)?;
        let values = (first..=last)
            .map(|i| (self.covered[i] > 0).then_some(self.energy[i]))
            .collect();
        let start = stamp_from_secs((self.first_hour + first as i64) * 3600);
        Some((start, values))
    }
}

/// Parse a REFIT-layout consumption file into one hourly series per
/// configured device, in config order.
pub fn parse_consumption(
    path: &Path,
    config: &HouseholdConfig,
) -> Result<ConsumptionData, IngestError> {
    let mut reader = csv_reader(path)?;
    let header = reader
        .headers()
        .map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[0] != "Time" || names[1] != "Unix" || names[2] != "Aggregate" {
        return Err(IngestError::ChannelMismatch {
            path: path.to_path_buf(),
            detail: format!("header must start with Time,Unix,Aggregate, got {:?}", names),
        });
    }
    let mut columns = Vec::with_capacity(config.devices.len());
    for device in &config.devices {
        let wanted = column_name(device.channel);
        let idx = names.iter().position(|n| *n == wanted).ok_or_else(|| {
            IngestError::ChannelMismatch {
                path: path.to_path_buf(),
                detail: format!(
                    "device {} expects column {wanted}, header has {} columns",
                    device.name,
                    names.len()
                ),
            }
        })?;
        columns.push(idx);
    }

    let mut rows_read = 0;
    let mut malformed_rows = 0;
    let mut backward_rows = 0;
    let mut readings: Vec<(i64, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                malformed_rows += 1;
                continue;
            }
        };
        if record.len() != names.len() {
            malformed_rows += 1;
            continue;
        }
        let Some(time) = parse_local_time(&record[0]) else {
            malformed_rows += 1;
            continue;
        };
        let watts: Option<Vec<f64>> = columns
            .iter()
            .map(|&c| {
                record[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
            })
            .collect();
        let Some(watts) = watts else {
            malformed_rows += 1;
            continue;
        };
        let secs = local_secs(time);
        if let Some((last, _)) = readings.last() {
            if secs < *last {
                backward_rows += 1;
                continue;
            }
        }
        readings.push((secs, watts));
    }
    if readings.is_empty() {
        return Err(IngestError::EmptyFile(path.to_path_buf()));
    }

    let mut integrators: Vec<HourlyIntegrator> = config
        .devices
        .iter()
        .map(|_| HourlyIntegrator::new(readings[0].0))
        .collect();
    for pair in readings.windows(2) {
        let (t0, ref watts) = pair[0];
        let t1 = pair[1].0.min(t0 + MAX_HOLD_SECS);
        for (integrator, &w) in integrators.iter_mut().zip(watts) {
            integrator.add(t0, t1, w);
        }
    }

    let mut series = Vec::with_capacity(config.devices.len());
    for (device, integrator) in config.devices.iter().zip(integrators) {
        let (start, values) = integrator
            .finish()
            .ok_or_else(|| IngestError::EmptyFile(path.to_path_buf()))?;
        series.push(HourlyLoadSeries::new(device.name.clone(), start, values)?);
    }
    Ok(ConsumptionData {
        series,
        rows_read,
        malformed_rows,
        backward_rows,
    })
}

/// Write hourly series back out in REFIT layout: one reading per hour at the
/// hour start, with power equal to the hour's energy. Hours where any device
/// is missing are omitted. Parsing the result reproduces the series.
pub fn write_consumption_csv(
    path: &Path,
    series: &[HourlyLoadSeries],
    config: &HouseholdConfig,
) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let by_name: BTreeMap<&str, &HourlyLoadSeries> =
        series.iter().map(|s| (s.device.as_str(), s)).collect();
    let n_channels = config.max_channel().max(1);
    let (Some(start), Some(end)) = (
        series.iter().map(|s| s.start).min(),
        series.iter().map(|s| s.end()).max(),
    ) else {
        return Err(IngestError::EmptyFile(path.to_path_buf()));
    };

    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut header = String::from("Time,Unix,Aggregate");
    for c in 1..=n_channels {
        header.push_str(&format!(",Appliance{c}"));
    }
    writeln!(out, "{header}").map_err(io_err)?;

    let hours = end.hours_since(start);
    let mut row = vec![0.0; n_channels + 1];
    for offset in 0..hours {
        let stamp = start.add_hours(offset);
        row.iter_mut().for_each(|v| *v = 0.0);
        let mut complete = true;
        for device in &config.devices {
            match by_name.get(device.name.as_str()).and_then(|s| s.get(stamp)) {
                Some(wh) => row[device.channel] = wh,
                None => complete = false,
            }
        }
        if !complete {
            continue;
        }
        if !config.devices.iter().any(|d| d.channel == 0) {
            row[0] = row[1..].iter().sum();
        }
        write_reading(&mut out, stamp.to_datetime(), &row).map_err(io_err)?;
    }
    // Terminal reading so the last hour's reading has a successor.
    row.iter_mut().for_each(|v| *v = 0.0);
    write_reading(&mut out, end.to_datetime(), &row).map_err(io_err)?;
    out.flush().map_err(io_err)
}

fn write_reading(out: &mut impl Write, time: NaiveDateTime, row: &[f64]) -> std::io::Result<()> {
    write!(out, "{},{}", time.format(TIME_FORMAT), local_secs(time))?;
    for v in row {
        write!(out, ",{v}")?;
    }
    writeln!(out)
}

/// Zero-fill interior gaps of at most `max_gap_hours` missing hours.
/// Longer gaps stay missing.
pub fn fill_gaps(series: &HourlyLoadSeries, max_gap_hours: usize) -> HourlyLoadSeries {
    let mut values = series.energy_wh.clone();
    let mut i = 0;
    while i < values.len() {
        if values[i].is_some() {
            i += 1;
            continue;
        }
        let gap_start = i;
        while i < values.len() && values[i].is_none() {
            i += 1;
        }
        let interior = gap_start > 0 && i < values.len();
        if interior && i - gap_start <= max_gap_hours {
            values[gap_start..i].iter_mut().for_each(|v| *v = Some(0.0));
        }
    }
    HourlyLoadSeries {
        device: series.device.clone(),
        start: series.start,
        energy_wh: values,
    }
}

fn parse_price_time(s: &str) -> Option<NaiveDateTime> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Parse a `timestamp,price` CSV into a normalized hourly curve.
///
/// Repeated hours keep their first value. Gaps of up to
/// [`MAX_PRICE_INTERPOLATION_HOURS`] are filled by linear interpolation between
/// the neighbours; longer gaps are recorded and left open.
pub fn parse_prices(path: &Path, unit: PriceUnit) -> Result<PriceCurve, IngestError> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers().map_err(|source| IngestError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names.len() < 2 || names[0] != "timestamp" || names[1] != "price" {
        return Err(IngestError::BadHeader {
            path: path.to_path_buf(),
            expected: "timestamp,price".into(),
        });
    }

    let scale = unit.to_per_mwh();
    let mut raw: Vec<(HourStamp, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|source| IngestError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let malformed = |field, value: &str| IngestError::Malformed {
            path: path.to_path_buf(),
            line,
            field,
            value: value.to_string(),
        };
        let ts = record.get(0).unwrap_or("");
        let time = parse_price_time(ts)
            .filter(|t| t.minute() == 0 && t.second() == 0)
            .ok_or_else(|| malformed("timestamp", ts))?;
        let price_text = record.get(1).unwrap_or("");
        let price: f64 = price_text
            .parse()
            .map_err(|_| malformed("price", price_text))?;
        if price.is_nan() {
            return Err(IngestError::NanPrice {
                path: path.to_path_buf(),
                line,
            });
        }
        let stamp = HourStamp::floor(time);
        if let Some((last, _)) = raw.last() {
            if stamp == *last {
                continue;
            }
            if stamp < *last {
                return Err(IngestError::NonMonotonicTimestamps {
                    path: path.to_path_buf(),
                    line,
                    stamp: ts.to_string(),
                });
            }
        }
        raw.push((stamp, price * scale));
    }
    if raw.is_empty() {
        return Err(IngestError::EmptyFile(path.to_path_buf()));
    }

    let mut samples = Vec::with_capacity(raw.len());
    let mut interpolated = Vec::new();
    let mut unfilled_gaps = Vec::new();
    for (i, &(stamp, price)) in raw.iter().enumerate() {
        if i > 0 {
            let (prev, prev_price) = raw[i - 1];
            let missing = (stamp.hours_since(prev) - 1) as usize;
            if missing > 0 && missing <= MAX_PRICE_INTERPOLATION_HOURS {
                for j in 1..=missing {
                    let frac = j as f64 / (missing + 1) as f64;
                    let filled = prev.add_hours(j as i64);
                    samples.push((filled, prev_price + (price - prev_price) * frac));
                    interpolated.push(filled);
                }
            } else if missing > 0 {
                unfilled_gaps.push(PriceGap {
                    start: prev.succ(),
                    hours: missing,
                });
            }
        }
        samples.push((stamp, price));
    }
    let mut curve = PriceCurve::new(samples, unit.label())?;
    curve.interpolated = interpolated;
    curve.unfilled_gaps = unfilled_gaps;
    Ok(curve)
}

/// Write a price curve as `timestamp,price` in the curve's normalized unit.
pub fn write_price_csv(path: &Path, curve: &PriceCurve) -> Result<(), IngestError> {
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(out, "timestamp,price").map_err(io_err)?;
    for (stamp, price) in curve.samples() {
        writeln!(out, "{},{}", stamp.to_datetime().format("%Y-%m-%dT%H:%M:%S"), price)
            .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn config(devices: Vec<(usize, &str, DeviceRole)>) -> HouseholdConfig {
        HouseholdConfig {
            household: "h".into(),
            consumption_file: "c.csv".into(),
            price_file: "p.csv".into(),
            price_unit: PriceUnit::PerMwh,
            max_gap_hours: 3,
            devices: devices
                .into_iter()
                .map(|(channel, name, role)| DeviceConfig {
                    channel,
                    name: name.into(),
                    role,
                    on_threshold_watts: 10.0,
                    duration_k: None,
                })
                .collect(),
        }
    }

    fn two_devices() -> HouseholdConfig {
        config(vec![
            (1, "wm", DeviceRole::Shiftable),
            (2, "tv", DeviceRole::Availability),
        ])
    }

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let path = dir.path().join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn stamp(day: u32, hour: u32) -> HourStamp {
        HourStamp::new(NaiveDate::from_ymd_opt(2015, 2, day).unwrap(), hour).unwrap()
    }

    const HEADER: &str = "Time,Unix,Aggregate,Appliance1,Appliance2\n";

    #[test]
    fn constant_power_for_an_hour() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}2015-02-15 10:00:00,0,0,1000,5\n2015-02-15 11:00:00,0,0,0,0\n"
        );
        let path = write_file(&dir, "c.csv", &body);
        let data = parse_consumption(&path, &two_devices()).unwrap();
        assert_eq!(data.series[0].start, stamp(15, 10));
        assert_eq!(data.series[0].energy_wh, vec![Some(1000.0)]);
        assert_eq!(data.series[1].energy_wh, vec![Some(5.0)]);
    }

    #[test]
    fn half_hour_at_double_power() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}2015-02-15 10:00:00,0,0,2000,0\n2015-02-15 10:30:00,0,0,0,0\n2015-02-15 11:00:00,0,0,0,0\n"
        );
        let path = write_file(&dir, "c.csv", &body);
        let data = parse_consumption(&path, &two_devices()).unwrap();
        assert_eq!(data.series[0].energy_wh, vec![Some(1000.0)]);
    }

    #[test]
    fn header_only_is_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "c.csv", HEADER);
        assert!(matches!(
            parse_consumption(&path, &two_devices()),
            Err(IngestError::EmptyFile(_))
        ));
    }

    #[test]
    fn missing_channel_is_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "c.csv", "Time,Unix,Aggregate,Appliance1\n");
        let cfg = config(vec![(5, "wm", DeviceRole::Both)]);
        assert!(matches!(
            parse_consumption(&path, &cfg),
            Err(IngestError::ChannelMismatch { .. })
        ));
        let path = write_file(&dir, "d.csv", "When,Unix,Aggregate,Appliance1\n");
        assert!(matches!(
            parse_consumption(&path, &cfg),
            Err(IngestError::ChannelMismatch { .. })
        ));
    }

    #[test]
    fn malformed_rows_are_counted_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}2015-02-15 10:00:00,0,0,100,0\n2015-02-15 10:20:00,0,0,abc,0\nnot-a-time,0,0,1,1\n2015-02-15 10:40:00,0,0\n2015-02-15 11:00:00,0,0,0,0\n"
        );
        let path = write_file(&dir, "c.csv", &body);
        let data = parse_consumption(&path, &two_devices()).unwrap();
        assert_eq!(data.malformed_rows, 3);
        assert_eq!(data.rows_read, 5);
        assert_eq!(data.series[0].energy_wh, vec![Some(100.0)]);
    }

    #[test]
    fn backward_readings_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HEADER}2015-10-25 01:00:00,0,0,60,0\n2015-10-25 01:59:00,0,0,60,0\n2015-10-25 01:00:00,0,0,999,0\n2015-10-25 02:00:00,0,0,0,0\n"
        );
        let path = write_file(&dir, "c.csv", &body);
        let data = parse_consumption(&path, &two_devices()).unwrap();
        assert_eq!(data.backward_rows, 1);
        assert_eq!(data.series[0].energy_wh, vec![Some(60.0)]);
    }

    #[test]
    fn uncovered_hours_are_missing() {
        let dir = tempfile::tempdir().unwrap();
        // 10:00 holds for one hour at most; 11:xx has no coverage.
        let body = format!(
            "{HEADER}2015-02-15 10:00:00,0,0,50,0\n2015-02-15 12:00:00,0,0,70,0\n2015-02-15 13:00:00,0,0,0,0\n"
        );
        let path = write_file(&dir, "c.csv", &body);
        let data = parse_consumption(&path, &two_devices()).unwrap();
        assert_eq!(data.series[0].energy_wh, vec![Some(50.0), None, Some(70.0)]);
    }

    #[test]
    fn prices_one_day() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("timestamp,price\n");
        for h in 0..24 {
            body.push_str(&format!("2015-02-15T{h:02}:00:00,{}\n", 30 + h));
        }
        let path = write_file(&dir, "p.csv", &body);
        let curve = parse_prices(&path, PriceUnit::PerMwh).unwrap();
        assert_eq!(curve.len(), 24);
        assert_eq!(curve.get(stamp(15, 23)), Some(53.0));
        assert!(curve.interpolated.is_empty());
    }

    #[test]
    fn duplicate_hour_keeps_first() {
        let dir = tempfile::tempdir().unwrap();
        let body = "timestamp,price\n2015-10-25T01:00:00+01:00,40\n2015-10-25T01:00:00+00:00,41\n2015-10-25T02:00:00+00:00,42\n";
        let path = write_file(&dir, "p.csv", body);
        let curve = parse_prices(&path, PriceUnit::PerMwh).unwrap();
        assert_eq!(curve.len(), 2);
        let s = HourStamp::new(NaiveDate::from_ymd_opt(2015, 10, 25).unwrap(), 1).unwrap();
        assert_eq!(curve.get(s), Some(40.0));
    }

    #[test]
    fn skipped_hour_is_interpolated() {
        let dir = tempfile::tempdir().unwrap();
        let body = "timestamp,price\n2015-03-29T01:00:00,40\n2015-03-29T03:00:00,50\n";
        let path = write_file(&dir, "p.csv", body);
        let curve = parse_prices(&path, PriceUnit::PerMwh).unwrap();
        let two = HourStamp::new(NaiveDate::from_ymd_opt(2015, 3, 29).unwrap(), 2).unwrap();
        assert_eq!(curve.get(two), Some(45.0));
        assert_eq!(curve.interpolated, vec![two]);
    }

    #[test]
    fn long_price_gap_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let body = "timestamp,price\n2015-03-29T01:00:00,40\n2015-03-29T09:00:00,50\n";
        let path = write_file(&dir, "p.csv", body);
        let curve = parse_prices(&path, PriceUnit::PerMwh).unwrap();
        assert_eq!(curve.len(), 2);
        assert_eq!(curve.unfilled_gaps.len(), 1);
        assert_eq!(curve.unfilled_gaps[0].hours, 7);
    }

    #[test]
    fn price_errors() {
        let dir = tempfile::tempdir().unwrap();
        let back = "timestamp,price\n2015-03-29T05:00:00,40\n2015-03-29T03:00:00,50\n";
        let path = write_file(&dir, "a.csv", back);
        assert!(matches!(
            parse_prices(&path, PriceUnit::PerMwh),
            Err(IngestError::NonMonotonicTimestamps { line: 3, .. })
        ));
        let nan = "timestamp,price\n2015-03-29T05:00:00,NaN\n";
        let path = write_file(&dir, "b.csv", nan);
        assert!(matches!(
            parse_prices(&path, PriceUnit::PerMwh),
            Err(IngestError::NanPrice { line: 2, .. })
        ));
        let path = write_file(&dir, "c.csv", "timestamp,price\n");
        assert!(matches!(
            parse_prices(&path, PriceUnit::PerMwh),
            Err(IngestError::EmptyFile(_))
        ));
    }

    #[test]
    fn price_unit_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(&dir, "p.csv", "timestamp,price\n2015-03-29 05:00,0.05\n");
        let curve = parse_prices(&path, PriceUnit::PerKwh).unwrap();
        assert!((curve.samples()[0].1 - 50.0).abs() < 1e-12);
        assert_eq!(curve.source_unit, "per_kwh");
    }

    #[test]
    fn gap_filling() {
        let s = HourlyLoadSeries::new(
            "x",
            stamp(1, 0),
            vec![Some(1.0), None, Some(2.0)],
        )
        .unwrap();
        assert_eq!(fill_gaps(&s, 3).energy_wh, vec![Some(1.0), Some(0.0), Some(2.0)]);

        let mut long = vec![Some(1.0)];
        long.extend(std::iter::repeat_n(None, 48));
        long.push(Some(2.0));
        let s = HourlyLoadSeries::new("x", stamp(1, 0), long.clone()).unwrap();
        let filled = fill_gaps(&s, 3);
        assert_eq!(filled.energy_wh, long);
        assert_eq!(filled.dates_with_missing().len(), 3);

        let contiguous = HourlyLoadSeries::new("x", stamp(1, 0), vec![Some(3.0); 5]).unwrap();
        assert_eq!(fill_gaps(&contiguous, 3), contiguous);
    }

    #[test]
    fn config_requires_both_roles() {
        let cfg = config(vec![(1, "wm", DeviceRole::Shiftable)]);
        assert!(cfg.validate().is_err());
        let cfg = config(vec![(1, "wm", DeviceRole::Both)]);
        assert!(cfg.validate().is_ok());
        let cfg = config(vec![(1, "wm", DeviceRole::Both), (2, "wm", DeviceRole::Both)]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_paths_resolve_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = two_devices();
        cfg.consumption_file = "data/c.csv".into();
        let path = write_file(&dir, "house.json", &serde_json::to_string(&cfg).unwrap());
        let loaded = HouseholdConfig::load(&path).unwrap();
        assert_eq!(loaded.consumption_file, dir.path().join("data/c.csv"));
        assert_eq!(loaded.max_gap_hours, 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        // Random irregular readings: hourly totals must equal the direct
        // time-weighted integral.
        #[test]
        fn energy_is_conserved(
            steps in proptest::collection::vec((1i64..2400, 0u32..3000), 2..120),
        ) {
            let dir = tempfile::tempdir().unwrap();
            let mut body = String::from(HEADER);
            let base = NaiveDate::from_ymd_opt(2015, 2, 15).unwrap().and_hms_opt(0, 0, 0).unwrap();
            let mut t = 0i64;
            let mut integral = 0.0;
            for (i, (dt, w)) in steps.iter().enumerate() {
                let time = base + chrono::Duration::seconds(t);
                body.push_str(&format!("{},0,0,{},0\n", time.format(TIME_FORMAT), w));
                if i + 1 < steps.len() {
                    integral += *w as f64 * (*dt).min(MAX_HOLD_SECS) as f64 / 3600.0;
                    t += dt;
                }
            }
            let path = write_file(&dir, "c.csv", &body);
            let data = parse_consumption(&path, &two_devices()).unwrap();
            let total: f64 = data.series[0].energy_wh.iter().flatten().sum();
            prop_assert!((total - integral).abs() <= 1e-6 * integral.max(1.0));
        }

        #[test]
        fn write_then_parse_is_identity(
            values in proptest::collection::vec(proptest::option::weighted(0.9, 0.0f64..5000.0), 1..72),
        ) {
            let mut values = values;
            values[0] = Some(values[0].unwrap_or(1.0));
            let last = values.len() - 1;
            values[last] = Some(values[last].unwrap_or(1.0));
            let cfg = two_devices();
            let a = HourlyLoadSeries::new("wm", stamp(15, 5), values.clone()).unwrap();
            let b_vals = values.iter().map(|v| v.map(|x| x / 3.0)).collect();
            let b = HourlyLoadSeries::new("tv", stamp(15, 5), b_vals).unwrap();

            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.csv");
            write_consumption_csv(&path, &[a.clone(), b.clone()], &cfg).unwrap();
            let first = parse_consumption(&path, &cfg).unwrap();
            prop_assert_eq!(&first.series, &vec![a, b]);

            let again = dir.path().join("d.csv");
            write_consumption_csv(&again, &first.series, &cfg).unwrap();
            let second = parse_consumption(&again, &cfg).unwrap();
            prop_assert_eq!(second.series, first.series);
        }
    }
}
