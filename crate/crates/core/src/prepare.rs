//! Preparation agent: hourly load series to targets, usage runs and features.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{
    weekday_index, ActivityMatrix, CoreError, DailyUsageTargets, DeviceSpec, HourStamp,
    HourlyLoadSeries, PriceCurve, UsageRun, HOURS_PER_DAY,
};
use crate::ingest::{fill_gaps, ConsumptionData, HouseholdConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrepareError {
    #[error("no availability device configured")]
    NoAvailabilityDevice,
    #[error("activity and load series for {0} are not on the same grid")]
    Misaligned(String),
    #[error("not enough history before {date} for features")]
    InsufficientHistory { date: NaiveDate },
    #[error("no target for {date}")]
    MissingTarget { date: NaiveDate },
    #[error("no consumption series for device {0}")]
    MissingSeries(String),
    #[error("no full day covered by all availability devices")]
    NoCoveredDays,
    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Binary in-use flag per hour, aligned with the series it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveHours {
    pub device: String,
    pub start: HourStamp,
    pub active: Vec<bool>,
}

impl ActiveHours {
    pub fn end(&self) -> HourStamp {
        self.start.add_hours(self.active.len() as i64)
    }

    pub fn get(&self, stamp: HourStamp) -> bool {
        let offset = stamp.hours_since(self.start);
        offset >= 0 && (offset as usize) < self.active.len() && self.active[offset as usize]
    }

    /// Maximal blocks of consecutive active hours as `(start index, length)`.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.active.len() {
            if !self.active[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < self.active.len() && self.active[i] {
                i += 1;
            }
            out.push((start, i - start));
        }
        out
    }
}

/// An hour is active iff its energy strictly exceeds the Wh equivalent of the
/// device's power threshold held for one hour. Missing hours are inactive.
pub fn detect_active_hours(series: &HourlyLoadSeries, spec: &DeviceSpec) -> ActiveHours {
    let threshold = spec.on_threshold_wh();
    ActiveHours {
        device: series.device.clone(),
        start: series.start,
        active: series
            .energy_wh
            .iter()
            .map(|v| v.is_some_and(|wh| wh > threshold))
            .collect(),
    }
}

/// Availability is the OR of all availability devices, over the full days
/// covered by every one of them.
pub fn build_availability_targets(active: &[ActiveHours]) -> Result<ActivityMatrix, PrepareError> {
    let start = active
        .iter()
        .map(|a| a.start)
        .max()
        .ok_or(PrepareError::NoAvailabilityDevice)?;
    let end = active.iter().map(|a| a.end()).min().expect("non-empty");
    let mut first_day = start.date();
    if start.hour() != 0 {
        first_day += Duration::days(1);
    }
    let mut matrix = ActivityMatrix::new();
    let mut date = first_day;
    while HourStamp::new(date, 0)?.add_hours(HOURS_PER_DAY as i64) <= end {
        let mut hours = [false; HOURS_PER_DAY];
        for (h, slot) in hours.iter_mut().enumerate() {
            let stamp = HourStamp::new(date, h as u32)?;
            *slot = active.iter().any(|a| a.get(stamp));
        }
        matrix.insert_day(date, hours);
        date += Duration::days(1);
    }
    Ok(matrix)
}

/// Duration beyond the start hour from observed blocks: median block length
/// minus one (lower median for an even count). Zero when nothing was observed.
pub fn median_duration_k(active: &ActiveHours) -> usize {
    let mut lengths: Vec<usize> = active.blocks().into_iter().map(|(_, len)| len).collect();
    if lengths.is_empty() {
        return 0;
    }
    lengths.sort_unstable();
    lengths[(lengths.len() - 1) / 2].saturating_sub(1)
}

/// Each maximal active block becomes one run. The load vector has length
/// `k + 1`: hours inside the block keep their energy, hours after the block
/// end are zero, and blocks longer than `k + 1` are truncated.
pub fn extract_runs(
    active: &ActiveHours,
    series: &HourlyLoadSeries,
    spec: &DeviceSpec,
) -> Result<Vec<UsageRun>, PrepareError> {
    if active.start != series.start || active.active.len() != series.len() {
        return Err(PrepareError::Misaligned(spec.id.clone()));
    }
    let k = spec.resolved_k()?;
    let mut runs: Vec<UsageRun> = Vec::new();
    for (start, len) in active.blocks() {
        let stamp = series.stamp_at(start);
        let load = (0..=k)
            .map(|j| {
                if j < len {
                    series.energy_wh[start + j].unwrap_or(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        let run_index_within_day = runs
            .iter()
            .rev()
            .take_while(|r| r.date() == stamp.date())
            .count();
        runs.push(UsageRun {
            device: spec.id.clone(),
            start: stamp,
            load,
            run_index_within_day,
        });
    }
    Ok(runs)
}

/// `(device, date)` is set iff at least one run of the device starts that day.
pub fn build_usage_targets(
    runs: &BTreeMap<String, Vec<UsageRun>>,
    dates: impl IntoIterator<Item = NaiveDate> + Clone,
) -> DailyUsageTargets {
    let mut targets = DailyUsageTargets::new();
    for (device, device_runs) in runs {
        let started: BTreeSet<NaiveDate> = device_runs.iter().map(UsageRun::date).collect();
        for date in dates.clone() {
            targets.set(device, date, started.contains(&date));
        }
    }
    targets
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub lag_days: usize,
    /// Hours of day d-1 ending at the target clock hour.
    pub recent_hours: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            lag_days: 7,
            recent_hours: 3,
        }
    }
}

impl FeatureConfig {
    pub fn availability_dim(&self) -> usize {
        HOURS_PER_DAY + 7 + self.lag_days + self.recent_hours
    }

    pub fn usage_dim(&self) -> usize {
        7 + 2 * self.lag_days
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FeatureKey {
    pub date: NaiveDate,
    pub hour: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub key: FeatureKey,
    pub features: Vec<f64>,
    pub label: bool,
}

fn one_hot(out: &mut Vec<f64>, size: usize, index: usize) {
    out.extend((0..size).map(|i| if i == index { 1.0 } else { 0.0 }));
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Hour-of-day and day-of-week one-hots, availability at the same hour on each
/// of the previous `lag_days` days, and the last `recent_hours` hours of day
/// d-1 ending at the same clock hour. Everything reads strictly before `date`.
pub fn availability_features(
    matrix: &ActivityMatrix,
    date: NaiveDate,
    hour: u32,
    cfg: &FeatureConfig,
) -> Result<Vec<f64>, PrepareError> {
    let insufficient = PrepareError::InsufficientHistory { date };
    let mut out = Vec::with_capacity(cfg.availability_dim());
    one_hot(&mut out, HOURS_PER_DAY, hour as usize);
    one_hot(&mut out, 7, weekday_index(date));
    for lag in 1..=cfg.lag_days {
        let v = matrix
            .get(date - Duration::days(lag as i64), hour)
            .ok_or_else(|| insufficient.clone())?;
        out.push(flag(v));
    }
    let anchor = HourStamp::new(date - Duration::days(1), hour)?;
    for back in (0..cfg.recent_hours).rev() {
        let v = matrix
            .get_stamp(anchor.add_hours(-(back as i64)))
            .ok_or_else(|| insufficient.clone())?;
        out.push(flag(v));
    }
    Ok(out)
}

pub fn availability_row(
    matrix: &ActivityMatrix,
    date: NaiveDate,
    hour: u32,
    cfg: &FeatureConfig,
) -> Result<FeatureRow, PrepareError> {
    let features = availability_features(matrix, date, hour, cfg)?;
    let label = matrix
        .get(date, hour)
        .ok_or(PrepareError::MissingTarget { date })?;
    Ok(FeatureRow {
        key: FeatureKey {
            date,
            hour: Some(hour),
        },
        features,
        label,
    })
}

/// Day-of-week one-hot, device usage on each of the previous `lag_days` days,
/// and the share of available hours on each of those days.
pub fn usage_features(
    targets: &DailyUsageTargets,
    matrix: &ActivityMatrix,
    device: &str,
    date: NaiveDate,
    cfg: &FeatureConfig,
) -> Result<Vec<f64>, PrepareError> {
    let insufficient = || PrepareError::InsufficientHistory { date };
    let mut out = Vec::with_capacity(cfg.usage_dim());
    one_hot(&mut out, 7, weekday_index(date));
    for lag in 1..=cfg.lag_days {
        let used = targets
            .get(device, date - Duration::days(lag as i64))
            .ok_or_else(insufficient)?;
        out.push(flag(used));
    }
    for lag in 1..=cfg.lag_days {
        let frac = matrix
            .daily_fraction(date - Duration::days(lag as i64))
            .ok_or_else(insufficient)?;
        out.push(frac);
    }
    Ok(out)
}

pub fn usage_row(
    targets: &DailyUsageTargets,
    matrix: &ActivityMatrix,
    device: &str,
    date: NaiveDate,
    cfg: &FeatureConfig,
) -> Result<FeatureRow, PrepareError> {
    let features = usage_features(targets, matrix, device, date, cfg)?;
    let label = targets
        .get(device, date)
        .ok_or(PrepareError::MissingTarget { date })?;
    Ok(FeatureRow {
        key: FeatureKey { date, hour: None },
        features,
        label,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepStats {
    pub rows_read: usize,
    pub malformed_rows: usize,
    pub backward_rows: usize,
    pub hours_zero_filled: usize,
    pub hours_missing: usize,
}

/// Everything the agents and the evaluation need for one household.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub household: String,
    /// Device specs with `duration_k` resolved for shiftable devices.
    pub devices: Vec<DeviceSpec>,
    pub series: Vec<HourlyLoadSeries>,
    pub matrix: ActivityMatrix,
    pub usage_targets: DailyUsageTargets,
    pub runs: BTreeMap<String, Vec<UsageRun>>,
    pub prices: PriceCurve,
    /// Days touched by a gap longer than the zero-fill limit.
    pub excluded_days: BTreeSet<NaiveDate>,
    pub stats: PrepStats,
}

impl PreparedDataset {
    /// Covered dates that are not excluded, in order.
    pub fn usable_dates(&self) -> Vec<NaiveDate> {
        self.matrix
            .dates()
            .filter(|d| !self.excluded_days.contains(d))
            .collect()
    }

    pub fn is_usable(&self, date: NaiveDate) -> bool {
        self.matrix.contains(date) && !self.excluded_days.contains(&date)
    }

    pub fn shiftable_devices(&self) -> impl Iterator<Item = &DeviceSpec> {
        self.devices.iter().filter(|d| d.role.is_shiftable())
    }

    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.id == id)
    }

    pub fn runs_for(&self, device: &str) -> &[UsageRun] {
        self.runs.get(device).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Debug dump: one row per (date, hour) with availability and per-device
    /// daily usage.
    pub fn write_targets_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let devices: Vec<&str> = self.shiftable_devices().map(|d| d.id.as_str()).collect();
        write!(out, "date,hour,available,excluded")?;
        for d in &devices {
            write!(out, ",used_{d}")?;
        }
        writeln!(out)?;
        for date in self.matrix.dates() {
            for hour in 0..HOURS_PER_DAY as u32 {
                let available = self.matrix.get(date, hour).unwrap_or(false);
                write!(
                    out,
                    "{date},{hour},{},{}",
                    available as u8,
                    self.excluded_days.contains(&date) as u8
                )?;
                for d in &devices {
                    let used = self.usage_targets.get(d, date).unwrap_or(false);
                    write!(out, ",{}", used as u8)?;
                }
                writeln!(out)?;
            }
        }
        out.flush()
    }
}

/// Run the whole preparation pass for one household.
pub fn prepare_household(
    config: &HouseholdConfig,
    consumption: &ConsumptionData,
    prices: PriceCurve,
) -> Result<PreparedDataset, PrepareError> {
    let mut devices = config.device_specs();
    let mut stats = PrepStats {
        rows_read: consumption.rows_read,
        malformed_rows: consumption.malformed_rows,
        backward_rows: consumption.backward_rows,
        ..PrepStats::default()
    };

    let mut series = Vec::with_capacity(devices.len());
    for spec in &devices {
        let raw = consumption
            .series
            .iter()
            .find(|s| s.device == spec.id)
            .ok_or_else(|| PrepareError::MissingSeries(spec.id.clone()))?;
        let filled = fill_gaps(raw, config.max_gap_hours);
        let before = raw.energy_wh.iter().filter(|v| v.is_none()).count();
        let after = filled.energy_wh.iter().filter(|v| v.is_none()).count();
        stats.hours_zero_filled += before - after;
        stats.hours_missing += after;
        series.push(filled);
    }

    let mut excluded_days = BTreeSet::new();
    for s in &series {
        excluded_days.extend(s.dates_with_missing());
    }

    let active: Vec<ActiveHours> = devices
        .iter()
        .zip(&series)
        .map(|(spec, s)| detect_active_hours(s, spec))
        .collect();
    let availability: Vec<ActiveHours> = devices
        .iter()
        .zip(&active)
        .filter(|(spec, _)| spec.role.signals_availability())
        .map(|(_, a)| a.clone())
        .collect();
    if availability.is_empty() {
        return Err(PrepareError::NoAvailabilityDevice);
    }
    let matrix = build_availability_targets(&availability)?;
    if matrix.is_empty() {
        return Err(PrepareError::NoCoveredDays);
    }

    let mut runs = BTreeMap::new();
    for ((spec, s), a) in devices.iter_mut().zip(&series).zip(&active) {
        if !spec.role.is_shiftable() {
            continue;
        }
        if spec.duration_k.is_none() {
            spec.duration_k = Some(median_duration_k(a));
        }
        runs.insert(spec.id.clone(), extract_runs(a, s, spec)?);
    }
    let usage_targets = build_usage_targets(&runs, matrix.dates().collect::<Vec<_>>());

    Ok(PreparedDataset {
        household: config.household.clone(),
        devices,
        series,
        matrix,
        usage_targets,
        runs,
        prices,
        excluded_days,
        stats,
    })
}
