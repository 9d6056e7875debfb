//! Runtime agents: price, load, availability, usage and recommendation.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{
    hour_range, ActivityMatrix, DailyUsageTargets, DeviceSpec, HourStamp, PriceCurve,
    Recommendation, Thresholds, TypicalLoadProfile, UsageRun, HOURS_PER_DAY,
};
use crate::learn::{train_logistic_iter, LogisticConfig};
use crate::prepare::{availability_features, availability_row, usage_features, usage_row, FeatureConfig, FeatureRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("prices for {date} incomplete; missing {}", fmt_missing(.missing))]
    IncompleteCoverage {
        date: NaiveDate,
        missing: Vec<HourStamp>,
    },
    #[error("device {device}: no usage run before {cutoff}")]
    NoHistory { device: String, cutoff: NaiveDate },
}

fn fmt_missing(missing: &[HourStamp]) -> String {
    missing
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub logistic: LogisticConfig,
}

/// Prices for hours 0..23 of `date` plus the first `k` hours of the next day.
pub fn price_vector(curve: &PriceCurve, date: NaiveDate, k: usize) -> Result<Vec<f64>, AgentError> {
    let window = price_window(curve, date, k);
    let missing: Vec<HourStamp> = hour_range(date, k)
        .into_iter()
        .zip(&window)
        .filter(|(_, p)| p.is_none())
        .map(|(s, _)| s)
        .collect();
    if !missing.is_empty() {
        return Err(AgentError::IncompleteCoverage { date, missing });
    }
    Ok(window.into_iter().flatten().collect())
}

/// Like [`price_vector`] but with `None` for hours the curve lacks.
pub fn price_window(curve: &PriceCurve, date: NaiveDate, k: usize) -> Vec<Option<f64>> {
    hour_range(date, k).into_iter().map(|s| curve.get(s)).collect()
}

/// Element-wise mean of the loads of all runs strictly before `cutoff`.
pub fn typical_profile(
    runs: &[UsageRun],
    cutoff: NaiveDate,
    k: usize,
) -> Result<TypicalLoadProfile, AgentError> {
    let device = runs.first().map(|r| r.device.clone()).unwrap_or_default();
    let mut profile = TypicalLoadProfile::empty(device.clone(), k);
    for run in runs.iter().filter(|r| r.date() < cutoff) {
        profile.push(&run.load);
    }
    if profile.is_empty() {
        return Err(AgentError::NoHistory { device, cutoff });
    }
    Ok(profile)
}

/// Incrementally maintained typical profile for one device. Runs must be
/// supplied in chronological order.
#[derive(Debug, Clone)]
pub struct LoadAgent<'a> {
    runs: &'a [UsageRun],
    next: usize,
    profile: TypicalLoadProfile,
}

impl<'a> LoadAgent<'a> {
    pub fn new(device: &str, k: usize, runs: &'a [UsageRun]) -> Self {
        Self {
            runs,
            next: 0,
            profile: TypicalLoadProfile::empty(device, k),
        }
    }

    /// Fold in every run dated before `cutoff` and return the profile, or
    /// `None` while no run has been seen.
    pub fn profile_before(&mut self, cutoff: NaiveDate) -> Option<&TypicalLoadProfile> {
        while self.next < self.runs.len() && self.runs[self.next].date() < cutoff {
            self.profile.push(&self.runs[self.next].load);
            self.next += 1;
        }
        (!self.profile.is_empty()).then_some(&self.profile)
    }

    /// Date of the latest run folded in so far.
    pub fn latest_run_date(&self) -> Option<NaiveDate> {
        self.next.checked_sub(1).map(|i| self.runs[i].date())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityForecast {
    pub date: NaiveDate,
    pub probabilities: Vec<f64>,
    /// Produced from hourly base rates instead of a fitted model.
    pub fallback: bool,
    /// Latest label date that informed the forecast.
    pub trained_through: Option<NaiveDate>,
    pub training_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageForecast {
    pub date: NaiveDate,
    pub device: String,
    pub probability: f64,
    pub fallback: bool,
    pub trained_through: Option<NaiveDate>,
    pub training_rows: usize,
}

/// Availability rows for every usable date (all 24 hours), skipping rows
/// without enough lag history. Sorted by key.
pub fn availability_rows(
    matrix: &ActivityMatrix,
    dates: &[NaiveDate],
    cfg: &FeatureConfig,
) -> Vec<FeatureRow> {
    dates
        .iter()
        .flat_map(|&d| (0..HOURS_PER_DAY as u32).filter_map(move |h| availability_row(matrix, d, h, cfg).ok()))
        .collect()
}

pub fn usage_rows(
    targets: &DailyUsageTargets,
    matrix: &ActivityMatrix,
    device: &str,
    dates: &[NaiveDate],
    cfg: &FeatureConfig,
) -> Vec<FeatureRow> {
    dates
        .iter()
        .filter_map(|&d| usage_row(targets, matrix, device, d, cfg).ok())
        .collect()
}

/// Rows of a key-sorted slice whose label date precedes `date`.
pub fn rows_before(rows: &[FeatureRow], date: NaiveDate) -> &[FeatureRow] {
    let end = rows.partition_point(|r| r.key.date < date);
    &rows[..end]
}

/// Availability forecast for `date` from pre-built rows. Only rows dated
/// before `date` are used for training; `history` lists the usable dates
/// for the base-rate fallback.
pub fn forecast_availability_from_rows(
    rows: &[FeatureRow],
    matrix: &ActivityMatrix,
    history: &[NaiveDate],
    date: NaiveDate,
    cfg: &ModelConfig,
) -> AvailabilityForecast {
    let train = rows_before(rows, date);
    let features: Option<Vec<Vec<f64>>> = (0..HOURS_PER_DAY as u32)
        .map(|h| availability_features(matrix, date, h, &cfg.features).ok())
        .collect();
    if let (Some(features), false) = (features, train.is_empty()) {
        if let Ok(model) = train_logistic_iter(train, &cfg.logistic) {
            let probabilities = features
                .iter()
                .map(|x| model.predict_proba(x).expect("dimension fixed by config"))
                .collect();
            return AvailabilityForecast {
                date,
                probabilities,
                fallback: false,
                trained_through: train.last().map(|r| r.key.date),
                training_rows: train.len(),
            };
        }
    }
    availability_base_rate(matrix, history, date)
}

/// Per-hour share of available hours over history strictly before `date`;
/// zero without history.
pub fn availability_base_rate(
    matrix: &ActivityMatrix,
    history: &[NaiveDate],
    date: NaiveDate,
) -> AvailabilityForecast {
    let mut counts = [0usize; HOURS_PER_DAY];
    let mut days = 0usize;
    let mut last = None;
    for &d in history.iter().filter(|d| **d < date) {
        if let Some(hours) = matrix.day(d) {
            days += 1;
            last = Some(d);
            for (c, a) in counts.iter_mut().zip(hours) {
                *c += *a as usize;
            }
        }
    }
    let probabilities = counts
        .iter()
        .map(|&c| if days == 0 { 0.0 } else { c as f64 / days as f64 })
        .collect();
    AvailabilityForecast {
        date,
        probabilities,
        fallback: true,
        trained_through: last,
        training_rows: days * HOURS_PER_DAY,
    }
}

/// Fit on all availability data before `date` and predict its 24 hours.
pub fn forecast_availability(
    matrix: &ActivityMatrix,
    excluded: &BTreeSet<NaiveDate>,
    date: NaiveDate,
    cfg: &ModelConfig,
) -> AvailabilityForecast {
    let history: Vec<NaiveDate> = matrix
        .dates()
        .filter(|d| *d < date && !excluded.contains(d))
        .collect();
    let rows = availability_rows(matrix, &history, &cfg.features);
    forecast_availability_from_rows(&rows, matrix, &history, date, cfg)
}

pub fn forecast_usage_from_rows(
    rows: &[FeatureRow],
    targets: &DailyUsageTargets,
    matrix: &ActivityMatrix,
    history: &[NaiveDate],
    device: &str,
    date: NaiveDate,
    cfg: &ModelConfig,
) -> UsageForecast {
    let train = rows_before(rows, date);
    let features = usage_features(targets, matrix, device, date, &cfg.features).ok();
    if let (Some(features), false) = (features, train.is_empty()) {
        if let Ok(model) = train_logistic_iter(train, &cfg.logistic) {
            return UsageForecast {
                date,
                device: device.to_string(),
                probability: model
                    .predict_proba(&features)
                    .expect("dimension fixed by config"),
                fallback: false,
                trained_through: train.last().map(|r| r.key.date),
                training_rows: train.len(),
            };
        }
    }
    usage_base_rate(targets, history, device, date)
}

/// Share of usage days over history strictly before `date`; zero without
/// history.
pub fn usage_base_rate(
    targets: &DailyUsageTargets,
    history: &[NaiveDate],
    device: &str,
    date: NaiveDate,
) -> UsageForecast {
    let mut used = 0usize;
    let mut days = 0usize;
    let mut last = None;
    for &d in history.iter().filter(|d| **d < date) {
        if let Some(u) = targets.get(device, d) {
            days += 1;
            used += u as usize;
            last = Some(d);
        }
    }
    UsageForecast {
        date,
        device: device.to_string(),
        probability: if days == 0 { 0.0 } else { used as f64 / days as f64 },
        fallback: true,
        trained_through: last,
        training_rows: days,
    }
}

/// Fit on all usage data of `device` before `date` and predict that day.
pub fn forecast_usage(
    targets: &DailyUsageTargets,
    matrix: &ActivityMatrix,
    excluded: &BTreeSet<NaiveDate>,
    device: &str,
    date: NaiveDate,
    cfg: &ModelConfig,
) -> UsageForecast {
    let history: Vec<NaiveDate> = matrix
        .dates()
        .filter(|d| *d < date && !excluded.contains(d))
        .collect();
    let rows = usage_rows(targets, matrix, device, &history, &cfg.features);
    forecast_usage_from_rows(&rows, targets, matrix, &history, device, date, cfg)
}

/// Cheapest start hour among `candidates` for a load `profile` given the
/// price window (`prices[h]` is the price of hour `h` of the day, continuing
/// into the next day). Hours whose window runs past the known prices are
/// skipped. Ties go to the earliest hour.
pub fn cheapest_start(
    prices: &[Option<f64>],
    profile: &[f64],
    candidates: impl IntoIterator<Item = u32>,
) -> Option<(u32, f64)> {
    let mut best: Option<(u32, f64)> = None;
    for h in candidates {
        let start = h as usize;
        let Some(window) = prices.get(start..start + profile.len()) else {
            continue;
        };
        let Some(cost) = window
            .iter()
            .zip(profile)
            .map(|(p, l)| p.map(|p| p * l))
            .sum::<Option<f64>>()
        else {
            continue;
        };
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((h, cost));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    MissingProfile,
    MissingUsageForecast,
    MissingPrices,
    UnresolvedDuration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDevice {
    pub device: String,
    pub reason: SkipReason,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecommendOutcome {
    pub recommendations: Vec<Recommendation>,
    pub skipped: Vec<SkippedDevice>,
}

/// Candidate start hours: those whose availability probability exceeds the
/// threshold.
pub fn candidate_hours(availability: &AvailabilityForecast, threshold: f64) -> Vec<u32> {
    availability
        .probabilities
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > threshold)
        .map(|(h, _)| h as u32)
        .collect()
}

/// One recommendation per shiftable device for `date`.
pub fn recommend(
    date: NaiveDate,
    devices: &[DeviceSpec],
    thresholds: &Thresholds,
    profiles: &BTreeMap<String, TypicalLoadProfile>,
    prices: &PriceCurve,
    availability: &AvailabilityForecast,
    usage: &BTreeMap<String, UsageForecast>,
) -> RecommendOutcome {
    let candidates = candidate_hours(availability, thresholds.availability);
    let mut out = RecommendOutcome::default();
    for device in devices.iter().filter(|d| d.role.is_shiftable()) {
        let skip = |reason| SkippedDevice {
            device: device.id.clone(),
            reason,
        };
        let Ok(k) = device.resolved_k() else {
            out.skipped.push(skip(SkipReason::UnresolvedDuration));
            continue;
        };
        let Some(profile) = profiles.get(&device.id).filter(|p| !p.is_empty()) else {
            out.skipped.push(skip(SkipReason::MissingProfile));
            continue;
        };
        let Some(forecast) = usage.get(&device.id) else {
            out.skipped.push(skip(SkipReason::MissingUsageForecast));
            continue;
        };
        let availability_flag = candidates.is_empty();
        let usage_flag = forecast.probability <= thresholds.usage;
        let best = if availability_flag {
            None
        } else {
            let window = price_window(prices, date, k);
            match cheapest_start(&window, &profile.values, candidates.iter().copied()) {
                Some(b) => Some(b),
                None => {
                    out.skipped.push(skip(SkipReason::MissingPrices));
                    continue;
                }
            }
        };
        let final_hour = if availability_flag || usage_flag {
            None
        } else {
            best.map(|(h, _)| h)
        };
        out.recommendations.push(Recommendation {
            date,
            device: device.id.clone(),
            best_hour: best.map(|(h, _)| h),
            availability_flag,
            usage_flag,
            final_hour,
            estimated_cost: best.map(|(_, c)| c),
        });
    }
    out
}

/// Dates strictly before `date` within `lag` days; convenience for callers
/// checking whether a forecast can be model-based.
pub fn has_lag_history(matrix: &ActivityMatrix, date: NaiveDate, lag_days: usize) -> bool {
    (1..=lag_days as i64).all(|l| matrix.contains(date - Duration::days(l)))
}
