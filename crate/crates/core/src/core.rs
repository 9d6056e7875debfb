//! Domain types shared by every stage of the pipeline.
//!
//! Units: energy is kept in Wh, prices in price-units per MWh (as ingested).
//! A cost is therefore `price × energy` in price-units·Wh/MWh; divide by 1e6
//! to get plain price-units.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HOURS_PER_DAY: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("hour {0} is outside 0..=23")]
    HourOutOfRange(u32),
    #[error("device {device}: on-threshold must be positive, got {value}")]
    NonPositiveThreshold { device: String, value: f64 },
    #[error("device {0}: shiftable device has no resolved duration")]
    UnresolvedDuration(String),
    #[error("threshold {name} = {value} is outside [0, 1]")]
    ThresholdOutOfRange { name: &'static str, value: f64 },
    #[error("series {device}: negative energy {value} at {stamp}")]
    NegativeEnergy {
        device: String,
        stamp: HourStamp,
        value: f64,
    },
    #[error("price curve: timestamps not strictly increasing at {0}")]
    NonIncreasingPrice(HourStamp),
    #[error("price curve: NaN price at {0}")]
    NanPrice(HourStamp),
}

/// One hour on the naive local hourly grid.
///
/// Field order matters: the derived `Ord` is lexicographic on `(date, hour)`,
/// which is chronological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HourStamp {
    date: NaiveDate,
    hour: u8,
}

impl HourStamp {
    pub fn new(date: NaiveDate, hour: u32) -> Result<Self, CoreError> {
        if hour as usize >= HOURS_PER_DAY {
            return Err(CoreError::HourOutOfRange(hour));
        }
        Ok(Self {
            date,
            hour: hour as u8,
        })
    }

    /// Floor a naive timestamp to the start of its hour.
    pub fn floor(dt: NaiveDateTime) -> Self {
        Self {
            date: dt.date(),
            hour: dt.hour() as u8,
        }
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn hour(&self) -> u32 {
        self.hour as u32
    }

    pub fn to_datetime(&self) -> NaiveDateTime {
        self.date
            .and_time(NaiveTime::from_hms_opt(self.hour as u32, 0, 0).expect("hour < 24"))
    }

    /// Signed offset in hours; positive when `self` is later than `other`.
    pub fn hours_since(&self, other: HourStamp) -> i64 {
        (self.date - other.date).num_days() * HOURS_PER_DAY as i64
            + self.hour as i64
            - other.hour as i64
    }

    pub fn add_hours(&self, hours: i64) -> Self {
        Self::floor(self.to_datetime() + Duration::hours(hours))
    }

    pub fn succ(&self) -> Self {
        self.add_hours(1)
    }
}

impl fmt::Display for HourStamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:02}:00", self.date, self.hour)
    }
}

/// Hours 0..23 of `date` followed by hours 0..extra_k-1 of the next day.
pub fn hour_range(date: NaiveDate, extra_k: usize) -> Vec<HourStamp> {
    let start = HourStamp { date, hour: 0 };
    (0..(HOURS_PER_DAY + extra_k) as i64)
        .map(|h| start.add_hours(h))
        .collect()
}

/// Monday = 0 … Sunday = 6.
pub fn weekday_index(date: NaiveDate) -> usize {
    date.weekday().num_days_from_monday() as usize
}

pub fn is_weekday(date: NaiveDate, day: Weekday) -> bool {
    date.weekday() == day
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceRole {
    Shiftable,
    Availability,
    Both,
}

impl DeviceRole {
    pub fn is_shiftable(self) -> bool {
        matches!(self, DeviceRole::Shiftable | DeviceRole::Both)
    }

    pub fn signals_availability(self) -> bool {
        matches!(self, DeviceRole::Availability | DeviceRole::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: String,
    pub household: String,
    pub role: DeviceRole,
    pub on_threshold_watts: f64,
    /// Hours the device keeps running after its start hour. `None` until
    /// resolved from data during preparation.
    pub duration_k: Option<usize>,
}

impl DeviceSpec {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.on_threshold_watts.is_nan() || self.on_threshold_watts <= 0.0 {
            return Err(CoreError::NonPositiveThreshold {
                device: self.id.clone(),
                value: self.on_threshold_watts,
            });
        }
        Ok(())
    }

    /// The run duration beyond the start hour; required for shiftable devices.
    pub fn resolved_k(&self) -> Result<usize, CoreError> {
        self.duration_k
            .ok_or_else(|| CoreError::UnresolvedDuration(self.id.clone()))
    }

    /// Hourly energy (Wh) above which the device counts as in use.
    pub fn on_threshold_wh(&self) -> f64 {
        self.on_threshold_watts
    }
}

/// Hourly energy of one device on a dense grid starting at `start`.
/// `None` marks an hour without any readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyLoadSeries {
    pub device: String,
    pub start: HourStamp,
    pub energy_wh: Vec<Option<f64>>,
}

impl HourlyLoadSeries {
    pub fn new(
        device: impl Into<String>,
        start: HourStamp,
        energy_wh: Vec<Option<f64>>,
    ) -> Result<Self, CoreError> {
        let series = Self {
            device: device.into(),
            start,
            energy_wh,
        };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for (stamp, value) in self.iter() {
            if let Some(v) = value {
                if v.is_nan() || v < 0.0 {
                    return Err(CoreError::NegativeEnergy {
                        device: self.device.clone(),
                        stamp,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.energy_wh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energy_wh.is_empty()
    }

    /// First hour after the series.
    pub fn end(&self) -> HourStamp {
        self.start.add_hours(self.energy_wh.len() as i64)
    }

    pub fn stamp_at(&self, index: usize) -> HourStamp {
        self.start.add_hours(index as i64)
    }

    pub fn index_of(&self, stamp: HourStamp) -> Option<usize> {
        let offset = stamp.hours_since(self.start);
        (offset >= 0 && (offset as usize) < self.energy_wh.len()).then_some(offset as usize)
    }

    pub fn get(&self, stamp: HourStamp) -> Option<f64> {
        self.index_of(stamp).and_then(|i| self.energy_wh[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (HourStamp, Option<f64>)> + '_ {
        let start = self.start.to_datetime();
        self.energy_wh
            .iter()
            .enumerate()
            .map(move |(i, v)| (HourStamp::floor(start + Duration::hours(i as i64)), *v))
    }

    /// Dates with at least one missing hour inside the series span.
    pub fn dates_with_missing(&self) -> BTreeSet<NaiveDate> {
        self.iter()
            .filter(|(_, v)| v.is_none())
            .map(|(s, _)| s.date())
            .collect()
    }
}

/// Binary availability per (date, hour).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivityMatrix {
    days: BTreeMap<NaiveDate, [bool; HOURS_PER_DAY]>,
}

impl ActivityMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_day(&mut self, date: NaiveDate, hours: [bool; HOURS_PER_DAY]) {
        self.days.insert(date, hours);
    }

    pub fn day(&self, date: NaiveDate) -> Option<&[bool; HOURS_PER_DAY]> {
        self.days.get(&date)
    }

    pub fn get(&self, date: NaiveDate, hour: u32) -> Option<bool> {
        self.days.get(&date).map(|h| h[hour as usize])
    }

    pub fn get_stamp(&self, stamp: HourStamp) -> Option<bool> {
        self.get(stamp.date(), stamp.hour())
    }

    /// Share of available hours on `date`.
    pub fn daily_fraction(&self, date: NaiveDate) -> Option<f64> {
        self.days
            .get(&date)
            .map(|h| h.iter().filter(|&&a| a).count() as f64 / HOURS_PER_DAY as f64)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.days.keys().copied()
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.days.contains_key(&date)
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.days.keys().next().copied()
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.days.keys().next_back().copied()
    }
}

/// Binary "device was started that day" targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DailyUsageTargets {
    entries: BTreeMap<String, BTreeMap<NaiveDate, bool>>,
}

impl DailyUsageTargets {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, device: &str, date: NaiveDate, used: bool) {
        self.entries
            .entry(device.to_string())
            .or_default()
            .insert(date, used);
    }

    pub fn get(&self, device: &str, date: NaiveDate) -> Option<bool> {
        self.entries.get(device).and_then(|d| d.get(&date).copied())
    }

    pub fn device(&self, device: &str) -> Option<&BTreeMap<NaiveDate, bool>> {
        self.entries.get(device)
    }

    pub fn devices(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// One detected operation of a shiftable device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRun {
    pub device: String,
    pub start: HourStamp,
    /// Energy per hour offset from the start hour; length `k + 1`.
    pub load: Vec<f64>,
    pub run_index_within_day: usize,
}

impl UsageRun {
    pub fn date(&self) -> NaiveDate {
        self.start.date()
    }
}

/// Element-wise mean of the load vectors of previous runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalLoadProfile {
    pub device: String,
    pub values: Vec<f64>,
    pub run_count: usize,
}

impl TypicalLoadProfile {
    pub fn empty(device: impl Into<String>, k: usize) -> Self {
        Self {
            device: device.into(),
            values: vec![0.0; k + 1],
            run_count: 0,
        }
    }

    /// Streaming mean update. Loads of a different length are truncated or
    /// zero-padded to the profile length.
    pub fn push(&mut self, load: &[f64]) {
        self.run_count += 1;
        let n = self.run_count as f64;
        for (i, v) in self.values.iter_mut().enumerate() {
            let x = load.get(i).copied().unwrap_or(0.0);
            *v += (x - *v) / n;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.run_count == 0
    }
}

/// Contiguous-where-possible hourly prices, in price-units per MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceCurve {
    samples: Vec<(HourStamp, f64)>,
    pub source_unit: String,
    /// Hours that were filled by interpolation during ingestion.
    pub interpolated: Vec<HourStamp>,
    /// Gaps too long to interpolate; those hours have no price.
    pub unfilled_gaps: Vec<PriceGap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceGap {
    /// First missing hour.
    pub start: HourStamp,
    pub hours: usize,
}

impl PriceCurve {
    pub fn new(
        samples: Vec<(HourStamp, f64)>,
        source_unit: impl Into<String>,
    ) -> Result<Self, CoreError> {
        for (i, (stamp, price)) in samples.iter().enumerate() {
            if price.is_nan() {
                return Err(CoreError::NanPrice(*stamp));
            }
            if i > 0 && samples[i - 1].0 >= *stamp {
                return Err(CoreError::NonIncreasingPrice(*stamp));
            }
        }
        Ok(Self {
            samples,
            source_unit: source_unit.into(),
            interpolated: Vec::new(),
            unfilled_gaps: Vec::new(),
        })
    }

    pub fn samples(&self) -> &[(HourStamp, f64)] {
        &self.samples
    }

    pub fn get(&self, stamp: HourStamp) -> Option<f64> {
        self.samples
            .binary_search_by(|(s, _)| s.cmp(&stamp))
            .ok()
            .map(|i| self.samples[i].1)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub availability: f64,
    pub usage: f64,
}

impl Thresholds {
    pub fn new(availability: f64, usage: f64) -> Result<Self, CoreError> {
        let t = Self {
            availability,
            usage,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for (name, value) in [("availability", self.availability), ("usage", self.usage)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(CoreError::ThresholdOutOfRange { name, value });
            }
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            availability: 0.5,
            usage: 0.125,
        }
    }
}

/// One row of the daily recommendation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub date: NaiveDate,
    pub device: String,
    pub best_hour: Option<u32>,
    /// No hour passed the availability threshold.
    pub availability_flag: bool,
    /// Predicted usage probability did not exceed the usage threshold.
    pub usage_flag: bool,
    pub final_hour: Option<u32>,
    pub estimated_cost: Option<f64>,
}

impl Recommendation {
    /// Checks the flag/final-hour coupling.
    pub fn is_consistent(&self) -> bool {
        let both_clear = !self.availability_flag && !self.usage_flag;
        let final_ok = match self.final_hour {
            Some(h) => both_clear && self.best_hour == Some(h),
            None => !both_clear,
        };
        let best_ok = self.availability_flag == self.best_hour.is_none();
        final_ok && best_ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    #[test]
    fn hour_range_plain_day() {
        let r = hour_range(d(2015, 2, 15), 0);
        assert_eq!(r.len(), 24);
        assert!(r.iter().all(|s| s.date() == d(2015, 2, 15)));
        assert_eq!(r.iter().map(|s| s.hour()).collect::<Vec<_>>(), (0..24).collect::<Vec<_>>());
    }

    #[test]
    fn hour_range_extends_into_next_day() {
        let r = hour_range(d(2015, 2, 15), 2);
        assert_eq!(r.len(), 26);
        assert_eq!(r[24], HourStamp::new(d(2015, 2, 16), 0).unwrap());
        assert_eq!(r[25], HourStamp::new(d(2015, 2, 16), 1).unwrap());
    }

    #[test]
    fn hour_range_rolls_over_year() {
        let r = hour_range(d(2015, 12, 31), 1);
        assert_eq!(*r.last().unwrap(), HourStamp::new(d(2016, 1, 1), 0).unwrap());
    }

    #[test]
    fn hour_out_of_range_rejected() {
        assert_eq!(
            HourStamp::new(d(2015, 1, 1), 24),
            Err(CoreError::HourOutOfRange(24))
        );
    }

    #[test]
    fn device_threshold_must_be_positive() {
        let spec = DeviceSpec {
            id: "wm".into(),
            household: "h".into(),
            role: DeviceRole::Shiftable,
            on_threshold_watts: 0.0,
            duration_k: Some(1),
        };
        assert!(spec.validate().is_err());
        assert!(DeviceSpec { duration_k: None, on_threshold_watts: 5.0, ..spec }
            .resolved_k()
            .is_err());
    }

    #[test]
    fn thresholds_bounded() {
        assert!(Thresholds::new(0.0, 1.0).is_ok());
        assert!(Thresholds::new(1.1, 0.5).is_err());
        assert!(Thresholds::new(0.5, -0.1).is_err());
    }

    #[test]
    fn price_curve_rejects_nan_and_disorder() {
        let a = HourStamp::new(d(2015, 1, 1), 1).unwrap();
        let b = HourStamp::new(d(2015, 1, 1), 2).unwrap();
        assert!(PriceCurve::new(vec![(a, f64::NAN)], "EUR/MWh").is_err());
        assert!(PriceCurve::new(vec![(b, 1.0), (a, 1.0)], "EUR/MWh").is_err());
        let c = PriceCurve::new(vec![(a, 1.0), (b, 2.0)], "EUR/MWh").unwrap();
        assert_eq!(c.get(b), Some(2.0));
        assert_eq!(c.get(a.add_hours(5)), None);
    }

    #[test]
    fn series_rejects_negative_energy() {
        let s = HourStamp::new(d(2015, 1, 1), 0).unwrap();
        assert!(HourlyLoadSeries::new("x", s, vec![Some(1.0), Some(-1.0)]).is_err());
        let ok = HourlyLoadSeries::new("x", s, vec![Some(1.0), None]).unwrap();
        assert_eq!(ok.dates_with_missing().len(), 1);
        assert_eq!(ok.end(), s.add_hours(2));
    }

    #[test]
    fn streaming_profile_matches_mean() {
        let mut p = TypicalLoadProfile::empty("wm", 1);
        p.push(&[2.0, 4.0]);
        p.push(&[4.0, 6.0]);
        assert_eq!(p.values, vec![3.0, 5.0]);
        assert_eq!(p.run_count, 2);
    }

    fn arb_stamp() -> impl Strategy<Value = HourStamp> {
        (0i64..20_000, 0u32..24).prop_map(|(days, hour)| {
            HourStamp::new(d(2000, 1, 1) + Duration::days(days), hour).unwrap()
        })
    }

    proptest! {
        #[test]
        fn ordering_is_lexicographic_and_chronological(a in arb_stamp(), b in arb_stamp()) {
            prop_assert_eq!(a.cmp(&b), (a.date(), a.hour()).cmp(&(b.date(), b.hour())));
            prop_assert_eq!(a.cmp(&b), a.to_datetime().cmp(&b.to_datetime()));
            prop_assert_eq!(a.add_hours(b.hours_since(a)), b);
        }

        #[test]
        fn core_types_roundtrip_through_json(
            stamp in arb_stamp(),
            values in proptest::collection::vec(proptest::option::of(0.0f64..1e6), 0..50),
            prices in proptest::collection::vec(-500.0f64..500.0, 1..30),
            flag in any::<bool>(),
        ) {
            let series = HourlyLoadSeries::new("dev", stamp, values).unwrap();
            let back: HourlyLoadSeries = serde_json::from_str(&serde_json::to_string(&series).unwrap()).unwrap();
            prop_assert_eq!(&back, &series);

            let samples = prices.iter().enumerate().map(|(i, p)| (stamp.add_hours(i as i64), *p)).collect();
            let curve = PriceCurve::new(samples, "EUR/MWh").unwrap();
            let back: PriceCurve = serde_json::from_str(&serde_json::to_string(&curve).unwrap()).unwrap();
            prop_assert_eq!(&back, &curve);

            let mut matrix = ActivityMatrix::new();
            matrix.insert_day(stamp.date(), [flag; 24]);
            let back: ActivityMatrix = serde_json::from_str(&serde_json::to_string(&matrix).unwrap()).unwrap();
            prop_assert_eq!(&back, &matrix);

            let rec = Recommendation {
                date: stamp.date(),
                device: "wm".into(),
                best_hour: Some(stamp.hour()),
                availability_flag: false,
                usage_flag: flag,
                final_hour: (!flag).then_some(stamp.hour()),
                estimated_cost: Some(prices[0]),
            };
            prop_assert!(rec.is_consistent());
            let back: Recommendation = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
            prop_assert_eq!(back, rec);
        }
    }
}
