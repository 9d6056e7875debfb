//! Synthetic households with planted availability, usage and price patterns.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{weekday_index, DeviceRole, HourStamp, HourlyLoadSeries, PriceCurve, HOURS_PER_DAY};
use crate::ingest::{
    write_consumption_csv, write_price_csv, ConsumptionData, DeviceConfig, HouseholdConfig, IngestError, PriceUnit,
};
use crate::prepare::{prepare_household, PrepareError, PreparedDataset};

use super::EvalError;

pub const AVAILABILITY_DEVICE: &str = "television";
pub const SHIFTABLE_DEVICE: &str = "washing_machine";
const AVAILABILITY_WATTS: f64 = 120.0;
const AVAILABILITY_THRESHOLD: f64 = 20.0;
const SHIFTABLE_THRESHOLD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvailabilityPattern {
    Always,
    /// Available from `from` through `to`, inclusive.
    Hours { from: u32, to: u32 },
}

impl AvailabilityPattern {
    pub fn is_available(&self, hour: u32) -> bool {
        match self {
            AvailabilityPattern::Always => true,
            AvailabilityPattern::Hours { from, to } => (*from..=*to).contains(&hour),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageSchedule {
    Daily,
    /// Weekday indices, Monday = 0.
    Weekdays(Vec<usize>),
}

impl UsageSchedule {
    pub fn is_used(&self, date: NaiveDate) -> bool {
        match self {
            UsageSchedule::Daily => true,
            UsageSchedule::Weekdays(days) => days.contains(&weekday_index(date)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceDip {
    pub hour: u32,
    pub price: f64,
}

/// Same daily price profile every day: `base` except at the dips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceShape {
    pub base: f64,
    pub dips: Vec<PriceDip>,
}

impl PriceShape {
    pub fn price_at(&self, hour: u32) -> f64 {
        self.dips
            .iter()
            .find(|d| d.hour == hour % HOURS_PER_DAY as u32)
            .map_or(self.base, |d| d.price)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub start: NaiveDate,
    pub days: usize,
    pub availability: AvailabilityPattern,
    /// Probability of flipping each hour's availability.
    pub availability_noise: f64,
    pub usage: UsageSchedule,
    /// Probability of flipping each day's usage.
    pub usage_noise: f64,
    pub run_start_hour: u32,
    /// Energy per run hour in Wh.
    pub run_load_wh: Vec<f64>,
    /// Each run hour is scaled by a factor drawn from `[1 − n, 1 + n]`.
    pub load_noise: f64,
    pub prices: PriceShape,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Scenario::Dip.config(365)
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.days == 0 {
            return Err("days must be positive".into());
        }
        if self.run_load_wh.is_empty() {
            return Err("run load must have at least one hour".into());
        }
        if self.run_start_hour as usize + self.run_load_wh.len() > HOURS_PER_DAY {
            return Err("run must end before midnight".into());
        }
        if !(0.0..1.0).contains(&self.load_noise) {
            return Err("load noise must lie in [0, 1)".into());
        }
        if self
            .run_load_wh
            .iter()
            .any(|l| l * (1.0 - self.load_noise) <= SHIFTABLE_THRESHOLD)
        {
            return Err(format!("run load must stay above {SHIFTABLE_THRESHOLD} Wh"));
        }
        for p in [self.availability_noise, self.usage_noise] {
            if !(0.0..=1.0).contains(&p) {
                return Err("noise probabilities must lie in [0, 1]".into());
            }
        }
        if let AvailabilityPattern::Hours { from, to } = self.availability {
            if from > to || to >= HOURS_PER_DAY as u32 {
                return Err("availability hours must satisfy from <= to < 24".into());
            }
        }
        if self.prices.dips.iter().any(|d| d.hour >= HOURS_PER_DAY as u32) || !self.prices.base.is_finite() {
            return Err("invalid price shape".into());
        }
        Ok(())
    }
}

/// Named presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Always available, daily use, one price dip at hour 3.
    Dip,
    /// Like `Dip` with flat prices.
    Flat,
    /// Like `Dip` with equal dips at hours 3 and 15.
    TwoDips,
    /// Evening availability, Saturday use, noisy.
    EveningSaturday,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Dip, Scenario::Flat, Scenario::TwoDips, Scenario::EveningSaturday];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::Dip => "dip",
            Scenario::Flat => "flat",
            Scenario::TwoDips => "two-dips",
            Scenario::EveningSaturday => "evening-saturday",
        }
    }

    pub fn config(self, days: usize) -> SynthConfig {
        let base = SynthConfig {
            start: NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date"),
            days,
            availability: AvailabilityPattern::Always,
            availability_noise: 0.0,
            usage: UsageSchedule::Daily,
            usage_noise: 0.0,
            run_start_hour: 9,
            run_load_wh: vec![2000.0, 1000.0],
            load_noise: 0.0,
            prices: PriceShape {
                base: 50.0,
                dips: vec![PriceDip { hour: 3, price: 10.0 }],
            },
        };
        match self {
            Scenario::Dip => base,
            Scenario::Flat => SynthConfig {
                prices: PriceShape {
                    base: 50.0,
                    dips: Vec::new(),
                },
                ..base
            },
            Scenario::TwoDips => SynthConfig {
                prices: PriceShape {
                    base: 50.0,
                    dips: vec![PriceDip { hour: 3, price: 10.0 }, PriceDip { hour: 15, price: 10.0 }],
                },
                ..base
            },
            Scenario::EveningSaturday => SynthConfig {
                availability: AvailabilityPattern::Hours { from: 18, to: 22 },
                availability_noise: 0.05,
                usage: UsageSchedule::Weekdays(vec![5]),
                usage_noise: 0.05,
                run_start_hour: 18,
                load_noise: 0.2,
                prices: PriceShape {
                    base: 60.0,
                    dips: vec![PriceDip { hour: 21, price: 20.0 }],
                },
                ..base
            },
        }
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.label() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

/// Values implied by the planted patterns when there is no noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedMetrics {
    /// Cheapest start among the planted available hours, earliest on ties.
    pub best_hour: Option<u32>,
    pub baseline_cost_per_run: f64,
    pub recommended_cost_per_run: f64,
    pub relative_savings: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticHousehold {
    pub seed: u64,
    pub synth: SynthConfig,
    pub config: HouseholdConfig,
    pub consumption: ConsumptionData,
    pub prices: PriceCurve,
    pub expected: ExpectedMetrics,
}

fn daily_window_cost(shape: &PriceShape, start: u32, load: &[f64]) -> f64 {
    load.iter()
        .enumerate()
        .map(|(j, l)| shape.price_at(start + j as u32) * l)
        .sum()
}

fn expected_metrics(cfg: &SynthConfig) -> ExpectedMetrics {
    let mut best: Option<(u32, f64)> = None;
    for h in 0..HOURS_PER_DAY as u32 {
        if !cfg.availability.is_available(h) {
            continue;
        }
        let cost = daily_window_cost(&cfg.prices, h, &cfg.run_load_wh);
        if best.is_none_or(|(_, c)| cost < c) {
            best = Some((h, cost));
        }
    }
    let baseline = daily_window_cost(&cfg.prices, cfg.run_start_hour, &cfg.run_load_wh);
    let recommended = best.map_or(baseline, |(_, c)| c);
    ExpectedMetrics {
        best_hour: best.map(|(h, _)| h),
        baseline_cost_per_run: baseline,
        recommended_cost_per_run: recommended,
        relative_savings: if baseline == 0.0 { 0.0 } else { 1.0 - recommended / baseline },
    }
}

pub fn generate_synthetic(seed: u64, cfg: &SynthConfig) -> Result<SyntheticHousehold, EvalError> {
    cfg.validate().map_err(|detail| IngestError::Config {
        path: PathBuf::from("<synthetic>"),
        detail,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hours = cfg.days * HOURS_PER_DAY;
    let mut tv = Vec::with_capacity(hours);
    let mut wm = vec![Some(0.0); hours];
    for day in 0..cfg.days {
        let date = cfg.start + Duration::days(day as i64);
        for h in 0..HOURS_PER_DAY as u32 {
            let planted = cfg.availability.is_available(h);
            let on = planted ^ rng.gen_bool(cfg.availability_noise);
            tv.push(Some(if on { AVAILABILITY_WATTS } else { 0.0 }));
        }
        let used = cfg.usage.is_used(date) ^ rng.gen_bool(cfg.usage_noise);
        if used {
            for (j, l) in cfg.run_load_wh.iter().enumerate() {
                let factor = if cfg.load_noise > 0.0 {
                    rng.gen_range(1.0 - cfg.load_noise..=1.0 + cfg.load_noise)
                } else {
                    1.0
                };
                wm[day * HOURS_PER_DAY + cfg.run_start_hour as usize + j] = Some(l * factor);
            }
        }
    }
    let start = HourStamp::new(cfg.start, 0)?;
    let series = vec![
        HourlyLoadSeries::new(AVAILABILITY_DEVICE, start, tv)?,
        HourlyLoadSeries::new(SHIFTABLE_DEVICE, start, wm)?,
    ];

    let price_hours = hours + HOURS_PER_DAY;
    let prices = PriceCurve::new(
        (0..price_hours)
            .map(|i| (start.add_hours(i as i64), cfg.prices.price_at((i % HOURS_PER_DAY) as u32)))
            .collect(),
        PriceUnit::PerMwh.label(),
    )?;

    let config = HouseholdConfig {
        household: format!("synthetic-{seed}"),
        consumption_file: PathBuf::from("house.csv"),
        price_file: PathBuf::from("prices.csv"),
        price_unit: PriceUnit::PerMwh,
        max_gap_hours: crate::ingest::DEFAULT_MAX_GAP_HOURS,
        devices: vec![
            DeviceConfig {
                channel: 1,
                name: AVAILABILITY_DEVICE.into(),
                role: DeviceRole::Availability,
                on_threshold_watts: AVAILABILITY_THRESHOLD,
                duration_k: None,
            },
            DeviceConfig {
                channel: 2,
                name: SHIFTABLE_DEVICE.into(),
                role: DeviceRole::Shiftable,
                on_threshold_watts: SHIFTABLE_THRESHOLD,
                duration_k: None,
            },
        ],
    };

    Ok(SyntheticHousehold {
        seed,
        synth: cfg.clone(),
        config,
        consumption: ConsumptionData {
            series,
            rows_read: hours,
            malformed_rows: 0,
            backward_rows: 0,
        },
        prices,
        expected: expected_metrics(cfg),
    })
}

impl SyntheticHousehold {
    pub fn prepare(&self) -> Result<PreparedDataset, PrepareError> {
        prepare_household(&self.config, &self.consumption, self.prices.clone())
    }

    /// Write consumption, prices, household config and expected metrics into
    /// `dir`; returns the config path.
    pub fn write_files(&self, dir: &Path) -> Result<PathBuf, IngestError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| IngestError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        write_consumption_csv(&dir.join(&self.config.consumption_file), &self.consumption.series, &self.config)?;
        write_price_csv(&dir.join(&self.config.price_file), &self.prices)?;
        let config_path = dir.join("household.json");
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        fs::write(&config_path, json + "\n").map_err(io(&config_path))?;
        let expected_path = dir.join("expected.json");
        let json = serde_json::to_string_pretty(&self.expected).expect("metrics serialize");
        fs::write(&expected_path, json + "\n").map_err(io(&expected_path))?;
        Ok(config_path)
    }
}
