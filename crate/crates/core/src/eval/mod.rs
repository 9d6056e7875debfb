//! Day-by-day replay of the agents and the scores derived from it.

pub mod coldstart;
pub mod grid;
pub mod output;
pub mod report;
pub mod synth;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    availability_rows, forecast_availability_from_rows, forecast_usage_from_rows, recommend,
    usage_rows, AvailabilityForecast, LoadAgent, ModelConfig, SkippedDevice, UsageForecast,
};
use crate::core::{Recommendation, Thresholds, TypicalLoadProfile, HOURS_PER_DAY};
use crate::learn::{auc, load_mse, MseNormalization};
use crate::prepare::PreparedDataset;

pub use coldstart::{
    cold_start_curve, cold_start_days, cold_start_test_days, run_cold_start, AgentFamily,
    ColdStartCurve, ColdStartReport, ColdStartResult, Stability,
};
pub use grid::{best_cell, default_grid, grid_search, GridResult, SensitivityRow};
pub use report::{
    acceptability, aggregate_report, recommender_metrics, savings, AcceptanceTally,
    HouseholdReport, RecommenderMetrics, SavingsError, SavingsScope,
};
pub use synth::{generate_synthetic, ExpectedMetrics, Scenario, SynthConfig, SyntheticHousehold};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need more than {test} usable days for a cold-start curve, have {available}")]
    TooFewDays { available: usize, test: usize },
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error(transparent)]
    Core(#[from] crate::core::CoreError),
    #[error(transparent)]
    Prepare(#[from] crate::prepare::PrepareError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub model: ModelConfig,
    pub mse: MseNormalization,
    pub savings_scope: SavingsScope,
}

/// Inclusive date bounds; `None` leaves that side open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

impl DateRange {
    pub fn new(from: Option<NaiveDate>, to: Option<NaiveDate>) -> Self {
        Self { from, to }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.from.is_none_or(|f| date >= f) && self.to.is_none_or(|t| date <= t)
    }
}

/// Threshold-independent outputs of every agent for one day, next to the
/// targets they are scored against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayForecast {
    pub date: NaiveDate,
    pub availability: AvailabilityForecast,
    pub availability_targets: Vec<bool>,
    pub usage: BTreeMap<String, UsageForecast>,
    pub usage_targets: BTreeMap<String, bool>,
    pub profiles: BTreeMap<String, TypicalLoadProfile>,
    /// Date of the latest run folded into each profile.
    pub profile_through: BTreeMap<String, NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrace {
    pub household: String,
    pub days: Vec<DayForecast>,
}

impl ForecastTrace {
    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.days.iter().map(|d| d.date)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationTrace {
    pub thresholds: Thresholds,
    pub recommendations: Vec<Recommendation>,
    pub skipped: Vec<(NaiveDate, SkippedDevice)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub forecasts: ForecastTrace,
    pub recommendations: RecommendationTrace,
}

/// Replay availability, usage and load agents for every usable date in
/// `range`, training each only on data before the day it predicts.
pub fn run_forecasts(dataset: &PreparedDataset, range: DateRange, cfg: &ModelConfig) -> ForecastTrace {
    let history = dataset.usable_dates();
    let dates: Vec<NaiveDate> = history.iter().copied().filter(|d| range.contains(*d)).collect();
    let Some(&last) = dates.last() else {
        return ForecastTrace {
            household: dataset.household.clone(),
            days: Vec::new(),
        };
    };
    let history: Vec<NaiveDate> = history.into_iter().filter(|d| *d < last).collect();

    let matrix = &dataset.matrix;
    let avail_rows = availability_rows(matrix, &history, &cfg.features);
    let shiftable: Vec<_> = dataset.shiftable_devices().collect();
    let device_rows: Vec<_> = shiftable
        .iter()
        .map(|d| usage_rows(&dataset.usage_targets, matrix, &d.id, &history, &cfg.features))
        .collect();

    let mut agents: Vec<LoadAgent> = shiftable
        .iter()
        .map(|d| LoadAgent::new(&d.id, d.resolved_k().unwrap_or(0), dataset.runs_for(&d.id)))
        .collect();
    let profiles: Vec<(BTreeMap<String, TypicalLoadProfile>, BTreeMap<String, NaiveDate>)> = dates
        .iter()
        .map(|&date| {
            let mut profiles = BTreeMap::new();
            let mut through = BTreeMap::new();
            for (spec, agent) in shiftable.iter().zip(agents.iter_mut()) {
                if let Some(p) = agent.profile_before(date) {
                    profiles.insert(spec.id.clone(), p.clone());
                    through.insert(spec.id.clone(), agent.latest_run_date().expect("profile has runs"));
                }
            }
            (profiles, through)
        })
        .collect();

    let days = dates
        .par_iter()
        .zip(profiles)
        .map(|(&date, (profiles, profile_through))| {
            let availability = forecast_availability_from_rows(&avail_rows, matrix, &history, date, cfg);
            let availability_targets = (0..HOURS_PER_DAY as u32)
                .map(|h| matrix.get(date, h).unwrap_or(false))
                .collect();
            let mut usage = BTreeMap::new();
            let mut usage_targets = BTreeMap::new();
            for (spec, rows) in shiftable.iter().zip(&device_rows) {
                let f = forecast_usage_from_rows(
                    rows,
                    &dataset.usage_targets,
                    matrix,
                    &history,
                    &spec.id,
                    date,
                    cfg,
                );
                usage.insert(spec.id.clone(), f);
                usage_targets.insert(
                    spec.id.clone(),
                    dataset.usage_targets.get(&spec.id, date).unwrap_or(false),
                );
            }
            DayForecast {
                date,
                availability,
                availability_targets,
                usage,
                usage_targets,
                profiles,
                profile_through,
            }
        })
        .collect();

    ForecastTrace {
        household: dataset.household.clone(),
        days,
    }
}

/// Run the recommendation agent over precomputed forecasts.
pub fn attach_recommendations(
    dataset: &PreparedDataset,
    forecasts: &ForecastTrace,
    thresholds: Thresholds,
) -> RecommendationTrace {
    let mut recommendations = Vec::new();
    let mut skipped = Vec::new();
    for day in &forecasts.days {
        let out = recommend(
            day.date,
            &dataset.devices,
            &thresholds,
            &day.profiles,
            &dataset.prices,
            &day.availability,
            &day.usage,
        );
        recommendations.extend(out.recommendations);
        skipped.extend(out.skipped.into_iter().map(|s| (day.date, s)));
    }
    RecommendationTrace {
        thresholds,
        recommendations,
        skipped,
    }
}

pub fn run_pipeline(
    dataset: &PreparedDataset,
    thresholds: Thresholds,
    range: DateRange,
    cfg: &ModelConfig,
) -> PipelineTrace {
    let forecasts = run_forecasts(dataset, range, cfg);
    let recommendations = attach_recommendations(dataset, &forecasts, thresholds);
    PipelineTrace {
        forecasts,
        recommendations,
    }
}

/// A model or profile informed by data from its own prediction day or later.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub date: NaiveDate,
    pub agent: String,
    pub trained_through: NaiveDate,
}

pub fn leakage_audit(trace: &ForecastTrace) -> Vec<LeakageViolation> {
    let mut out = Vec::new();
    let mut check = |date: NaiveDate, agent: String, through: Option<NaiveDate>| {
        if let Some(t) = through.filter(|t| *t >= date) {
            out.push(LeakageViolation {
                date,
                agent,
                trained_through: t,
            });
        }
    };
    for day in &trace.days {
        check(day.date, "availability".into(), day.availability.trained_through);
        for (device, f) in &day.usage {
            check(day.date, format!("usage:{device}"), f.trained_through);
        }
        for (device, t) in &day.profile_through {
            check(day.date, format!("load:{device}"), Some(*t));
        }
    }
    out
}

/// Pooled per-agent scores; `None` marks an undefined metric.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentScores {
    pub availability_auc: Option<f64>,
    pub usage_auc: BTreeMap<String, Option<f64>>,
    pub load_mse: BTreeMap<String, Option<f64>>,
}

pub fn score_agents(
    dataset: &PreparedDataset,
    trace: &ForecastTrace,
    normalization: MseNormalization,
) -> AgentScores {
    let (scores, labels): (Vec<f64>, Vec<bool>) = trace
        .days
        .iter()
        .flat_map(|d| {
            d.availability
                .probabilities
                .iter()
                .copied()
                .zip(d.availability_targets.iter().copied())
        })
        .unzip();
    let availability_auc = auc(&scores, &labels).ok();

    let mut usage_auc = BTreeMap::new();
    let mut mse = BTreeMap::new();
    for spec in dataset.shiftable_devices() {
        let (scores, labels): (Vec<f64>, Vec<bool>) = trace
            .days
            .iter()
            .filter_map(|d| Some((d.usage.get(&spec.id)?.probability, *d.usage_targets.get(&spec.id)?)))
            .unzip();
        usage_auc.insert(spec.id.clone(), auc(&scores, &labels).ok());

        let profiles: BTreeMap<NaiveDate, TypicalLoadProfile> = trace
            .days
            .iter()
            .filter_map(|d| Some((d.date, d.profiles.get(&spec.id)?.clone())))
            .collect();
        let runs: Vec<_> = dataset
            .runs_for(&spec.id)
            .iter()
            .filter(|r| profiles.contains_key(&r.date()))
            .cloned()
            .collect();
        mse.insert(spec.id.clone(), load_mse(&runs, &profiles, normalization).ok());
    }
    AgentScores {
        availability_auc,
        usage_auc,
        load_mse: mse,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synth::{AvailabilityPattern, UsageSchedule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn evening_household(days: usize) -> SyntheticHousehold {
        let cfg = SynthConfig {
            days,
            availability: AvailabilityPattern::Hours { from: 17, to: 22 },
            availability_noise: 0.05,
            usage: UsageSchedule::Weekdays(vec![5]),
            usage_noise: 0.05,
            ..SynthConfig::default()
        };
        generate_synthetic(11, &cfg).unwrap()
    }

    #[test]
    fn trace_sizes_and_empty_range() {
        let synth = evening_household(40);
        let data = synth.prepare().unwrap();
        let dates = data.usable_dates();
        let range = DateRange::new(Some(dates[20]), Some(dates[29]));
        let trace = run_pipeline(&data, Thresholds::default(), range, &ModelConfig::default());
        assert_eq!(trace.forecasts.days.len(), 10);
        let predictions: usize = trace
            .forecasts
            .days
            .iter()
            .map(|d| d.availability.probabilities.len())
            .sum();
        assert!(predictions <= 240);
        for d in &trace.forecasts.days {
            assert_eq!(d.availability.probabilities.len(), d.availability_targets.len());
            assert!(d.usage.keys().eq(d.usage_targets.keys()));
        }

        let empty = DateRange::new(Some(dates[5]), Some(dates[4]));
        let trace = run_pipeline(&data, Thresholds::default(), empty, &ModelConfig::default());
        assert!(trace.forecasts.days.is_empty());
        assert!(trace.recommendations.recommendations.is_empty());
    }

    #[test]
    fn no_leakage_over_synthetic_trace() {
        let synth = evening_household(100);
        let data = synth.prepare().unwrap();
        let trace = run_forecasts(&data, DateRange::default(), &ModelConfig::default());
        assert_eq!(trace.days.len(), 100);
        assert!(leakage_audit(&trace).is_empty());
        assert!(trace.days.iter().any(|d| !d.availability.fallback));
    }

    #[test]
    fn final_count_matches_flags() {
        let synth = evening_household(60);
        let data = synth.prepare().unwrap();
        let trace = run_pipeline(&data, Thresholds::new(0.5, 0.3).unwrap(), DateRange::default(), &ModelConfig::default());
        let recs = &trace.recommendations.recommendations;
        let finals = recs.iter().filter(|r| r.final_hour.is_some()).count();
        let clear = recs.iter().filter(|r| !r.availability_flag && !r.usage_flag).count();
        assert_eq!(finals, clear);
        assert!(recs.iter().all(Recommendation::is_consistent));
    }

    #[test]
    fn scores_are_defined_on_learnable_data() {
        let synth = evening_household(90);
        let data = synth.prepare().unwrap();
        let trace = run_forecasts(&data, DateRange::default(), &ModelConfig::default());
        let scores = score_agents(&data, &trace, MseNormalization::default());
        assert!(scores.availability_auc.unwrap() > 0.8);
        assert!(scores.usage_auc.values().all(|v| v.is_some()));
        assert!(scores.load_mse.values().all(|v| v.unwrap() >= 0.0));
    }

    #[test]
    fn shuffled_labels_score_near_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<f64> = (0..1000).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = (0..1000).map(|_| rng.gen_bool(0.5)).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() <= 0.05, "{a}");
    }
}
