//! Acceptability, cost savings and the household report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{
    ActivityMatrix, DailyUsageTargets, HourStamp, PriceCurve, Recommendation, Thresholds, UsageRun,
};
use crate::prepare::PreparedDataset;

use super::{AgentScores, RecommendationTrace};

/// Which final recommendations enter the savings sums.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SavingsScope {
    #[default]
    AllEligible,
    AcceptableOnly,
}

/// True iff the user was available at the recommended hour and the device was
/// used that day.
pub fn acceptability(rec: &Recommendation, matrix: &ActivityMatrix, targets: &DailyUsageTargets) -> bool {
    let Some(hour) = rec.final_hour else {
        return false;
    };
    matrix.get(rec.date, hour).unwrap_or(false) && targets.get(&rec.device, rec.date).unwrap_or(false)
}

/// Running count of final recommendations and acceptable ones.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceTally {
    pub recommendations: usize,
    pub acceptable: usize,
}

impl AcceptanceTally {
    /// Counts `rec` if it carries a final hour.
    pub fn push(&mut self, rec: &Recommendation, matrix: &ActivityMatrix, targets: &DailyUsageTargets) {
        if rec.final_hour.is_some() {
            self.recommendations += 1;
            self.acceptable += acceptability(rec, matrix, targets) as usize;
        }
    }

    pub fn rate(&self) -> Option<f64> {
        (self.recommendations > 0).then(|| self.acceptable as f64 / self.recommendations as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SavingsError {
    #[error("recommendation has no final hour")]
    NoFinalHour,
    #[error("device was not run on the recommendation day")]
    NoActualRun,
    #[error("no price for {0}")]
    MissingPrice(HourStamp),
}

/// `Σ_j p(start + j) · load_j`.
pub fn window_cost(prices: &PriceCurve, start: HourStamp, load: &[f64]) -> Result<f64, SavingsError> {
    let mut cost = 0.0;
    for (j, l) in load.iter().enumerate() {
        let stamp = start.add_hours(j as i64);
        cost += prices.get(stamp).ok_or(SavingsError::MissingPrice(stamp))? * l;
    }
    Ok(cost)
}

/// `(baseline_cost, recommended_cost)` for the day's first actual run moved to
/// the recommended hour.
pub fn savings(rec: &Recommendation, runs: &[UsageRun], prices: &PriceCurve) -> Result<(f64, f64), SavingsError> {
    let hour = rec.final_hour.ok_or(SavingsError::NoFinalHour)?;
    let run = runs
        .iter()
        .filter(|r| r.date() == rec.date && r.device == rec.device)
        .min_by_key(|r| r.start)
        .ok_or(SavingsError::NoActualRun)?;
    let baseline = window_cost(prices, run.start, &run.load)?;
    let start = HourStamp::new(rec.date, hour).expect("final hour below 24");
    let recommended = window_cost(prices, start, &run.load)?;
    Ok((baseline, recommended))
}

/// Threshold-dependent outcome of one recommendation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommenderMetrics {
    pub n_recommendations: usize,
    pub n_acceptable: usize,
    pub acceptable_rate: Option<f64>,
    pub savings_scope: SavingsScope,
    pub n_savings_eligible: usize,
    pub n_without_run: usize,
    pub n_unpriced: usize,
    pub baseline_cost: f64,
    pub recommended_cost: f64,
    pub total_savings: f64,
    /// `1 − recommended / baseline`; undefined when the baseline is zero.
    pub relative_savings: Option<f64>,
}

pub fn recommender_metrics(
    dataset: &PreparedDataset,
    recs: &RecommendationTrace,
    scope: SavingsScope,
) -> RecommenderMetrics {
    let mut tally = AcceptanceTally::default();
    let mut m = RecommenderMetrics {
        n_recommendations: 0,
        n_acceptable: 0,
        acceptable_rate: None,
        savings_scope: scope,
        n_savings_eligible: 0,
        n_without_run: 0,
        n_unpriced: 0,
        baseline_cost: 0.0,
        recommended_cost: 0.0,
        total_savings: 0.0,
        relative_savings: None,
    };
    for rec in recs.recommendations.iter().filter(|r| r.final_hour.is_some()) {
        tally.push(rec, &dataset.matrix, &dataset.usage_targets);
        let acceptable = acceptability(rec, &dataset.matrix, &dataset.usage_targets);
        if scope == SavingsScope::AcceptableOnly && !acceptable {
            continue;
        }
        match savings(rec, dataset.runs_for(&rec.device), &dataset.prices) {
            Ok((base, recommended)) => {
                m.n_savings_eligible += 1;
                m.baseline_cost += base;
                m.recommended_cost += recommended;
                m.total_savings += base - recommended;
            }
            Err(SavingsError::NoActualRun) => m.n_without_run += 1,
            Err(SavingsError::MissingPrice(_)) => m.n_unpriced += 1,
            Err(SavingsError::NoFinalHour) => unreachable!("filtered above"),
        }
    }
    m.n_recommendations = tally.recommendations;
    m.n_acceptable = tally.acceptable;
    m.acceptable_rate = tally.rate();
    m.relative_savings = (m.baseline_cost != 0.0).then(|| 1.0 - m.recommended_cost / m.baseline_cost);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdReport {
    pub household: String,
    pub thresholds: Thresholds,
    pub availability_auc: Option<f64>,
    pub usage_auc: BTreeMap<String, Option<f64>>,
    pub load_mse: BTreeMap<String, Option<f64>>,
    pub metrics: RecommenderMetrics,
}

pub fn aggregate_report(
    dataset: &PreparedDataset,
    recs: &RecommendationTrace,
    scores: &AgentScores,
    scope: SavingsScope,
) -> HouseholdReport {
    HouseholdReport {
        household: dataset.household.clone(),
        thresholds: recs.thresholds,
        availability_auc: scores.availability_auc,
        usage_auc: scores.usage_auc.clone(),
        load_mse: scores.load_mse.clone(),
        metrics: recommender_metrics(dataset, recs, scope),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2016, 3, 1).unwrap()
    }

    fn curve(prices: &[f64]) -> PriceCurve {
        let start = HourStamp::new(date(), 0).unwrap();
        PriceCurve::new(
            prices.iter().enumerate().map(|(i, p)| (start.add_hours(i as i64), *p)).collect(),
            "per_mwh",
        )
        .unwrap()
    }

    fn rec(final_hour: Option<u32>) -> Recommendation {
        Recommendation {
            date: date(),
            device: "wm".into(),
            best_hour: final_hour,
            availability_flag: false,
            usage_flag: final_hour.is_none(),
            final_hour,
            estimated_cost: None,
        }
    }

    fn run(start_hour: u32, load: Vec<f64>) -> UsageRun {
        UsageRun {
            device: "wm".into(),
            start: HourStamp::new(date(), start_hour).unwrap(),
            load,
            run_index_within_day: 0,
        }
    }

    #[test]
    fn acceptability_examples() {
        let mut matrix = ActivityMatrix::new();
        let mut hours = [false; 24];
        hours[8] = true;
        matrix.insert_day(date(), hours);
        let mut targets = DailyUsageTargets::new();
        targets.set("wm", date(), true);
        assert!(acceptability(&rec(Some(8)), &matrix, &targets));
        assert!(!acceptability(&rec(Some(9)), &matrix, &targets));
        targets.set("wm", date(), false);
        assert!(!acceptability(&rec(Some(8)), &matrix, &targets));
    }

    #[test]
    fn savings_examples() {
        let mut prices = vec![15.0; 30];
        prices[2] = 10.0;
        prices[3] = 10.0;
        prices[8] = 20.0;
        prices[9] = 20.0;
        let c = curve(&prices);
        let runs = vec![run(8, vec![1000.0, 1000.0])];
        let (base, recd) = savings(&rec(Some(2)), &runs, &c).unwrap();
        assert_eq!((base, recd), (40_000.0, 20_000.0));
        assert_eq!(base - recd, 20_000.0);

        let (base, recd) = savings(&rec(Some(8)), &runs, &c).unwrap();
        assert_eq!(base, recd);

        let flat = curve(&[7.0; 30]);
        let (base, recd) = savings(&rec(Some(15)), &runs, &flat).unwrap();
        assert_eq!(base, recd);

        assert_eq!(savings(&rec(Some(2)), &[], &c), Err(SavingsError::NoActualRun));
        assert_eq!(savings(&rec(None), &runs, &c), Err(SavingsError::NoFinalHour));
    }

    #[test]
    fn first_run_defines_baseline() {
        let mut prices = vec![10.0; 30];
        prices[5] = 50.0;
        let c = curve(&prices);
        let mut late = run(14, vec![100.0]);
        late.run_index_within_day = 1;
        let runs = vec![late, run(5, vec![100.0])];
        assert_eq!(savings(&rec(Some(0)), &runs, &c).unwrap(), (5000.0, 1000.0));
    }

    proptest! {
        #[test]
        fn streaming_tally_matches_batch(
            avail in proptest::collection::vec(any::<bool>(), 24),
            used in any::<bool>(),
            hours in proptest::collection::vec(proptest::option::of(0u32..24), 0..60),
        ) {
            let mut matrix = ActivityMatrix::new();
            let mut day = [false; 24];
            day.copy_from_slice(&avail);
            matrix.insert_day(date(), day);
            let mut targets = DailyUsageTargets::new();
            targets.set("wm", date(), used);
            let recs: Vec<Recommendation> = hours.iter().map(|h| rec(*h)).collect();

            let mut tally = AcceptanceTally::default();
            for r in &recs {
                tally.push(r, &matrix, &targets);
            }
            let finals: Vec<&Recommendation> = recs.iter().filter(|r| r.final_hour.is_some()).collect();
            let ok = finals
                .iter()
                .filter(|r| avail[r.final_hour.unwrap() as usize] && used)
                .count();
            prop_assert_eq!(tally.recommendations, finals.len());
            prop_assert_eq!(tally.acceptable, ok);
            let batch = (!finals.is_empty()).then(|| ok as f64 / finals.len() as f64);
            prop_assert_eq!(tally.rate(), batch);
        }
    }
}
