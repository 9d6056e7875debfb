//! Cold-start curves and the number of training days until scores settle.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{availability_rows, usage_rows, ModelConfig};
use crate::core::TypicalLoadProfile;
use crate::learn::{auc, normalized_distance, train_logistic_iter};
use crate::prepare::{FeatureRow, PreparedDataset};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentFamily {
    Availability,
    Usage,
    Load,
}

impl AgentFamily {
    pub fn label(self) -> &'static str {
        match self {
            AgentFamily::Availability => "availability",
            AgentFamily::Usage => "usage",
            AgentFamily::Load => "load",
        }
    }
}

/// How a score is judged stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    /// `|s − max| ≤ tol`.
    AucAbsolute,
    /// `|s − max| ≤ tol · max`.
    AucRelative,
    /// `s ≤ tol`.
    Load,
}

/// Score for each training length; `scores[i]` belongs to `lengths[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartCurve {
    pub family: AgentFamily,
    pub device: Option<String>,
    pub test_days: usize,
    pub lengths: Vec<usize>,
    pub scores: Vec<Option<f64>>,
}

/// Size of the fixed test window for `n` usable days: 20 % of the days, but
/// at least 30.
pub fn cold_start_test_days(n: usize) -> usize {
    ((n as f64 * 0.2).ceil() as usize).max(30)
}

/// Smallest training length from which every defined score satisfies the
/// stability condition, counted from 1. Undefined scores are skipped and
/// never start a stable stretch. `None` when no such length exists.
pub fn cold_start_days(scores: &[Option<f64>], tolerance: f64, stability: Stability) -> Option<usize> {
    let best = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let ok = |s: f64| match stability {
        Stability::AucAbsolute => (s - best).abs() <= tolerance,
        Stability::AucRelative => (s - best).abs() <= tolerance * best.abs(),
        Stability::Load => s <= tolerance,
    };
    let mut answer = None;
    for (i, s) in scores.iter().enumerate().rev() {
        match s {
            Some(s) if ok(*s) => answer = Some(i + 1),
            Some(_) => break,
            None => {}
        }
    }
    answer
}

fn split_dates(dataset: &PreparedDataset) -> Result<(Vec<NaiveDate>, Vec<NaiveDate>), EvalError> {
    let dates = dataset.usable_dates();
    let test = cold_start_test_days(dates.len());
    if dates.len() <= test {
        return Err(EvalError::TooFewDays {
            available: dates.len(),
            test,
        });
    }
    let (train, test) = dates.split_at(dates.len() - test);
    Ok((train.to_vec(), test.to_vec()))
}

fn auc_curve(train_rows: &[FeatureRow], test_rows: &[FeatureRow], train_dates: &[NaiveDate], cfg: &ModelConfig) -> Vec<Option<f64>> {
    let labels: Vec<bool> = test_rows.iter().map(|r| r.label).collect();
    (1..=train_dates.len())
        .into_par_iter()
        .map(|l| {
            let cutoff = train_dates[l - 1];
            let end = train_rows.partition_point(|r| r.key.date <= cutoff);
            let model = train_logistic_iter(&train_rows[..end], &cfg.logistic).ok()?;
            if model.meta.degenerate {
                return None;
            }
            let scores: Vec<f64> = test_rows
                .iter()
                .map(|r| model.predict_proba(&r.features))
                .collect::<Result<_, _>>()
                .ok()?;
            auc(&scores, &labels).ok()
        })
        .collect()
}

/// Scores of one agent for training lengths `1..=N−T` on the fixed test
/// window of the last `T` usable days. For the load agent the score is the
/// normalized distance to the profile over all runs.
pub fn cold_start_curve(
    dataset: &PreparedDataset,
    family: AgentFamily,
    device: Option<&str>,
    cfg: &ModelConfig,
) -> Result<ColdStartCurve, EvalError> {
    let (train_dates, test_dates) = split_dates(dataset)?;
    let device_id = match (family, device) {
        (AgentFamily::Availability, _) => None,
        (_, Some(d)) if dataset.device(d).is_some_and(|s| s.role.is_shiftable()) => Some(d.to_string()),
        (_, d) => return Err(EvalError::UnknownDevice(d.unwrap_or_default().to_string())),
    };
    let scores = match family {
        AgentFamily::Availability => {
            let train = availability_rows(&dataset.matrix, &train_dates, &cfg.features);
            let test = availability_rows(&dataset.matrix, &test_dates, &cfg.features);
            auc_curve(&train, &test, &train_dates, cfg)
        }
        AgentFamily::Usage => {
            let id = device_id.as_deref().expect("checked above");
            let rows = |dates: &[NaiveDate]| usage_rows(&dataset.usage_targets, &dataset.matrix, id, dates, &cfg.features);
            auc_curve(&rows(&train_dates), &rows(&test_dates), &train_dates, cfg)
        }
        AgentFamily::Load => {
            let id = device_id.as_deref().expect("checked above");
            let k = dataset.device(id).expect("checked above").resolved_k()?;
            let runs = dataset.runs_for(id);
            let mut full = TypicalLoadProfile::empty(id, k);
            runs.iter().for_each(|r| full.push(&r.load));
            let mut profile = TypicalLoadProfile::empty(id, k);
            let mut next = 0;
            train_dates
                .iter()
                .map(|&cutoff| {
                    while next < runs.len() && runs[next].date() <= cutoff {
                        profile.push(&runs[next].load);
                        next += 1;
                    }
                    if profile.is_empty() {
                        return None;
                    }
                    normalized_distance(&profile.values, &full.values).ok()
                })
                .collect()
        }
    };
    Ok(ColdStartCurve {
        family,
        device: device_id,
        test_days: test_dates.len(),
        lengths: (1..=train_dates.len()).collect(),
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartResult {
    pub tolerance: f64,
    pub availability: Option<usize>,
    pub usage: BTreeMap<String, Option<usize>>,
    pub load: BTreeMap<String, Option<usize>>,
    /// Largest agent value; `None` if any agent never settles.
    pub framework: Option<usize>,
}

impl ColdStartResult {
    pub fn from_parts(
        tolerance: f64,
        availability: Option<usize>,
        usage: BTreeMap<String, Option<usize>>,
        load: BTreeMap<String, Option<usize>>,
    ) -> Self {
        let framework = std::iter::once(availability)
            .chain(usage.values().copied())
            .chain(load.values().copied())
            .try_fold(0usize, |acc, v| v.map(|v| acc.max(v)));
        Self {
            tolerance,
            availability,
            usage,
            load,
            framework,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartReport {
    pub household: String,
    pub result: ColdStartResult,
    pub curves: Vec<ColdStartCurve>,
}

/// Curves and cold-start days for every agent of a household.
pub fn run_cold_start(
    dataset: &PreparedDataset,
    tolerance: f64,
    auc_stability: Stability,
    cfg: &ModelConfig,
) -> Result<ColdStartReport, EvalError> {
    let mut curves = vec![cold_start_curve(dataset, AgentFamily::Availability, None, cfg)?];
    for spec in dataset.shiftable_devices() {
        curves.push(cold_start_curve(dataset, AgentFamily::Usage, Some(&spec.id), cfg)?);
        curves.push(cold_start_curve(dataset, AgentFamily::Load, Some(&spec.id), cfg)?);
    }
    let mut availability = None;
    let mut usage = BTreeMap::new();
    let mut load = BTreeMap::new();
    for c in &curves {
        match c.family {
            AgentFamily::Availability => availability = cold_start_days(&c.scores, tolerance, auc_stability),
            AgentFamily::Usage => {
                usage.insert(c.device.clone().unwrap(), cold_start_days(&c.scores, tolerance, auc_stability));
            }
            AgentFamily::Load => {
                load.insert(c.device.clone().unwrap(), cold_start_days(&c.scores, tolerance, Stability::Load));
            }
        }
    }
    Ok(ColdStartReport {
        household: dataset.household.clone(),
        result: ColdStartResult::from_parts(tolerance, availability, usage, load),
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::synth::{generate_synthetic, AvailabilityPattern, SynthConfig, UsageSchedule};
    use proptest::prelude::*;

    fn brute_force(scores: &[Option<f64>], tol: f64, stability: Stability) -> Option<usize> {
        let defined: Vec<f64> = scores.iter().flatten().copied().collect();
        let best = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let holds = |s: f64| match stability {
            Stability::AucAbsolute => (s - best).abs() <= tol,
            Stability::AucRelative => (s - best).abs() <= tol * best.abs(),
            Stability::Load => s <= tol,
        };
        (0..scores.len())
            .find(|&l| scores[l].is_some() && scores[l..].iter().flatten().all(|s| holds(*s)))
            .map(|l| l + 1)
    }

    #[test]
    fn examples() {
        let constant = vec![Some(0.7); 10];
        assert_eq!(cold_start_days(&constant, 0.15, Stability::AucAbsolute), Some(1));
        let mut last_bad = vec![Some(0.9); 10];
        last_bad[9] = Some(0.5);
        assert_eq!(cold_start_days(&last_bad, 0.15, Stability::AucAbsolute), None);
        let load = [Some(0.9), Some(0.4), Some(0.1), None, Some(0.05)];
        assert_eq!(cold_start_days(&load, 0.15, Stability::Load), Some(3));
        let leading_gap = [None, None, Some(0.8), Some(0.8)];
        assert_eq!(cold_start_days(&leading_gap, 0.15, Stability::AucAbsolute), Some(3));
        assert_eq!(cold_start_days(&[None, None], 0.15, Stability::Load), None);
    }

    proptest! {
        #[test]
        fn scan_matches_brute_force(
            scores in proptest::collection::vec(proptest::option::weighted(0.9, 0.0f64..1.0), 1..60),
            tol in 0.0f64..0.5,
        ) {
            for st in [Stability::AucAbsolute, Stability::AucRelative, Stability::Load] {
                prop_assert_eq!(cold_start_days(&scores, tol, st), brute_force(&scores, tol, st));
            }
        }
    }

    #[test]
    fn framework_is_max_or_unsolved() {
        let usage = BTreeMap::from([("a".to_string(), Some(12)), ("b".to_string(), Some(40))]);
        let load = BTreeMap::from([("a".to_string(), Some(3))]);
        let r = ColdStartResult::from_parts(0.15, Some(20), usage.clone(), load);
        assert_eq!(r.framework, Some(40));
        let r = ColdStartResult::from_parts(0.15, Some(20), usage, BTreeMap::from([("a".to_string(), None)]));
        assert_eq!(r.framework, None);
    }

    #[test]
    fn test_window_size() {
        assert_eq!(cold_start_test_days(100), 30);
        assert_eq!(cold_start_test_days(151), 31);
        assert_eq!(cold_start_test_days(730), 146);
    }

    #[test]
    fn load_curve_matches_direct_formula() {
        let cfg = SynthConfig {
            days: 60,
            run_load_wh: vec![1500.0, 700.0],
            load_noise: 0.3,
            ..SynthConfig::default()
        };
        let data = generate_synthetic(8, &cfg).unwrap().prepare().unwrap();
        let curve = cold_start_curve(&data, AgentFamily::Load, Some("washing_machine"), &ModelConfig::default()).unwrap();
        assert_eq!(curve.lengths.len(), 30);
        let runs = data.runs_for("washing_machine");
        let n = runs.len() as f64;
        let mean: Vec<f64> = (0..2).map(|j| runs.iter().map(|r| r.load[j]).sum::<f64>() / n).collect();
        let first = &runs[0].load;
        let num = ((first[0] - mean[0]).powi(2) + (first[1] - mean[1]).powi(2)).sqrt();
        let den = (mean[0].powi(2) + mean[1].powi(2)).sqrt();
        assert!((curve.scores[0].unwrap() - num / den).abs() < 1e-12);

        let train_end = data.usable_dates()[29];
        let early: Vec<_> = runs.iter().filter(|r| r.date() <= train_end).collect();
        let m = early.len() as f64;
        let partial: Vec<f64> = (0..2).map(|j| early.iter().map(|r| r.load[j]).sum::<f64>() / m).collect();
        let num = ((partial[0] - mean[0]).powi(2) + (partial[1] - mean[1]).powi(2)).sqrt();
        assert!((curve.scores[29].unwrap() - num / den).abs() < 1e-12);
    }

    #[test]
    fn availability_curve_improves_with_data() {
        let cfg = SynthConfig {
            days: 120,
            availability: AvailabilityPattern::Hours { from: 17, to: 22 },
            availability_noise: 0.1,
            usage: UsageSchedule::Weekdays(vec![5, 6]),
            ..SynthConfig::default()
        };
        let data = generate_synthetic(4, &cfg).unwrap().prepare().unwrap();
        let report = run_cold_start(&data, 0.15, Stability::AucAbsolute, &ModelConfig::default()).unwrap();
        let avail = &report.curves[0];
        assert_eq!(avail.test_days, 30);
        let defined: Vec<f64> = avail.scores.iter().flatten().copied().collect();
        assert!(defined.last().unwrap() > &0.8);
        assert!(report.result.availability.is_some());
        assert_eq!(report.curves.len(), 3);
    }

    #[test]
    fn too_short_history_is_an_error() {
        let data = generate_synthetic(1, &SynthConfig { days: 30, ..SynthConfig::default() })
            .unwrap()
            .prepare()
            .unwrap();
        assert!(matches!(
            cold_start_curve(&data, AgentFamily::Availability, None, &ModelConfig::default()),
            Err(EvalError::TooFewDays { .. })
        ));
    }
}
