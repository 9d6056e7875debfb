//! Threshold grid search and the sensitivity table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core::Thresholds;
use crate::prepare::PreparedDataset;

use super::report::{recommender_metrics, RecommenderMetrics, SavingsScope};
use super::{attach_recommendations, EvalError, ForecastTrace};

/// `{0.125 · i : i = 1..7}`.
pub fn default_grid() -> Vec<f64> {
    (1..=7).map(|i| 0.125 * i as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub thresholds: Thresholds,
    pub metrics: RecommenderMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: Thresholds,
    pub table: Vec<SensitivityRow>,
}

/// Cell with the largest total savings; ties go to the larger availability
/// threshold, then the larger usage threshold.
pub fn best_cell(table: &[SensitivityRow]) -> Option<Thresholds> {
    let key = |r: &SensitivityRow| (r.metrics.total_savings, r.thresholds.availability, r.thresholds.usage);
    table
        .iter()
        .max_by(|a, b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.total_cmp(&kb.2))
        })
        .map(|r| r.thresholds)
}

/// Evaluate every `(availability, usage)` cell on shared forecasts. The table
/// is ordered by availability threshold, then usage threshold, as given.
pub fn grid_search(
    dataset: &PreparedDataset,
    forecasts: &ForecastTrace,
    availability_grid: &[f64],
    usage_grid: &[f64],
    scope: SavingsScope,
) -> Result<GridResult, EvalError> {
    if availability_grid.is_empty() || usage_grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let cells: Vec<Thresholds> = availability_grid
        .iter()
        .flat_map(|&a| usage_grid.iter().map(move |&u| Thresholds::new(a, u)))
        .collect::<Result<_, _>>()?;
    let table: Vec<SensitivityRow> = cells
        .into_par_iter()
        .map(|thresholds| {
            let recs = attach_recommendations(dataset, forecasts, thresholds);
            SensitivityRow {
                thresholds,
                metrics: recommender_metrics(dataset, &recs, scope),
            }
        })
        .collect();
    let best = best_cell(&table).expect("grid non-empty");
    Ok(GridResult { best, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ModelConfig;
    use crate::eval::synth::{generate_synthetic, SynthConfig};
    use crate::eval::{run_forecasts, DateRange};
    use proptest::prelude::*;

    fn row(a: f64, u: f64, total: f64) -> SensitivityRow {
        SensitivityRow {
            thresholds: Thresholds::new(a, u).unwrap(),
            metrics: RecommenderMetrics {
                n_recommendations: 0,
                n_acceptable: 0,
                acceptable_rate: None,
                savings_scope: SavingsScope::AllEligible,
                n_savings_eligible: 0,
                n_without_run: 0,
                n_unpriced: 0,
                baseline_cost: 0.0,
                recommended_cost: 0.0,
                total_savings: total,
                relative_savings: None,
            },
        }
    }

    #[test]
    fn single_cell_and_ties() {
        assert_eq!(best_cell(&[row(0.3, 0.2, -5.0)]), Some(Thresholds::new(0.3, 0.2).unwrap()));
        let table = [row(0.25, 0.5, 10.0), row(0.5, 0.125, 10.0), row(0.5, 0.25, 10.0), row(0.75, 0.75, 3.0)];
        assert_eq!(best_cell(&table), Some(Thresholds::new(0.5, 0.25).unwrap()));
        assert_eq!(best_cell(&[]), None);
    }

    proptest! {
        #[test]
        fn best_matches_exhaustive_scan(totals in proptest::collection::vec(-3i32..3, 9)) {
            let grid = [0.25, 0.5, 0.75];
            let table: Vec<SensitivityRow> = grid
                .iter()
                .flat_map(|a| grid.iter().map(move |u| (*a, *u)))
                .zip(&totals)
                .map(|((a, u), t)| row(a, u, *t as f64))
                .collect();
            let mut oracle = None::<(f64, f64, f64)>;
            for r in &table {
                let cand = (r.metrics.total_savings, r.thresholds.availability, r.thresholds.usage);
                if oracle.is_none_or(|o| cand > o) {
                    oracle = Some(cand);
                }
            }
            let (_, a, u) = oracle.unwrap();
            prop_assert_eq!(best_cell(&table), Some(Thresholds::new(a, u).unwrap()));
        }
    }

    #[test]
    fn default_grid_on_synthetic_data() {
        let synth = generate_synthetic(3, &SynthConfig { days: 30, ..SynthConfig::default() }).unwrap();
        let data = synth.prepare().unwrap();
        let forecasts = run_forecasts(&data, DateRange::default(), &ModelConfig::default());
        let grid = default_grid();
        let result = grid_search(&data, &forecasts, &grid, &grid, SavingsScope::AllEligible).unwrap();
        assert_eq!(result.table.len(), 49);
        assert_eq!(Some(result.best), best_cell(&result.table));
        assert!(grid_search(&data, &forecasts, &[], &grid, SavingsScope::AllEligible).is_err());
    }
}
