//! CSV and JSON writers for recommendations and reports.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::core::Recommendation;

use super::coldstart::{ColdStartCurve, ColdStartResult};
use super::grid::SensitivityRow;
use super::report::HouseholdReport;

pub const UNDEFINED: &str = "undefined";
pub const UNSOLVED: &str = "unsolved";

pub fn fmt_metric(value: Option<f64>) -> String {
    value.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
}

pub fn fmt_days(value: Option<usize>) -> String {
    value.map_or_else(|| UNSOLVED.to_string(), |v| v.to_string())
}

fn fmt_hour(value: Option<u32>) -> String {
    value.map_or_else(|| "no".to_string(), |h| h.to_string())
}

fn create(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()
}

pub fn write_recommendations(out: &mut impl Write, recs: &[Recommendation]) -> io::Result<()> {
    writeln!(
        out,
        "recommendation_date,device,best_hour,availability_flag,usage_flag,final_recommendation"
    )?;
    for r in recs {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.date,
            r.device,
            r.best_hour.map_or_else(String::new, |h| h.to_string()),
            r.availability_flag as u8,
            r.usage_flag as u8,
            fmt_hour(r.final_hour)
        )?;
    }
    Ok(())
}

pub fn write_recommendations_csv(path: &Path, recs: &[Recommendation]) -> io::Result<()> {
    let mut out = create(path)?;
    write_recommendations(&mut out, recs)?;
    out.flush()
}

/// One row per household with the recommender metrics.
pub fn write_report_csv(path: &Path, reports: &[HouseholdReport]) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(
        out,
        "household,availability_th,usage_th,availability_auc,n_recs,n_acceptable,acceptable_rate,\
         n_savings_eligible,n_without_run,baseline_cost,recommended_cost,total_savings,relative_savings"
    )?;
    for r in reports {
        let m = &r.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.household,
            r.thresholds.availability,
            r.thresholds.usage,
            fmt_metric(r.availability_auc),
            m.n_recommendations,
            m.n_acceptable,
            fmt_metric(m.acceptable_rate),
            m.n_savings_eligible,
            m.n_without_run,
            m.baseline_cost,
            m.recommended_cost,
            m.total_savings,
            fmt_metric(m.relative_savings)
        )?;
    }
    out.flush()
}

/// Long format: household, agent, device, metric, value.
pub fn write_agent_scores_csv(path: &Path, reports: &[HouseholdReport]) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "household,agent,device,metric,value")?;
    for r in reports {
        writeln!(out, "{},availability,,auc,{}", r.household, fmt_metric(r.availability_auc))?;
        for (device, v) in &r.usage_auc {
            writeln!(out, "{},usage,{device},auc,{}", r.household, fmt_metric(*v))?;
        }
        for (device, v) in &r.load_mse {
            writeln!(out, "{},load,{device},mse,{}", r.household, fmt_metric(*v))?;
        }
    }
    out.flush()
}

pub fn write_sensitivity_csv(path: &Path, table: &[SensitivityRow]) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(
        out,
        "availability_th,usage_th,n_recs,acceptable_rate,total_savings,relative_savings"
    )?;
    for row in table {
        let m = &row.metrics;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            row.thresholds.availability,
            row.thresholds.usage,
            m.n_recommendations,
            fmt_metric(m.acceptable_rate),
            m.total_savings,
            fmt_metric(m.relative_savings)
        )?;
    }
    out.flush()
}

/// One row: tolerance, then a column per agent and the framework value.
pub fn write_coldstart_csv(path: &Path, household: &str, result: &ColdStartResult) -> io::Result<()> {
    let mut header = vec!["household".to_string(), "tolerance".into(), "availability".into()];
    let mut row = vec![household.to_string(), result.tolerance.to_string(), fmt_days(result.availability)];
    for (device, v) in &result.usage {
        header.push(format!("usage_{device}"));
        row.push(fmt_days(*v));
    }
    for (device, v) in &result.load {
        header.push(format!("load_{device}"));
        row.push(fmt_days(*v));
    }
    header.push("framework".into());
    row.push(fmt_days(result.framework));
    let mut out = create(path)?;
    writeln!(out, "{}", header.join(","))?;
    writeln!(out, "{}", row.join(","))?;
    out.flush()
}

pub fn write_curves_csv(path: &Path, curves: &[ColdStartCurve]) -> io::Result<()> {
    let mut out = create(path)?;
    writeln!(out, "agent,device,train_days,test_days,score")?;
    for c in curves {
        for (l, s) in c.lengths.iter().zip(&c.scores) {
            writeln!(
                out,
                "{},{},{l},{},{}",
                c.family.label(),
                c.device.as_deref().unwrap_or(""),
                c.test_days,
                fmt_metric(*s)
            )?;
        }
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use std::collections::BTreeMap;

    #[test]
    fn recommendation_table_layout() {
        let date = NaiveDate::from_ymd_opt(2014, 6, 3).unwrap();
        let recs = vec![
            Recommendation {
                date,
                device: "dishwasher".into(),
                best_hour: Some(8),
                availability_flag: false,
                usage_flag: true,
                final_hour: None,
                estimated_cost: Some(1.0),
            },
            Recommendation {
                date,
                device: "washing_machine".into(),
                best_hour: Some(8),
                availability_flag: false,
                usage_flag: false,
                final_hour: Some(8),
                estimated_cost: Some(1.0),
            },
        ];
        let mut buf = Vec::new();
        write_recommendations(&mut buf, &recs).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "recommendation_date,device,best_hour,availability_flag,usage_flag,final_recommendation\n\
             2014-06-03,dishwasher,8,0,1,no\n\
             2014-06-03,washing_machine,8,0,0,8\n"
        );
    }

    #[test]
    fn undefined_and_unsolved_cells() {
        assert_eq!(fmt_metric(None), "undefined");
        assert_eq!(fmt_metric(Some(0.25)), "0.25");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cs.csv");
        let result = ColdStartResult::from_parts(
            0.15,
            Some(10),
            BTreeMap::from([("wm".to_string(), None)]),
            BTreeMap::from([("wm".to_string(), Some(4))]),
        );
        write_coldstart_csv(&path, "h3", &result).unwrap();
        assert_eq!(
            std::fs::read_to_string(path).unwrap(),
            "household,tolerance,availability,usage_wm,load_wm,framework\nh3,0.15,10,unsolved,4,unsolved\n"
        );
    }
}
