//! Long-format plot tables: one row per `(variant, seed, m)` plus an across-seed
//! aggregate with mean and standard deviation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RegretReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    PrefixDr,
    PrefixCv,
    MuPath,
    /// Final `DR(M)` per report, keyed by the measured `B_delta`.
    BudgetSweep,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [PlotKind::PrefixDr, PlotKind::PrefixCv, PlotKind::MuPath, PlotKind::BudgetSweep];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::PrefixDr => "prefix_dr",
            PlotKind::PrefixCv => "prefix_cv",
            PlotKind::MuPath => "mu_path",
            PlotKind::BudgetSweep => "budget_sweep",
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown plot kind `{s}`")))
    }
}

/// A report tagged with the series it belongs to.
#[derive(Debug, Clone, Copy)]
pub struct LabeledReport<'a> {
    pub variant: &'a str,
    pub seed: u64,
    pub report: &'a RegretReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub variant: String,
    pub seed: u64,
    /// Measured `B_delta` of the report's sequence (NaN when unknown).
    pub key: f64,
    pub m: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: String,
    pub key: f64,
    pub m: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub kind: PlotKind,
    pub rows: Vec<PlotRow>,
    pub aggregate: Vec<AggregateRow>,
}

/// Mean and sample standard deviation (`n - 1` denominator, 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn measured_key(r: &RegretReport) -> f64 {
    r.budgets.as_ref().map_or(f64::NAN, |b| b.b_delta)
}

pub fn emit_plotdata(reports: &[LabeledReport<'_>], kind: PlotKind) -> Result<PlotTable> {
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.variant) {
            order.push(r.variant);
        }
    }
    let mut rows = Vec::new();
    let mut aggregate = Vec::new();
    if kind == PlotKind::BudgetSweep {
        for r in reports {
            let key = measured_key(r.report);
            if key.is_nan() {
                return Err(Error::InvalidInput(format!(
                    "budget_sweep needs measured budgets (variant {}, seed {})",
                    r.variant, r.seed
                )));
            }
            rows.push(PlotRow {
                variant: r.variant.to_string(),
                seed: r.seed,
                key,
                m: r.report.episodes(),
                value: r.report.dr,
            });
        }
        for v in &order {
            let group: Vec<&PlotRow> = rows.iter().filter(|row| row.variant == *v).collect();
            let keys: Vec<f64> = group.iter().map(|row| row.key).collect();
            let vals: Vec<f64> = group.iter().map(|row| row.value).collect();
            let (mean, std) = mean_std(&vals);
            aggregate.push(AggregateRow {
                variant: v.to_string(),
                key: mean_std(&keys).0,
                m: group[0].m,
                mean,
                std,
                n: group.len(),
            });
        }
        return Ok(PlotTable { kind, rows, aggregate });
    }

    if let Some(first) = reports.first() {
        let len = first.report.episodes();
        if let Some(bad) = reports.iter().find(|r| r.report.episodes() != len) {
            return Err(Error::Shape(format!(
                "episode grids differ: {} vs {} (variant {}, seed {})",
                len,
                bad.report.episodes(),
                bad.variant,
                bad.seed
            )));
        }
    }
    let series = |r: &RegretReport| -> Vec<f64> {
        match kind {
            PlotKind::PrefixDr => r.prefix_dr(),
            PlotKind::PrefixCv => r.prefix_cv(),
            PlotKind::MuPath => r.mu_path(),
            PlotKind::BudgetSweep => unreachable!(),
        }
    };
    let all: Vec<Vec<f64>> = reports.iter().map(|r| series(r.report)).collect();
    for (r, s) in reports.iter().zip(&all) {
        let key = measured_key(r.report);
        rows.extend(s.iter().enumerate().map(|(i, &value)| PlotRow {
            variant: r.variant.to_string(),
            seed: r.seed,
            key,
            m: i + 1,
            value,
        }));
    }
    for v in &order {
        let members: Vec<usize> = (0..reports.len()).filter(|&i| reports[i].variant == *v).collect();
        let keys: Vec<f64> = members.iter().map(|&i| measured_key(reports[i].report)).collect();
        let key = mean_std(&keys).0;
        let len = all[members[0]].len();
        for m in 0..len {
            let vals: Vec<f64> = members.iter().map(|&i| all[i][m]).collect();
            let (mean, std) = mean_std(&vals);
            aggregate.push(AggregateRow {
                variant: v.to_string(),
                key,
                m: m + 1,
                mean,
                std,
                n: vals.len(),
            });
        }
    }
    Ok(PlotTable { kind, rows, aggregate })
}

impl PlotTable {
    /// Write `<kind>.csv` and `<kind>_agg.csv` into `dir`; returns both paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let long = dir.join(format!("{}.csv", self.kind.name()));
        let agg = dir.join(format!("{}_agg.csv", self.kind.name()));
        let mut w = csv::Writer::from_path(&long)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(&agg)?;
        for r in &self.aggregate {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok((long, agg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_basics() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
