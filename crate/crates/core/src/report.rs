//! Combined metric tables: one row per report, R@1 in the fixed
//! direction order followed by the three averages.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::compress::mean_std;
use crate::error::{Error, Result};
use crate::eval::{Direction, RetrievalReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
    /// Present when more than one row was supplied.
    pub mean: Option<TableRow>,
    pub std: Option<TableRow>,
}

/// Column headers: the 12 directions then `single`, `dual`, `all`.
pub fn columns() -> Vec<String> {
    Direction::ALL
        .iter()
        .map(|d| d.label())
        .chain(["single", "dual", "all"].map(String::from))
        .collect()
}

/// R@1 row in column order. Errors unless the report covers exactly the
/// 12 directions and includes R@1.
pub fn report_row(report: &RetrievalReport) -> Result<Vec<f64>> {
    let r1 = report
        .ks
        .iter()
        .position(|&k| k == 1)
        .ok_or_else(|| Error::InvalidArgument("report has no R@1".into()))?;
    if report.directions.len() != Direction::ALL.len() {
        return Err(Error::InvalidArgument(format!(
            "report has {} directions, expected {}",
            report.directions.len(),
            Direction::ALL.len()
        )));
    }
    let mut row = Vec::with_capacity(15);
    for d in Direction::ALL {
        let m = report
            .get(d)
            .ok_or_else(|| Error::InvalidArgument(format!("report lacks direction {d}")))?;
        row.push(m.recall[r1]);
    }
    row.extend([report.avg_single, report.avg_dual, report.avg_all]);
    Ok(row)
}

pub fn metrics_table(reports: &[(String, &RetrievalReport)]) -> Result<MetricsTable> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to tabulate".into()));
    }
    let rows = reports
        .iter()
        .map(|(label, r)| {
            Ok(TableRow {
                label: label.clone(),
                values: report_row(r)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = if rows.len() > 1 {
        let stats: Vec<(f64, f64)> = (0..rows[0].values.len())
            .map(|c| mean_std(rows.iter().map(|r| r.values[c])))
            .collect();
        (
            Some(TableRow {
                label: "mean".into(),
                values: stats.iter().map(|s| s.0).collect(),
            }),
            Some(TableRow {
                label: "std".into(),
                values: stats.iter().map(|s| s.1).collect(),
            }),
        )
    } else {
        (None, None)
    };
    Ok(MetricsTable {
        columns: columns(),
        rows,
        mean,
        std,
    })
}

impl MetricsTable {
    pub fn data_rows(&self) -> impl Iterator<Item = &TableRow> {
        self.rows.iter().chain(self.mean.iter()).chain(self.std.iter())
    }

    /// Fixed-width text rendering, two decimals.
    pub fn render(&self) -> String {
        let label_w = self.data_rows().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        write!(out, "{:<label_w$}", "").expect("string write");
        for c in &self.columns {
            write!(out, " {c:>7}").expect("string write");
        }
        out.push('\n');
        for row in self.data_rows() {
            write!(out, "{:<label_w$}", row.label).expect("string write");
            for v in &row.values {
                write!(out, " {v:>7.2}").expect("string write");
            }
            out.push('\n');
        }
        out
    }
}
