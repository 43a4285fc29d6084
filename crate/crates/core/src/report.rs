//! Comparison tables: a baseline's absolute metrics followed by each
//! method's percent reduction relative to it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{percent_reduction, GroupReports, MetricsReport};
use crate::predictions::GroupTag;

/// Metric columns in display order.
pub const METRICS: [Metric; 5] = [
    Metric::Nll,
    Metric::Brier,
    Metric::LabelError,
    Metric::Ece,
    Metric::E99,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Nll,
    Brier,
    LabelError,
    Ece,
    E99,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Nll => "NLL",
            Metric::Brier => "Brier",
            Metric::LabelError => "Label error",
            Metric::Ece => "ECE",
            Metric::E99 => "E99",
        }
    }

    pub fn value(self, r: &MetricsReport) -> Option<f64> {
        match self {
            Metric::Nll => Some(r.nll),
            Metric::Brier => Some(r.brier),
            Metric::LabelError => Some(r.label_error),
            Metric::Ece => Some(r.ece),
            Metric::E99 => r.e99,
        }
    }
}

/// Percent reductions per metric; `None` where the baseline value is zero
/// or a value is undefined (E99 with no qualifying predictions).
pub type Reductions = BTreeMap<Metric, Option<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub name: String,
    pub metrics: GroupReports,
    pub reductions: BTreeMap<GroupTag, Reductions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub groups: Vec<GroupTag>,
    pub baseline_name: String,
    pub baseline: GroupReports,
    pub methods: Vec<MethodRow>,
}

/// Nearest integer, halves away from zero.
pub fn round_percent(value: f64) -> i64 {
    value.round() as i64
}

fn reduction(baseline: Option<f64>, method: Option<f64>) -> Option<f64> {
    match (baseline, method) {
        (Some(b), Some(m)) if b > 0.0 => percent_reduction(b, m).ok(),
        _ => None,
    }
}

/// Builds the table, requiring every method to report exactly the
/// baseline's groups.
pub fn build_report(
    baseline_name: &str,
    baseline: &GroupReports,
    methods: &[(String, GroupReports)],
) -> Result<ReportTable> {
    if baseline.is_empty() {
        return Err(Error::Empty("baseline report"));
    }
    let groups: Vec<GroupTag> = baseline.keys().copied().collect();
    let mut rows = Vec::with_capacity(methods.len());
    for (name, reports) in methods {
        let theirs: Vec<GroupTag> = reports.keys().copied().collect();
        if theirs != groups {
            return Err(Error::invalid(format!(
                "method `{name}` reports groups {theirs:?}, baseline has {groups:?}"
            )));
        }
        let reductions = groups
            .iter()
            .map(|g| {
                let (b, m) = (&baseline[g], &reports[g]);
                let per_metric = METRICS
                    .iter()
                    .map(|&k| (k, reduction(k.value(b), k.value(m))))
                    .collect();
                (*g, per_metric)
            })
            .collect();
        rows.push(MethodRow {
            name: name.clone(),
            metrics: reports.clone(),
            reductions,
        });
    }
    Ok(ReportTable {
        groups,
        baseline_name: baseline_name.to_string(),
        baseline: baseline.clone(),
        methods: rows,
    })
}

impl ReportTable {
    /// Rounded reduction for display.
    pub fn rounded(&self, method: &str, group: GroupTag, metric: Metric) -> Option<i64> {
        self.methods
            .iter()
            .find(|m| m.name == method)
            .and_then(|m| m.reductions.get(&group))
            .and_then(|r| r.get(&metric).copied().flatten())
            .map(round_percent)
    }

    /// Markdown table: one column per (metric, group), absolute values on
    /// the baseline row and rounded percent reductions below it.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let mut header = String::from("| Method |");
        let mut rule = String::from("|---|");
        for m in METRICS {
            for g in &self.groups {
                let _ = write!(header, " {} ({}) |", m.label(), g);
                rule.push_str("---:|");
            }
        }
        let _ = writeln!(out, "{header}\n{rule}");
        let _ = write!(out, "| {} |", self.baseline_name);
        for m in METRICS {
            for g in &self.groups {
                match m.value(&self.baseline[g]) {
                    Some(v) => {
                        let _ = write!(out, " {v:.5} |");
                    }
                    None => out.push_str(" n/a |"),
                }
            }
        }
        out.push('\n');
        for row in &self.methods {
            let _ = write!(out, "| {} |", row.name);
            for m in METRICS {
                for g in &self.groups {
                    match row.reductions[g][&m] {
                        Some(v) => {
                            let _ = write!(out, " {}% |", round_percent(v));
                        }
                        None => out.push_str(" n/a |"),
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}
