//! Per-group evaluation. Each group's anomalous windows are scored against
//! the full set of negative windows, under the global threshold.

use serde::{Deserialize, Serialize};

use super::{evaluate, is_positive, MetricsReport};
use crate::detect::ScoredWindow;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub anomalous_windows: usize,
    /// `None` when the group has at most one anomalous window.
    pub report: Option<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub rows: Vec<GroupRow>,
    /// Unweighted mean over reportable groups.
    pub average: Option<MetricsReport>,
}

pub fn stratified_eval(windows: &[ScoredWindow]) -> Result<StratifiedReport> {
    let mut groups: Vec<String> = windows
        .iter()
        .filter(|w| w.label.is_some_and(is_positive))
        .filter_map(|w| w.group.clone())
        .collect();
    groups.sort();
    groups.dedup();
    if groups.is_empty() {
        return Err(Error::InvalidArgument(
            "no grouped anomalous windows to stratify".into(),
        ));
    }
    let negatives: Vec<&ScoredWindow> = windows
        .iter()
        .filter(|w| w.label.is_some_and(|l| !is_positive(l)))
        .collect();
    let mut rows = Vec::new();
    for g in groups {
        let mine: Vec<&ScoredWindow> = windows
            .iter()
            .filter(|w| w.label.is_some_and(is_positive) && w.group.as_deref() == Some(g.as_str()))
            .collect();
        let report = if mine.len() <= 1 {
            None
        } else {
            let subset: Vec<ScoredWindow> = mine
                .iter()
                .chain(&negatives)
                .map(|w| (*w).clone())
                .collect();
            Some(evaluate(&subset)?)
        };
        rows.push(GroupRow {
            group: g,
            anomalous_windows: mine.len(),
            report,
        });
    }
    let reportable: Vec<&MetricsReport> = rows.iter().filter_map(|r| r.report.as_ref()).collect();
    Ok(StratifiedReport {
        average: MetricsReport::average(&reportable),
        rows,
    })
}
